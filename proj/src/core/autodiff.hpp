// SPDX-License-Identifier: Apache-2.0
//
// A small reverse-mode differentiation tape over dense matrices. Every op
// evaluates eagerly and, when the tape records, pushes a closure that
// propagates the output adjoint back to its inputs. Parameter leaves are
// bound to a slice of an external row-major gradient buffer; backward()
// accumulates into those slices once the sweep is complete.
#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace unlearnlab::ad {

using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  // Constant input; never receives a gradient.
  Var constant(Mat value);

  // Parameter leaf copied from a row-major slice. When grad_sink is non-null
  // the slice's adjoint is added to it by backward().
  Var param(const double* data, std::size_t rows, std::size_t cols, double* grad_sink);

  const Mat& value(Var v) const { return nodes_[v.id].value; }
  double scalar(Var v) const { return nodes_[v.id].value(0, 0); }
  const Mat& grad(Var v) const { return nodes_[v.id].grad; }

  // Seeds d(root)/d(root) = 1 and sweeps every recorded node in reverse.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

  // Op plumbing; used by the free functions below.
  Var push(Mat value, std::initializer_list<Var> inputs, std::function<void(Tape&, std::size_t)> back);
  Mat& grad_mut(Var v);
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    double* sink = nullptr;
    std::function<void(Tape&, std::size_t)> back;
  };

  bool record_;
  std::vector<Node> nodes_;
};

Var matmul(Tape& t, Var a, Var b);     // a * b
Var matmul_nt(Tape& t, Var a, Var b);  // a * b^T
Var add(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
Var add_row(Tape& t, Var a, Var row);  // broadcast 1xC bias over rows
Var gather_rows(Tape& t, Var table, std::span<const int> ids);
Var select_rows(Tape& t, Var a, std::span<const int> rows);
Var concat_rows(Tape& t, Var a, Var b);
// Reads a (rows*cols)-element vector as a rows x cols matrix, row-major.
Var unflatten_rows(Tape& t, Var column, std::size_t rows, std::size_t cols);
Var rms_norm(Tape& t, Var x, Var gain, double eps = 1e-6);
Var gelu(Tape& t, Var x);
// Multi-head causal self-attention core: softmax(QK^T / sqrt(dh) + mask) V,
// heads laid out as contiguous column blocks.
Var causal_attention(Tape& t, Var q, Var k, Var v, std::size_t heads);
// Sum over rows of log_softmax(logits)[row, targets[row]]. Returns 1x1.
Var pick_logprob(Tape& t, Var logits, std::span<const int> targets);
// Sum over rows of <weights[row], log_softmax(logits)[row]>. Returns 1x1.
Var soft_logprob(Tape& t, Var logits, const Mat& weights);
Var weighted_sum(Tape& t, std::span<const Var> scalars, std::span<const double> weights);

// Row-wise log-softmax of a matrix, exposed for inference paths.
Mat log_softmax_rows(const Mat& logits);

}  // namespace unlearnlab::ad
