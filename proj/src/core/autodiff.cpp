// SPDX-License-Identifier: Apache-2.0
#include "autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

namespace unlearnlab::ad {

Var Tape::constant(Mat value) {
  nodes_.push_back(Node{std::move(value), Mat(), false, nullptr, nullptr});
  return Var{nodes_.size() - 1};
}

Var Tape::param(const double* data, std::size_t rows, std::size_t cols, double* grad_sink) {
  Mat value = Eigen::Map<const RowMat>(data, static_cast<Eigen::Index>(rows),
                                       static_cast<Eigen::Index>(cols));
  const bool wants = record_ && grad_sink != nullptr;
  nodes_.push_back(Node{std::move(value), Mat(), wants, wants ? grad_sink : nullptr, nullptr});
  return Var{nodes_.size() - 1};
}

Var Tape::push(Mat value, std::initializer_list<Var> inputs,
               std::function<void(Tape&, std::size_t)> back) {
  bool wants = false;
  if (record_) {
    for (Var in : inputs) wants = wants || nodes_[in.id].needs_grad;
  }
  nodes_.push_back(Node{std::move(value), Mat(), wants, nullptr, wants ? std::move(back) : nullptr});
  return Var{nodes_.size() - 1};
}

Mat& Tape::grad_mut(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var root) {
  if (!nodes_[root.id].needs_grad) return;
  grad_mut(root).setOnes();
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.back) n.back(*this, i);
  }
  for (Node& n : nodes_) {
    if (n.sink == nullptr || n.grad.size() == 0) continue;
    Eigen::Map<RowMat> sink(n.sink, n.grad.rows(), n.grad.cols());
    sink += n.grad;
  }
}

namespace {

const Mat& G(Tape& t, std::size_t id) { return t.grad(Var{id}); }

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
  Mat out = t.value(a) * t.value(b);
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Mat& g = G(tp, self);
    if (tp.needs_grad(a)) tp.grad_mut(a).noalias() += g * tp.value(b).transpose();
    if (tp.needs_grad(b)) tp.grad_mut(b).noalias() += tp.value(a).transpose() * g;
  });
}

Var matmul_nt(Tape& t, Var a, Var b) {
  Mat out = t.value(a) * t.value(b).transpose();
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Mat& g = G(tp, self);
    if (tp.needs_grad(a)) tp.grad_mut(a).noalias() += g * tp.value(b);
    if (tp.needs_grad(b)) tp.grad_mut(b).noalias() += g.transpose() * tp.value(a);
  });
}

Var add(Tape& t, Var a, Var b) {
  Mat out = t.value(a) + t.value(b);
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Mat& g = G(tp, self);
    if (tp.needs_grad(a)) tp.grad_mut(a) += g;
    if (tp.needs_grad(b)) tp.grad_mut(b) += g;
  });
}

Var scale(Tape& t, Var a, double s) {
  Mat out = t.value(a) * s;
  return t.push(std::move(out), {a}, [a, s](Tape& tp, std::size_t self) {
    tp.grad_mut(a) += s * G(tp, self);
  });
}

Var add_row(Tape& t, Var a, Var row) {
  Mat out = t.value(a).rowwise() + t.value(row).row(0);
  return t.push(std::move(out), {a, row}, [a, row](Tape& tp, std::size_t self) {
    const Mat& g = G(tp, self);
    if (tp.needs_grad(a)) tp.grad_mut(a) += g;
    if (tp.needs_grad(row)) tp.grad_mut(row) += g.colwise().sum();
  });
}

Var gather_rows(Tape& t, Var table, std::span<const int> ids) {
  const Mat& tab = t.value(table);
  Mat out(static_cast<Eigen::Index>(ids.size()), tab.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = tab.row(ids[i]);
  std::vector<int> idx(ids.begin(), ids.end());
  return t.push(std::move(out), {table}, [table, idx = std::move(idx)](Tape& tp, std::size_t self) {
    const Mat& g = G(tp, self);
    Mat& dt = tp.grad_mut(table);
    for (std::size_t i = 0; i < idx.size(); ++i) dt.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var select_rows(Tape& t, Var a, std::span<const int> rows) {
  return gather_rows(t, a, rows);
}

Var concat_rows(Tape& t, Var a, Var b) {
  const Mat& va = t.value(a);
  const Mat& vb = t.value(b);
  Mat out(va.rows() + vb.rows(), va.cols());
  out.topRows(va.rows()) = va;
  out.bottomRows(vb.rows()) = vb;
  const Eigen::Index ra = va.rows();
  const Eigen::Index rb = vb.rows();
  return t.push(std::move(out), {a, b}, [a, b, ra, rb](Tape& tp, std::size_t self) {
    const Mat& g = G(tp, self);
    if (tp.needs_grad(a)) tp.grad_mut(a) += g.topRows(ra);
    if (tp.needs_grad(b)) tp.grad_mut(b) += g.bottomRows(rb);
  });
}

Var unflatten_rows(Tape& t, Var column, std::size_t rows, std::size_t cols) {
  // Works for both 1xN and Nx1 inputs: their storage order is the flat order.
  const double* c = t.value(column).data();
  Mat out(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = c[i * cols + j];
  return t.push(std::move(out), {column}, [column, rows, cols](Tape& tp, std::size_t self) {
    const Mat& g = G(tp, self);
    double* dc = tp.grad_mut(column).data();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j)
        dc[i * cols + j] += g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  });
}

Var rms_norm(Tape& t, Var x, Var gain, double eps) {
  const Mat& vx = t.value(x);
  const Mat& vg = t.value(gain);
  const Eigen::Index n = vx.rows();
  const double d = static_cast<double>(vx.cols());
  Eigen::VectorXd inv_rms(n);
  Mat xhat(vx.rows(), vx.cols());
  for (Eigen::Index r = 0; r < n; ++r) {
    inv_rms(r) = 1.0 / std::sqrt(vx.row(r).squaredNorm() / d + eps);
    xhat.row(r) = vx.row(r) * inv_rms(r);
  }
  Mat out = xhat.array().rowwise() * vg.row(0).array();
  return t.push(std::move(out), {x, gain},
                [x, gain, inv_rms, xhat, d](Tape& tp, std::size_t self) {
                  const Mat& g = G(tp, self);
                  if (tp.needs_grad(gain))
                    tp.grad_mut(gain) += (g.array() * xhat.array()).colwise().sum().matrix();
                  if (tp.needs_grad(x)) {
                    Mat dxhat = g.array().rowwise() * tp.value(gain).row(0).array();
                    Mat& dx = tp.grad_mut(x);
                    for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                      const double proj = dxhat.row(r).dot(xhat.row(r)) / d;
                      dx.row(r) += (dxhat.row(r) - proj * xhat.row(r)) * inv_rms(r);
                    }
                  }
                });
}

Var gelu(Tape& t, Var x) {
  const Mat& vx = t.value(x);
  Mat out = vx.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); });
  return t.push(std::move(out), {x}, [x](Tape& tp, std::size_t self) {
    const Mat& g = G(tp, self);
    Mat deriv = tp.value(x).unaryExpr([](double v) {
      const double cdf = 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
      const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
      return cdf + v * pdf;
    });
    tp.grad_mut(x) += (g.array() * deriv.array()).matrix();
  });
}

Var causal_attention(Tape& t, Var q, Var k, Var v, std::size_t heads) {
  const Mat& vq = t.value(q);
  const Mat& vk = t.value(k);
  const Mat& vv = t.value(v);
  const Eigen::Index n = vq.rows();
  const Eigen::Index dh = vq.cols() / static_cast<Eigen::Index>(heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Mat> probs(heads);
  Mat out(n, vq.cols());
  for (std::size_t h = 0; h < heads; ++h) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
    Mat s = vq.middleCols(c0, dh) * vk.middleCols(c0, dh).transpose() * inv_sqrt;
    Mat p = Mat::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mx = s.row(i).head(i + 1).maxCoeff();
      double z = 0.0;
      for (Eigen::Index j = 0; j <= i; ++j) {
        p(i, j) = std::exp(s(i, j) - mx);
        z += p(i, j);
      }
      p.row(i).head(i + 1) /= z;
    }
    out.middleCols(c0, dh) = p * vv.middleCols(c0, dh);
    probs[h] = std::move(p);
  }
  return t.push(std::move(out), {q, k, v},
                [q, k, v, probs = std::move(probs), dh, inv_sqrt](Tape& tp, std::size_t self) {
                  const Mat& g = G(tp, self);
                  const Mat& vq2 = tp.value(q);
                  const Mat& vk2 = tp.value(k);
                  const Mat& vv2 = tp.value(v);
                  for (std::size_t h = 0; h < probs.size(); ++h) {
                    const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
                    const Mat& p = probs[h];
                    const Mat go = g.middleCols(c0, dh);
                    if (tp.needs_grad(v)) tp.grad_mut(v).middleCols(c0, dh).noalias() += p.transpose() * go;
                    Mat dp = go * vv2.middleCols(c0, dh).transpose();
                    Eigen::VectorXd rs = (dp.array() * p.array()).rowwise().sum();
                    Mat ds = (p.array() * (dp.colwise() - rs).array()).matrix() * inv_sqrt;
                    if (tp.needs_grad(q)) tp.grad_mut(q).middleCols(c0, dh).noalias() += ds * vk2.middleCols(c0, dh);
                    if (tp.needs_grad(k)) tp.grad_mut(k).middleCols(c0, dh).noalias() += ds.transpose() * vq2.middleCols(c0, dh);
                  }
                });
}

Mat log_softmax_rows(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

Var pick_logprob(Tape& t, Var logits, std::span<const int> targets) {
  Mat lsm = log_softmax_rows(t.value(logits));
  double total = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r) total += lsm(static_cast<Eigen::Index>(r), targets[r]);
  Mat out(1, 1);
  out(0, 0) = total;
  std::vector<int> tg(targets.begin(), targets.end());
  return t.push(std::move(out), {logits}, [logits, lsm, tg = std::move(tg)](Tape& tp, std::size_t self) {
    const double g = G(tp, self)(0, 0);
    Mat& dz = tp.grad_mut(logits);
    for (std::size_t r = 0; r < tg.size(); ++r) {
      const auto row = static_cast<Eigen::Index>(r);
      dz.row(row) -= g * lsm.row(row).array().exp().matrix();
      dz(row, tg[r]) += g;
    }
  });
}

Var soft_logprob(Tape& t, Var logits, const Mat& weights) {
  Mat lsm = log_softmax_rows(t.value(logits));
  Mat out(1, 1);
  out(0, 0) = (lsm.array() * weights.array()).sum();
  return t.push(std::move(out), {logits}, [logits, lsm, weights](Tape& tp, std::size_t self) {
    const double g = G(tp, self)(0, 0);
    Mat& dz = tp.grad_mut(logits);
    for (Eigen::Index r = 0; r < lsm.rows(); ++r) {
      const double mass = weights.row(r).sum();
      dz.row(r) += g * (weights.row(r) - mass * lsm.row(r).array().exp().matrix());
    }
  });
}

Var weighted_sum(Tape& t, std::span<const Var> scalars, std::span<const double> weights) {
  double total = 0.0;
  for (std::size_t i = 0; i < scalars.size(); ++i) total += weights[i] * t.scalar(scalars[i]);
  Mat out(1, 1);
  out(0, 0) = total;
  // Inputs are registered one by one so the node knows whether any needs grad.
  bool wants = false;
  for (Var s : scalars) wants = wants || t.needs_grad(s);
  std::vector<Var> in(scalars.begin(), scalars.end());
  std::vector<double> w(weights.begin(), weights.end());
  Var anchor = wants ? *std::find_if(in.begin(), in.end(), [&](Var s) { return t.needs_grad(s); })
                     : (in.empty() ? t.constant(Mat::Zero(1, 1)) : in.front());
  return t.push(std::move(out), {anchor}, [in = std::move(in), w = std::move(w)](Tape& tp, std::size_t self) {
    const double g = G(tp, self)(0, 0);
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (tp.needs_grad(in[i])) tp.grad_mut(in[i])(0, 0) += g * w[i];
    }
  });
}

}  // namespace unlearnlab::ad
