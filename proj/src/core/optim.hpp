// SPDX-License-Identifier: Apache-2.0
//
// AdamW with bias correction and decoupled weight decay, plus a fixed-budget
// minibatch loop shared by base training and every unlearning method.
#pragma once

#include "common.hpp"
#include "seqmodel.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace unlearnlab {

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::size_t batch_size = 8;
  std::size_t steps = 30;
  double grad_clip = 0.0;  // max global L2 norm; 0 disables clipping
  std::uint64_t seed = 0;

  void validate() const;
};

struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;

  static OptimizerState zeros(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0}; }
};

void adamw_step(std::span<double> params, std::span<const double> grads, OptimizerState& state,
                const OptimizerConfig& cfg);

// Rescales grads in place so their L2 norm is at most max_norm. Returns the
// norm before clipping.
double clip_grad_norm(std::span<double> grads, double max_norm);

struct LossEval {
  double loss = 0.0;
  std::vector<double> grad;
  std::vector<std::pair<std::string, double>> components;
};

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  std::vector<std::pair<std::string, double>> components;
};

struct LossTrace {
  std::vector<StepRecord> steps;
  bool aborted = false;
  std::string error;

  std::string to_csv() const;
};

// Loss over the dataset items named by `indices`; rng is the loop's stream and
// may be used for per-step draws.
using BatchLossFn = std::function<LossEval(const SeqModel&, std::span<const std::size_t> indices, std::size_t step, Rng&)>;
using StepHook = std::function<void(const StepRecord&, const SeqModel&)>;

// Yields an endless stream of dataset indices, reshuffled every epoch.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, std::uint64_t seed);
  std::vector<std::size_t> next(std::size_t count);

 private:
  std::size_t n_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_;
};

// Runs cfg.steps updates. A numeric failure inside loss_fn stops the run and
// is reported through trace.aborted / trace.error; the model keeps the last
// good parameters.
LossTrace train(SeqModel& model, const BatchLossFn& loss_fn, std::size_t data_size, const OptimizerConfig& cfg,
                const StepHook& hook = {});

}  // namespace unlearnlab
