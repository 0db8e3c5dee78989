// SPDX-License-Identifier: Apache-2.0
#include "optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace unlearnlab {

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) fail(ErrorCode::kInvalidConfig, "learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    fail(ErrorCode::kInvalidConfig, "betas must lie in [0, 1)");
  if (!(eps > 0.0)) fail(ErrorCode::kInvalidConfig, "eps must be positive");
  if (weight_decay < 0.0) fail(ErrorCode::kInvalidConfig, "weight_decay must be non-negative");
  if (batch_size == 0) fail(ErrorCode::kInvalidConfig, "batch_size must be at least 1");
  if (grad_clip < 0.0) fail(ErrorCode::kInvalidConfig, "grad_clip must be non-negative");
}

void adamw_step(std::span<double> params, std::span<const double> grads, OptimizerState& state,
                const OptimizerConfig& cfg) {
  const std::size_t n = params.size();
  if (grads.size() != n || state.m.size() != n || state.v.size() != n)
    fail(ErrorCode::kInvalidBatch, "optimizer shapes disagree");
  for (double g : grads)
    if (!std::isfinite(g)) fail(ErrorCode::kNumeric, "non-finite gradient; step aborted");
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= cfg.learning_rate * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * params[i]);
  }
}

double clip_grad_norm(std::span<double> grads, double max_norm) {
  double ss = 0.0;
  for (double g : grads) ss += g * g;
  const double norm = std::sqrt(ss);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (double& g : grads) g *= s;
  }
  return norm;
}

std::string LossTrace::to_csv() const {
  std::vector<std::string> names;
  for (const StepRecord& s : steps)
    for (const auto& [k, v] : s.components)
      if (std::find(names.begin(), names.end(), k) == names.end()) names.push_back(k);
  std::string out = "step,loss";
  for (const std::string& k : names) out += "," + k;
  out += "\n";
  char buf[64];
  for (const StepRecord& s : steps) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g", s.step, s.loss);
    out += buf;
    for (const std::string& k : names) {
      const auto it = std::find_if(s.components.begin(), s.components.end(), [&](const auto& c) { return c.first == k; });
      out += ",";
      if (it != s.components.end()) {
        std::snprintf(buf, sizeof buf, "%.17g", it->second);
        out += buf;
      }
    }
    out += "\n";
  }
  return out;
}

EpochSampler::EpochSampler(std::size_t n, std::uint64_t seed) : n_(n), rng_(seed), pos_(n) {
  order_.resize(n);
  for (std::size_t i = 0; i < n; ++i) order_[i] = i;
}

std::vector<std::size_t> EpochSampler::next(std::size_t count) {
  std::vector<std::size_t> out;
  out.reserve(count);
  while (out.size() < count) {
    if (pos_ == n_) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
    }
    out.push_back(order_[pos_++]);
  }
  return out;
}

LossTrace train(SeqModel& model, const BatchLossFn& loss_fn, std::size_t data_size, const OptimizerConfig& cfg,
                const StepHook& hook) {
  cfg.validate();
  if (data_size == 0) fail(ErrorCode::kUndefinedInput, "training data is empty");
  LossTrace trace;
  EpochSampler sampler(data_size, derive_seed(cfg.seed, 0x5A3));
  Rng step_rng(derive_seed(cfg.seed, 0x57E));
  OptimizerState state = OptimizerState::zeros(model.layout().total());
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const std::vector<std::size_t> idx = sampler.next(cfg.batch_size);
    try {
      LossEval ev = loss_fn(model, idx, step, step_rng);
      if (!std::isfinite(ev.loss)) fail(ErrorCode::kNumeric, "non-finite loss at step " + std::to_string(step));
      if (cfg.grad_clip > 0.0) clip_grad_norm(ev.grad, cfg.grad_clip);
      adamw_step(model.params(), ev.grad, state, cfg);
      trace.steps.push_back({step, ev.loss, std::move(ev.components)});
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNumeric) throw;
      trace.aborted = true;
      trace.error = e.what();
      break;
    }
    if (hook) hook(trace.steps.back(), model);
  }
  return trace;
}

}  // namespace unlearnlab
