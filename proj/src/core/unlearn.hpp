// SPDX-License-Identifier: Apache-2.0
//
// Unlearning objectives. Every loss is returned as a value to minimize with
// its gradient in parameter layout. Log-probabilities are sequence-level sums
// over response tokens, and batch losses are means over rows.
#pragma once

#include "optim.hpp"
#include "seqmodel.hpp"
#include "world.hpp"

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace unlearnlab {

enum class Method { kPubg, kGa, kNpo, kRandom, kReject, kBgOnly };

const char* method_name(Method m);
Method method_from_name(const std::string& name);

// A response drawn from the frozen original model prompted with q + c.
struct ReferenceSample {
  std::size_t entity_id = 0;
  std::size_t image_index = 0;
  Tokens o_star;  // EOS-terminated
  double logprob_under_frozen = 0.0;
};

struct ReferenceOptions {
  std::size_t samples_per_image = 4;
  double temperature = 1.0;
  std::size_t max_len = 24;
  std::uint64_t seed = 0;
  double max_leak_fraction = 0.5;
};

// Draws samples for every forget entity's seen image. Fails with a base-model
// error when more than max_leak_fraction of the draws reveal the entity.
std::vector<ReferenceSample> build_reference_set(const FrozenModel& frozen, const EntityWorld& world,
                                                 const ReferenceOptions& opts);

// One record per sample, preceded by a provenance record when one is given.
std::string reference_set_to_jsonl(const std::vector<ReferenceSample>& refs,
                                   const std::map<std::string, std::string>& provenance = {});
std::vector<ReferenceSample> reference_set_from_jsonl(const std::string& text);

// One forget-side training item: image of a forget entity with the response
// chosen for this step.
struct ForgetItem {
  std::size_t entity_id = 0;
  std::size_t image_index = 0;
  Tokens response;
};

LossEval loss_ga(const SeqModel& model, const EntityWorld& world, const std::vector<ForgetItem>& batch);
LossEval loss_bg(const SeqModel& model, const EntityWorld& world, const std::vector<ReferenceSample>& refs);
// Pairs batch[j] with refs[j]; sizes and entities must agree.
LossEval loss_pubg(const SeqModel& model, const EntityWorld& world, const std::vector<ForgetItem>& batch,
                   const std::vector<ReferenceSample>& refs);
LossEval loss_retain(const SeqModel& model, const EntityWorld& world, const std::vector<ForgetItem>& batch);
LossEval loss_npo(const SeqModel& model, const FrozenModel& frozen, const EntityWorld& world,
                  const std::vector<ForgetItem>& batch, double beta);
// GA on the forget responses plus NLL of retain responses on the same images.
LossEval loss_random(const SeqModel& model, const EntityWorld& world, const std::vector<ForgetItem>& batch,
                     const std::vector<Tokens>& retain_targets);
LossEval loss_reject(const SeqModel& model, const EntityWorld& world, const std::vector<ForgetItem>& batch,
                     const Tokens& templ);

struct UnlearnTask {
  Method method = Method::kPubg;
  OptimizerConfig optimizer;
  double npo_beta = 0.1;
  double retain_weight = 1.0;
  bool use_retain = true;
  bool resample_per_step = false;
  std::size_t adapter_rank = 0;  // 0 = update every base parameter
  double adapter_alpha = 16.0;
  ReferenceOptions reference;
  std::vector<ReferenceSample> references;  // required by PUBG and BG-only
  std::optional<Tokens> refusal_template;   // defaults to the world's refusal + EOS

  void validate() const;
};

struct UnlearnResult {
  SeqModel model;
  LossTrace trace;
};

UnlearnResult run_unlearning(const UnlearnTask& task, const SeqModel& base, const EntityWorld& world);

struct KlVerifyConfig {
  std::size_t vocab_size = 6;
  std::size_t max_len = 3;
  std::uint64_t seed = 1;
  std::size_t mc_samples = 100000;
  bool same_model = false;  // p_theta == p_theta*
};

struct KlVerifyReport {
  std::size_t sequences = 0;
  double reference_mass = 0.0;  // total probability of the enumerated support
  double kl = 0.0;
  double expected_nll = 0.0;
  double entropy = 0.0;
  double max_grad_diff = 0.0;
  double max_grad_abs = 0.0;
  double mc_mean = 0.0;
  double mc_stderr = 0.0;
  double mc_dir_mean = 0.0;
  double mc_dir_stderr = 0.0;
  double exact_dir = 0.0;
  bool grad_ok = false;
  bool entropy_ok = false;
  bool mc_ok = false;

  bool ok() const { return grad_ok && entropy_ok && mc_ok; }
};

// Exact check, by enumeration of every output sequence, that the gradient of
// KL(p* || p_theta) equals the gradient of E_{o ~ p*}[-log p_theta(o)], plus a
// Monte-Carlo check of the sampled estimator.
KlVerifyReport verify_kl_rewrite(const KlVerifyConfig& cfg);

}  // namespace unlearnlab
