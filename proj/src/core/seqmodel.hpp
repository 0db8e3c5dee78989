// SPDX-License-Identifier: Apache-2.0
//
// Image-conditioned causal token model. The image vector is projected into
// `prefix_len` embeddings that precede the prompt; `layers` pre-norm blocks
// (causal multi-head attention + GELU MLP) mix the sequence; a final RMS norm
// and output projection produce next-token logits. All parameters live in one
// flat row-major vector described by a named layout.
#pragma once

#include "autodiff.hpp"
#include "common.hpp"

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace unlearnlab {

struct ModelHyper {
  std::size_t vocab_size = 0;
  std::size_t d_model = 32;
  std::size_t prefix_len = 2;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t mlp_hidden = 64;
  std::size_t max_positions = 48;
  std::size_t image_dim = 24;
  std::size_t adapter_rank = 0;  // 0 = no adapter factors in the layout
  double adapter_alpha = 8.0;
  Token pad = 0;
  Token bos = 1;
  Token eos = 2;

  void validate() const;
  bool operator==(const ModelHyper&) const = default;
};

struct ParamBlock {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const ParamBlock&) const = default;
};

class ParamLayout {
 public:
  static ParamLayout for_hyper(const ModelHyper& h);

  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  const ParamBlock& at(const std::string& name) const;
  bool has(const std::string& name) const;
  std::size_t total() const { return total_; }
  bool operator==(const ParamLayout&) const = default;

 private:
  void add(std::string name, std::size_t rows, std::size_t cols);

  std::vector<ParamBlock> blocks_;
  std::size_t total_ = 0;
};

class SeqModel {
 public:
  SeqModel(const ModelHyper& hyper, std::uint64_t seed);

  const ModelHyper& hyper() const { return hyper_; }
  const ParamLayout& layout() const { return layout_; }
  std::uint64_t seed() const { return seed_; }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::span<double> block(const std::string& name);
  std::span<const double> block(const std::string& name) const;

  bool adapter_enabled() const { return adapter_enabled_; }
  void set_adapter_enabled(bool on);
  // When set, gradients of non-adapter parameters are zeroed.
  bool adapter_only() const { return adapter_only_; }
  void set_adapter_only(bool on) { adapter_only_ = on; }

 private:
  ModelHyper hyper_;
  ParamLayout layout_;
  std::uint64_t seed_;
  std::vector<double> params_;
  bool adapter_enabled_ = false;
  bool adapter_only_ = false;
};

// Read-only copy of a model. There is no way to get a mutable reference back,
// so optimizer steps cannot reach it.
class FrozenModel {
 public:
  explicit FrozenModel(const SeqModel& m) : model_(m) {}
  const SeqModel& get() const { return model_; }

 private:
  SeqModel model_;
};

SeqModel clone(const SeqModel& model);
FrozenModel clone_frozen(const SeqModel& model);

// Copy of `base` with fresh low-rank adapter factors (B = 0, so outputs are
// unchanged), the adapter enabled and base parameters excluded from gradients.
SeqModel attach_adapter(const SeqModel& base, std::size_t rank, double alpha, std::uint64_t seed);

// Padded batch. Row j feeds inputs[j] (prompt, BOS, target without its last
// token) after the image prefix; targets[j][p] is the token predicted from
// input position p and mask[j][p] marks response positions.
struct SeqBatch {
  std::vector<std::vector<double>> images;
  std::vector<Tokens> inputs;
  std::vector<Tokens> targets;
  std::vector<std::vector<std::uint8_t>> mask;

  std::size_t size() const { return inputs.size(); }
  void validate(const ModelHyper& h) const;
};

struct SeqRow {
  std::span<const double> image;
  Tokens prompt;
  Tokens target;
};

SeqBatch make_batch(std::span<const SeqRow> rows, const ModelHyper& h);

// Exact sum of masked target log-probabilities.
double forward_logprob(const SeqModel& model, std::span<const double> image, const Tokens& prompt,
                       const Tokens& target);

std::vector<double> batch_logprob(const SeqModel& model, const SeqBatch& batch);

struct LogprobGrad {
  std::vector<double> logprobs;
  std::vector<double> grad;  // same layout as params
};

// Gradient of sum_j weights[j] * logprob_j.
LogprobGrad weighted_logprob_grad(const SeqModel& model, const SeqBatch& batch,
                                  std::span<const double> weights);

// Gradient of (1/N) sum_j sign_j * logprob_j.
std::vector<double> grad_logprob(const SeqModel& model, const SeqBatch& batch, std::span<const int> sign_mask);

// Soft-target objective over unpadded rows sharing one image and prompt:
// sum_r sum_p sum_v weights[r](p, v) * log p(v | image, prompt, BOS, rows[r][:p]).
// weights[r] has rows[r].size() + 1 rows. Any token id may appear in rows,
// including PAD, which makes this usable for exhaustive enumeration.
struct SoftGrad {
  std::vector<double> values;  // per-row objective
  std::vector<double> grad;    // gradient of the sum over rows
};
SoftGrad soft_logprob_grad(const SeqModel& model, std::span<const double> image, const Tokens& prompt,
                           const std::vector<Tokens>& rows, const std::vector<ad::Mat>& weights);

// Logits for every token position of `inputs` (prefix rows excluded).
ad::Mat token_logits(const SeqModel& model, std::span<const double> image, const Tokens& inputs);

// Next-token log-probabilities after prompt + BOS + prefix_response.
std::vector<double> next_token_logprobs(const SeqModel& model, std::span<const double> image,
                                        const Tokens& prompt, const Tokens& response_prefix);

// Ancestral sampling; stops after EOS (kept in the output) or max_len tokens.
Tokens sample(const SeqModel& model, std::span<const double> image, const Tokens& prompt, double temperature,
              std::size_t max_len, Rng& rng);

// Argmax decoding with lowest-index tie breaking.
Tokens greedy_decode(const SeqModel& model, std::span<const double> image, const Tokens& prompt,
                     std::size_t max_len);

// Checkpoint: magic, format version, JSON header {hyper, layout, seed, meta},
// then the flat parameter vector as little-endian float64.
void save_checkpoint(const SeqModel& model, const std::string& path,
                     const std::map<std::string, std::string>& meta = {});
SeqModel load_checkpoint(const std::string& path);
SeqModel load_checkpoint(const std::string& path, const ModelHyper& expected);
std::map<std::string, std::string> checkpoint_meta(const std::string& path);

}  // namespace unlearnlab
