// SPDX-License-Identifier: Apache-2.0
#include "seqmodel.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace unlearnlab {

using ad::Mat;
using ad::Tape;
using ad::Var;

void ModelHyper::validate() const {
  if (vocab_size < 3) fail(ErrorCode::kInvalidConfig, "vocab_size too small");
  if (d_model == 0 || heads == 0 || d_model % heads != 0)
    fail(ErrorCode::kInvalidConfig, "d_model must be a positive multiple of heads");
  if (prefix_len == 0) fail(ErrorCode::kInvalidConfig, "prefix_len must be positive");
  if (mlp_hidden == 0 || image_dim == 0) fail(ErrorCode::kInvalidConfig, "empty layer dimension");
  if (max_positions <= prefix_len + 1) fail(ErrorCode::kInvalidConfig, "max_positions too small");
  for (Token t : {pad, bos, eos})
    if (t < 0 || static_cast<std::size_t>(t) >= vocab_size)
      fail(ErrorCode::kInvalidConfig, "special token id outside the vocabulary");
}

void ParamLayout::add(std::string name, std::size_t rows, std::size_t cols) {
  blocks_.push_back({std::move(name), rows, cols, total_});
  total_ += rows * cols;
}

ParamLayout ParamLayout::for_hyper(const ModelHyper& h) {
  ParamLayout l;
  const std::size_t d = h.d_model;
  l.add("tok_emb", h.vocab_size, d);
  l.add("pos_emb", h.max_positions, d);
  l.add("img_proj", h.prefix_len * d, h.image_dim);
  l.add("img_bias", 1, h.prefix_len * d);
  for (std::size_t i = 0; i < h.layers; ++i) {
    const std::string p = "l" + std::to_string(i) + ".";
    l.add(p + "norm1", 1, d);
    for (const char* w : {"wq", "wk", "wv", "wo"}) l.add(p + w, d, d);
    l.add(p + "norm2", 1, d);
    l.add(p + "w1", h.mlp_hidden, d);
    l.add(p + "b1", 1, h.mlp_hidden);
    l.add(p + "w2", d, h.mlp_hidden);
    l.add(p + "b2", 1, d);
  }
  l.add("final_norm", 1, d);
  l.add("out_w", h.vocab_size, d);
  l.add("out_b", 1, h.vocab_size);
  if (h.adapter_rank > 0) {
    for (std::size_t i = 0; i < h.layers; ++i) {
      for (const char* w : {"wq", "wk", "wv", "wo"}) {
        const std::string p = "l" + std::to_string(i) + "." + w;
        l.add(p + ".lora_a", h.adapter_rank, d);
        l.add(p + ".lora_b", d, h.adapter_rank);
      }
    }
  }
  return l;
}

const ParamBlock& ParamLayout::at(const std::string& name) const {
  for (const ParamBlock& b : blocks_)
    if (b.name == name) return b;
  fail(ErrorCode::kLayoutMismatch, "no parameter block named '" + name + "'");
}

bool ParamLayout::has(const std::string& name) const {
  return std::any_of(blocks_.begin(), blocks_.end(), [&](const ParamBlock& b) { return b.name == name; });
}

SeqModel::SeqModel(const ModelHyper& hyper, std::uint64_t seed)
    : hyper_(hyper), layout_((hyper.validate(), ParamLayout::for_hyper(hyper))), seed_(seed),
      params_(layout_.total(), 0.0) {
  Rng rng(derive_seed(seed, 0x5E9));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double d = static_cast<double>(hyper_.d_model);
  for (const ParamBlock& b : layout_.blocks()) {
    double std_dev = 0.0;
    double fill = 0.0;
    const std::string& n = b.name;
    auto ends_with = [&n](const char* s) {
      const std::size_t k = std::strlen(s);
      return n.size() >= k && n.compare(n.size() - k, k, s) == 0;
    };
    if (n == "tok_emb" || n == "pos_emb") std_dev = 0.5;
    else if (n == "img_proj") std_dev = 1.0;
    else if (ends_with("norm1") || ends_with("norm2") || n == "final_norm") fill = 1.0;
    else if (ends_with("lora_a")) std_dev = 1.0 / std::sqrt(d);
    else if (ends_with("lora_b")) std_dev = 0.0;
    else if (ends_with(".w2")) std_dev = 0.5 / std::sqrt(static_cast<double>(hyper_.mlp_hidden));
    else if (ends_with(".wq") || ends_with(".wk") || ends_with(".wv") || ends_with(".wo") || ends_with(".w1") ||
             n == "out_w")
      std_dev = 1.0 / std::sqrt(d);
    for (std::size_t i = 0; i < b.size(); ++i)
      params_[b.offset + i] = std_dev > 0.0 ? std_dev * normal(rng) : fill;
  }
}

std::span<double> SeqModel::block(const std::string& name) {
  const ParamBlock& b = layout_.at(name);
  return std::span<double>(params_).subspan(b.offset, b.size());
}

std::span<const double> SeqModel::block(const std::string& name) const {
  const ParamBlock& b = layout_.at(name);
  return std::span<const double>(params_).subspan(b.offset, b.size());
}

void SeqModel::set_adapter_enabled(bool on) {
  if (on && hyper_.adapter_rank == 0) fail(ErrorCode::kInvalidConfig, "model has no adapter factors");
  adapter_enabled_ = on;
}

SeqModel clone(const SeqModel& model) { return model; }

FrozenModel clone_frozen(const SeqModel& model) { return FrozenModel(model); }

SeqModel attach_adapter(const SeqModel& base, std::size_t rank, double alpha, std::uint64_t seed) {
  if (rank == 0) fail(ErrorCode::kInvalidConfig, "adapter rank must be positive");
  if (base.hyper().adapter_rank != 0) fail(ErrorCode::kInvalidConfig, "model already has adapter factors");
  ModelHyper h = base.hyper();
  h.adapter_rank = rank;
  h.adapter_alpha = alpha;
  SeqModel m(h, seed);
  for (const ParamBlock& b : base.layout().blocks()) {
    const auto src = base.block(b.name);
    std::copy(src.begin(), src.end(), m.block(b.name).begin());
  }
  m.set_adapter_enabled(true);
  m.set_adapter_only(true);
  return m;
}

namespace {

struct LayerVars {
  Var norm1, wq, wk, wv, wo, norm2, w1, b1, w2, b2;
};

struct ParamVars {
  Var tok_emb, pos_emb, img_proj, img_bias, final_norm, out_w, out_b;
  std::vector<LayerVars> layers;
};

ParamVars bind_params(Tape& tape, const SeqModel& m, double* grad) {
  const ParamLayout& l = m.layout();
  const bool base_grad = grad != nullptr && !(m.adapter_only() && m.adapter_enabled());
  auto bind = [&](const std::string& name, bool trainable) {
    const ParamBlock& b = l.at(name);
    return tape.param(m.params().data() + b.offset, b.rows, b.cols,
                      trainable && grad != nullptr ? grad + b.offset : nullptr);
  };
  auto base = [&](const std::string& name) { return bind(name, base_grad); };

  ParamVars pv;
  pv.tok_emb = base("tok_emb");
  pv.pos_emb = base("pos_emb");
  pv.img_proj = base("img_proj");
  pv.img_bias = base("img_bias");
  const double adapter_scale =
      m.hyper().adapter_rank > 0 ? m.hyper().adapter_alpha / static_cast<double>(m.hyper().adapter_rank) : 0.0;
  for (std::size_t i = 0; i < m.hyper().layers; ++i) {
    const std::string p = "l" + std::to_string(i) + ".";
    auto proj = [&](const char* w) {
      Var weight = base(p + w);
      if (!m.adapter_enabled()) return weight;
      Var a = bind(p + w + ".lora_a", true);
      Var b = bind(p + w + ".lora_b", true);
      return ad::add(tape, weight, ad::scale(tape, ad::matmul(tape, b, a), adapter_scale));
    };
    LayerVars lv;
    lv.norm1 = base(p + "norm1");
    lv.wq = proj("wq");
    lv.wk = proj("wk");
    lv.wv = proj("wv");
    lv.wo = proj("wo");
    lv.norm2 = base(p + "norm2");
    lv.w1 = base(p + "w1");
    lv.b1 = base(p + "b1");
    lv.w2 = base(p + "w2");
    lv.b2 = base(p + "b2");
    pv.layers.push_back(lv);
  }
  pv.final_norm = base("final_norm");
  pv.out_w = base("out_w");
  pv.out_b = base("out_b");
  return pv;
}

void check_tokens(const ModelHyper& h, const Tokens& tokens) {
  for (Token t : tokens)
    if (t < 0 || static_cast<std::size_t>(t) >= h.vocab_size)
      fail(ErrorCode::kDomain, "token id " + std::to_string(t) + " outside vocabulary");
}

// Final-normed hidden states, one row per position (prefix rows first).
Var hidden_states(Tape& tape, const SeqModel& m, const ParamVars& pv, std::span<const double> image,
                  std::span<const Token> inputs) {
  const ModelHyper& h = m.hyper();
  if (image.size() != h.image_dim) fail(ErrorCode::kDomain, "image vector has wrong dimension");
  const std::size_t n = h.prefix_len + inputs.size();
  if (n > h.max_positions) fail(ErrorCode::kDomain, "sequence longer than max_positions");

  Mat img(1, static_cast<Eigen::Index>(h.image_dim));
  for (std::size_t i = 0; i < h.image_dim; ++i) img(0, static_cast<Eigen::Index>(i)) = image[i];
  Var flat = ad::add_row(tape, ad::matmul_nt(tape, tape.constant(std::move(img)), pv.img_proj), pv.img_bias);
  Var x = ad::unflatten_rows(tape, flat, h.prefix_len, h.d_model);
  if (!inputs.empty()) {
    std::vector<int> ids(inputs.begin(), inputs.end());
    x = ad::concat_rows(tape, x, ad::gather_rows(tape, pv.tok_emb, ids));
  }
  std::vector<int> pos(n);
  for (std::size_t i = 0; i < n; ++i) pos[i] = static_cast<int>(i);
  x = ad::add(tape, x, ad::gather_rows(tape, pv.pos_emb, pos));

  for (const LayerVars& lv : pv.layers) {
    Var xn = ad::rms_norm(tape, x, lv.norm1);
    Var q = ad::matmul_nt(tape, xn, lv.wq);
    Var k = ad::matmul_nt(tape, xn, lv.wk);
    Var v = ad::matmul_nt(tape, xn, lv.wv);
    Var att = ad::causal_attention(tape, q, k, v, h.heads);
    x = ad::add(tape, x, ad::matmul_nt(tape, att, lv.wo));
    Var xn2 = ad::rms_norm(tape, x, lv.norm2);
    Var hid = ad::gelu(tape, ad::add_row(tape, ad::matmul_nt(tape, xn2, lv.w1), lv.b1));
    x = ad::add(tape, x, ad::add_row(tape, ad::matmul_nt(tape, hid, lv.w2), lv.b2));
  }
  return ad::rms_norm(tape, x, pv.final_norm);
}

Var logits_of(Tape& tape, const ParamVars& pv, Var hidden) {
  return ad::add_row(tape, ad::matmul_nt(tape, hidden, pv.out_w), pv.out_b);
}

std::size_t effective_length(const Tokens& inputs, Token pad) {
  std::size_t n = inputs.size();
  while (n > 0 && inputs[n - 1] == pad) --n;
  return n;
}

LogprobGrad run_batch(const SeqModel& m, const SeqBatch& batch, std::span<const double> weights, bool want_grad) {
  const ModelHyper& h = m.hyper();
  batch.validate(h);
  LogprobGrad out;
  out.logprobs.assign(batch.size(), 0.0);
  if (want_grad) out.grad.assign(m.layout().total(), 0.0);

  Tape tape(want_grad);
  const ParamVars pv = bind_params(tape, m, want_grad ? out.grad.data() : nullptr);
  std::vector<Var> scalars;
  std::vector<double> used_weights;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const Tokens& in = batch.inputs[j];
    const std::size_t len = effective_length(in, h.pad);
    std::vector<int> rows;
    std::vector<int> targets;
    for (std::size_t p = 0; p < len; ++p) {
      if (batch.mask[j][p] == 0) continue;
      rows.push_back(static_cast<int>(h.prefix_len + p));
      targets.push_back(batch.targets[j][p]);
    }
    if (rows.empty()) continue;
    Var hid = hidden_states(tape, m, pv, batch.images[j], std::span<const Token>(in.data(), len));
    Var lp = ad::pick_logprob(tape, logits_of(tape, pv, ad::select_rows(tape, hid, rows)), targets);
    out.logprobs[j] = tape.scalar(lp);
    if (!std::isfinite(out.logprobs[j]))
      fail(ErrorCode::kNumeric, "non-finite log-probability in forward pass (row " + std::to_string(j) + ")");
    scalars.push_back(lp);
    used_weights.push_back(weights.empty() ? 0.0 : weights[j]);
  }
  if (want_grad && !scalars.empty()) {
    tape.backward(ad::weighted_sum(tape, scalars, used_weights));
    for (double g : out.grad)
      if (!std::isfinite(g)) fail(ErrorCode::kNumeric, "non-finite gradient");
  }
  return out;
}

}  // namespace

void SeqBatch::validate(const ModelHyper& h) const {
  const std::size_t n = inputs.size();
  if (images.size() != n || targets.size() != n || mask.size() != n)
    fail(ErrorCode::kInvalidBatch, "batch field sizes disagree");
  for (std::size_t j = 0; j < n; ++j) {
    if (targets[j].size() != inputs[j].size() || mask[j].size() != inputs[j].size())
      fail(ErrorCode::kInvalidBatch, "row shapes disagree");
    check_tokens(h, inputs[j]);
    check_tokens(h, targets[j]);
    const std::size_t len = effective_length(inputs[j], h.pad);
    for (std::size_t p = 0; p < inputs[j].size(); ++p) {
      if (p < len && inputs[j][p] == h.pad) fail(ErrorCode::kInvalidBatch, "PAD inside an input row");
      if (mask[j][p] != 0 && (p >= len || targets[j][p] == h.pad))
        fail(ErrorCode::kInvalidBatch, "loss mask covers a PAD position");
    }
  }
}

SeqBatch make_batch(std::span<const SeqRow> rows, const ModelHyper& h) {
  SeqBatch b;
  std::size_t width = 0;
  for (const SeqRow& r : rows) {
    check_tokens(h, r.prompt);
    check_tokens(h, r.target);
    Tokens target = r.target;
    while (!target.empty() && target.back() == h.pad) target.pop_back();
    const auto eos = std::find(target.begin(), target.end(), h.eos);
    if (target.empty() || eos == target.end())
      fail(ErrorCode::kDomain, "target must be nonempty and EOS-terminated");
    if (eos + 1 != target.end()) fail(ErrorCode::kDomain, "non-PAD tokens after EOS in target");

    Tokens in = r.prompt;
    in.push_back(h.bos);
    in.insert(in.end(), target.begin(), target.end() - 1);
    Tokens tg(r.prompt.size(), h.pad);
    tg.insert(tg.end(), target.begin(), target.end());
    std::vector<std::uint8_t> mk(r.prompt.size(), 0);
    mk.resize(in.size(), 1);
    width = std::max(width, in.size());
    b.images.emplace_back(r.image.begin(), r.image.end());
    b.inputs.push_back(std::move(in));
    b.targets.push_back(std::move(tg));
    b.mask.push_back(std::move(mk));
  }
  for (std::size_t j = 0; j < b.size(); ++j) {
    b.inputs[j].resize(width, h.pad);
    b.targets[j].resize(width, h.pad);
    b.mask[j].resize(width, 0);
  }
  return b;
}

double forward_logprob(const SeqModel& model, std::span<const double> image, const Tokens& prompt,
                       const Tokens& target) {
  const SeqRow row{image, prompt, target};
  return batch_logprob(model, make_batch(std::span<const SeqRow>(&row, 1), model.hyper()))[0];
}

std::vector<double> batch_logprob(const SeqModel& model, const SeqBatch& batch) {
  return run_batch(model, batch, {}, false).logprobs;
}

LogprobGrad weighted_logprob_grad(const SeqModel& model, const SeqBatch& batch, std::span<const double> weights) {
  if (weights.size() != batch.size()) fail(ErrorCode::kInvalidBatch, "one weight per row required");
  return run_batch(model, batch, weights, true);
}

std::vector<double> grad_logprob(const SeqModel& model, const SeqBatch& batch, std::span<const int> sign_mask) {
  if (sign_mask.size() != batch.size()) fail(ErrorCode::kInvalidBatch, "one sign per row required");
  if (batch.size() == 0) return std::vector<double>(model.layout().total(), 0.0);
  std::vector<double> w(batch.size());
  for (std::size_t j = 0; j < w.size(); ++j) {
    if (sign_mask[j] != 1 && sign_mask[j] != -1) fail(ErrorCode::kInvalidBatch, "sign mask entries must be +1 or -1");
    w[j] = static_cast<double>(sign_mask[j]) / static_cast<double>(batch.size());
  }
  return run_batch(model, batch, w, true).grad;
}

SoftGrad soft_logprob_grad(const SeqModel& model, std::span<const double> image, const Tokens& prompt,
                           const std::vector<Tokens>& rows, const std::vector<Mat>& weights) {
  const ModelHyper& h = model.hyper();
  if (rows.size() != weights.size()) fail(ErrorCode::kInvalidBatch, "one weight matrix per row required");
  check_tokens(h, prompt);
  SoftGrad out;
  out.grad.assign(model.layout().total(), 0.0);
  Tape tape(true);
  const ParamVars pv = bind_params(tape, model, out.grad.data());
  std::vector<Var> scalars;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    check_tokens(h, rows[r]);
    const Mat& w = weights[r];
    if (static_cast<std::size_t>(w.rows()) != rows[r].size() + 1 || static_cast<std::size_t>(w.cols()) != h.vocab_size)
      fail(ErrorCode::kInvalidBatch, "weight matrix shape disagrees with its row");
    Tokens in = prompt;
    in.push_back(h.bos);
    in.insert(in.end(), rows[r].begin(), rows[r].end());
    Var hid = hidden_states(tape, model, pv, image, in);
    std::vector<int> pos;
    for (std::size_t p = 0; p <= rows[r].size(); ++p) pos.push_back(static_cast<int>(h.prefix_len + prompt.size() + p));
    Var v = ad::soft_logprob(tape, logits_of(tape, pv, ad::select_rows(tape, hid, pos)), w);
    out.values.push_back(tape.scalar(v));
    scalars.push_back(v);
  }
  if (!scalars.empty()) {
    const std::vector<double> ones(scalars.size(), 1.0);
    tape.backward(ad::weighted_sum(tape, scalars, ones));
  }
  for (double g : out.grad)
    if (!std::isfinite(g)) fail(ErrorCode::kNumeric, "non-finite gradient");
  return out;
}

Mat token_logits(const SeqModel& model, std::span<const double> image, const Tokens& inputs) {
  check_tokens(model.hyper(), inputs);
  Tape tape(false);
  const ParamVars pv = bind_params(tape, model, nullptr);
  Var hid = hidden_states(tape, model, pv, image, inputs);
  const Mat& all = tape.value(logits_of(tape, pv, hid));
  return all.bottomRows(static_cast<Eigen::Index>(inputs.size()));
}

std::vector<double> next_token_logprobs(const SeqModel& model, std::span<const double> image, const Tokens& prompt,
                                        const Tokens& response_prefix) {
  Tokens in = prompt;
  in.push_back(model.hyper().bos);
  in.insert(in.end(), response_prefix.begin(), response_prefix.end());
  check_tokens(model.hyper(), in);
  Tape tape(false);
  const ParamVars pv = bind_params(tape, model, nullptr);
  Var hid = hidden_states(tape, model, pv, image, in);
  const std::vector<int> last{static_cast<int>(model.hyper().prefix_len + in.size() - 1)};
  Mat lsm = ad::log_softmax_rows(tape.value(logits_of(tape, pv, ad::select_rows(tape, hid, last))));
  return std::vector<double>(lsm.data(), lsm.data() + lsm.size());
}

Tokens sample(const SeqModel& model, std::span<const double> image, const Tokens& prompt, double temperature,
              std::size_t max_len, Rng& rng) {
  if (!(temperature > 0.0)) fail(ErrorCode::kDomain, "temperature must be positive");
  if (max_len == 0) fail(ErrorCode::kDomain, "max_len must be at least 1");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Tokens out;
  while (out.size() < max_len) {
    std::vector<double> lp = next_token_logprobs(model, image, prompt, out);
    double mx = -INFINITY;
    for (double& v : lp) {
      v /= temperature;
      mx = std::max(mx, v);
    }
    double z = 0.0;
    for (double& v : lp) {
      v = std::exp(v - mx);
      z += v;
    }
    const double u = unif(rng) * z;
    double acc = 0.0;
    Token pick = static_cast<Token>(lp.size() - 1);
    for (std::size_t i = 0; i < lp.size(); ++i) {
      acc += lp[i];
      if (u < acc) {
        pick = static_cast<Token>(i);
        break;
      }
    }
    out.push_back(pick);
    if (pick == model.hyper().eos) break;
  }
  return out;
}

Tokens greedy_decode(const SeqModel& model, std::span<const double> image, const Tokens& prompt,
                     std::size_t max_len) {
  Tokens out;
  while (out.size() < max_len) {
    const std::vector<double> lp = next_token_logprobs(model, image, prompt, out);
    const auto best = std::max_element(lp.begin(), lp.end());
    out.push_back(static_cast<Token>(best - lp.begin()));
    if (out.back() == model.hyper().eos) break;
  }
  return out;
}

namespace {

constexpr char kCheckpointMagic[8] = {'U', 'L', 'A', 'B', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_le(std::ostream& out, T v) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!in) fail(ErrorCode::kIo, "truncated checkpoint");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

nlohmann::json hyper_to_json(const ModelHyper& h) {
  return {{"vocab_size", h.vocab_size}, {"d_model", h.d_model},     {"prefix_len", h.prefix_len},
          {"layers", h.layers},         {"heads", h.heads},         {"mlp_hidden", h.mlp_hidden},
          {"max_positions", h.max_positions}, {"image_dim", h.image_dim}, {"adapter_rank", h.adapter_rank},
          {"adapter_alpha", h.adapter_alpha}, {"pad", h.pad},        {"bos", h.bos},
          {"eos", h.eos}};
}

ModelHyper hyper_from_json(const nlohmann::json& j) {
  ModelHyper h;
  h.vocab_size = j.at("vocab_size").get<std::size_t>();
  h.d_model = j.at("d_model").get<std::size_t>();
  h.prefix_len = j.at("prefix_len").get<std::size_t>();
  h.layers = j.at("layers").get<std::size_t>();
  h.heads = j.at("heads").get<std::size_t>();
  h.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
  h.max_positions = j.at("max_positions").get<std::size_t>();
  h.image_dim = j.at("image_dim").get<std::size_t>();
  h.adapter_rank = j.at("adapter_rank").get<std::size_t>();
  h.adapter_alpha = j.at("adapter_alpha").get<double>();
  h.pad = j.at("pad").get<Token>();
  h.bos = j.at("bos").get<Token>();
  h.eos = j.at("eos").get<Token>();
  return h;
}

struct CheckpointHeader {
  nlohmann::json json;
  std::streamoff data_offset = 0;
};

CheckpointHeader read_header(std::istream& in, const std::string& path) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) fail(ErrorCode::kIo, "'" + path + "' is not a checkpoint");
  if (read_le<std::uint32_t>(in) != kCheckpointVersion) fail(ErrorCode::kIo, "unsupported checkpoint version");
  const auto len = read_le<std::uint64_t>(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) fail(ErrorCode::kIo, "truncated checkpoint header");
  CheckpointHeader h;
  try {
    h.json = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, std::string("malformed checkpoint header: ") + e.what());
  }
  h.data_offset = in.tellg();
  return h;
}

}  // namespace

void save_checkpoint(const SeqModel& model, const std::string& path, const std::map<std::string, std::string>& meta) {
  nlohmann::json layout = nlohmann::json::array();
  for (const ParamBlock& b : model.layout().blocks())
    layout.push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}, {"offset", b.offset}});
  nlohmann::json header{{"hyper", hyper_to_json(model.hyper())},
                        {"layout", layout},
                        {"param_count", model.layout().total()},
                        {"seed", model.seed()},
                        {"adapter_enabled", model.adapter_enabled()},
                        {"meta", meta}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write '" + path + "'");
  out.write(kCheckpointMagic, 8);
  write_le<std::uint32_t>(out, kCheckpointVersion);
  write_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (double v : model.params()) write_le<double>(out, v);
  if (!out) fail(ErrorCode::kIo, "short write to '" + path + "'");
}

SeqModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open '" + path + "'");
  const CheckpointHeader header = read_header(in, path);
  ModelHyper hyper;
  std::vector<ParamBlock> stored;
  std::size_t count = 0;
  std::uint64_t seed = 0;
  bool adapter = false;
  try {
    hyper = hyper_from_json(header.json.at("hyper"));
    for (const auto& b : header.json.at("layout"))
      stored.push_back({b.at("name").get<std::string>(), b.at("rows").get<std::size_t>(),
                        b.at("cols").get<std::size_t>(), b.at("offset").get<std::size_t>()});
    count = header.json.at("param_count").get<std::size_t>();
    seed = header.json.at("seed").get<std::uint64_t>();
    adapter = header.json.at("adapter_enabled").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, std::string("malformed checkpoint header: ") + e.what());
  }
  SeqModel model(hyper, seed);
  if (stored != model.layout().blocks() || count != model.layout().total())
    fail(ErrorCode::kLayoutMismatch, "checkpoint layout does not match its hyperparameters");
  in.seekg(0, std::ios::end);
  const std::streamoff bytes = in.tellg() - header.data_offset;
  if (bytes != static_cast<std::streamoff>(count * sizeof(double)))
    fail(ErrorCode::kLayoutMismatch, "checkpoint parameter payload has the wrong size");
  in.seekg(header.data_offset);
  for (double& v : model.params()) v = read_le<double>(in);
  if (adapter) model.set_adapter_enabled(true);
  return model;
}

SeqModel load_checkpoint(const std::string& path, const ModelHyper& expected) {
  SeqModel m = load_checkpoint(path);
  if (!(m.hyper() == expected)) fail(ErrorCode::kLayoutMismatch, "checkpoint hyperparameters differ from the expected model");
  return m;
}

std::map<std::string, std::string> checkpoint_meta(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open '" + path + "'");
  const CheckpointHeader header = read_header(in, path);
  return header.json.value("meta", std::map<std::string, std::string>{});
}

}  // namespace unlearnlab
