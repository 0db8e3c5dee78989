// SPDX-License-Identifier: Apache-2.0
#include "unlearn.hpp"

#include "metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>

namespace unlearnlab {

const char* method_name(Method m) {
  switch (m) {
    case Method::kPubg: return "pubg";
    case Method::kGa: return "ga";
    case Method::kNpo: return "npo";
    case Method::kRandom: return "random";
    case Method::kReject: return "reject";
    case Method::kBgOnly: return "bg";
  }
  return "?";
}

Method method_from_name(const std::string& name) {
  for (Method m : {Method::kPubg, Method::kGa, Method::kNpo, Method::kRandom, Method::kReject, Method::kBgOnly})
    if (name == method_name(m)) return m;
  fail(ErrorCode::kInvalidConfig, "unknown method '" + name + "'");
}

namespace {

Tokens draw_reference(const SeqModel& frozen, const EntityWorld& world, std::size_t entity, std::size_t image,
                      const ReferenceOptions& opts, Rng& rng) {
  const Tokens prompt = directive_prompt(world);
  const auto& vec = world.image(entity, image).vector;
  constexpr int kAttempts = 8;
  Tokens s;
  for (int a = 0; a < kAttempts; ++a) {
    s = sample(frozen, vec, prompt, opts.temperature, opts.max_len, rng);
    if (!s.empty() && s.back() == world.vocab.eos) return s;
  }
  // Still unterminated after several draws: close the last one.
  s.back() = world.vocab.eos;
  return s;
}

void accumulate(LossEval& into, const LossEval& add, double weight, const std::string& name) {
  if (into.grad.empty()) into.grad.assign(add.grad.size(), 0.0);
  for (std::size_t i = 0; i < add.grad.size(); ++i) into.grad[i] += weight * add.grad[i];
  into.loss += weight * add.loss;
  into.components.emplace_back(name, add.loss);
}

struct Row {
  std::size_t entity;
  std::size_t image;
  const Tokens* prompt;
  const Tokens* target;
  double weight;
};

// Runs one weighted forward/backward over rows; returns per-row log-probs.
LogprobGrad run_rows(const SeqModel& model, const EntityWorld& world, const std::vector<Row>& rows) {
  std::vector<SeqRow> seq;
  std::vector<double> w;
  for (const Row& r : rows) {
    seq.push_back(SeqRow{world.image(r.entity, r.image).vector, *r.prompt, *r.target});
    w.push_back(r.weight);
  }
  return weighted_logprob_grad(model, make_batch(seq, model.hyper()), w);
}

double mean(const std::vector<double>& v, std::size_t begin, std::size_t end) {
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += v[i];
  return end > begin ? s / static_cast<double>(end - begin) : 0.0;
}

void require_nonempty(std::size_t n, const char* what) {
  if (n == 0) fail(ErrorCode::kInvalidBatch, std::string(what) + " batch is empty");
}

}  // namespace

std::vector<ReferenceSample> build_reference_set(const FrozenModel& frozen, const EntityWorld& world,
                                                 const ReferenceOptions& opts) {
  if (opts.samples_per_image == 0) fail(ErrorCode::kInvalidConfig, "samples_per_image must be at least 1");
  const SeqModel& m = frozen.get();
  std::vector<ReferenceSample> out;
  std::size_t leaks = 0;
  for (const DatasetEntry& d : make_forget_dataset(world)) {
    Rng rng(derive_seed(opts.seed, 0x0E5, d.entity_id, d.image_index));
    for (std::size_t s = 0; s < opts.samples_per_image; ++s) {
      ReferenceSample r;
      r.entity_id = d.entity_id;
      r.image_index = d.image_index;
      r.o_star = draw_reference(m, world, d.entity_id, d.image_index, opts, rng);
      r.logprob_under_frozen =
          forward_logprob(m, world.image(d.entity_id, d.image_index).vector, directive_prompt(world), r.o_star);
      if (leakage_score(r.o_star, world.entities[d.entity_id]) > 1.0) ++leaks;
      out.push_back(std::move(r));
    }
  }
  if (static_cast<double>(leaks) > opts.max_leak_fraction * static_cast<double>(out.size()))
    fail(ErrorCode::kBaseModel, std::to_string(leaks) + " of " + std::to_string(out.size()) +
                                    " reference samples reveal their entity; the base model does not follow the "
                                    "directive, retrain it");
  return out;
}

std::string reference_set_to_jsonl(const std::vector<ReferenceSample>& refs,
                                   const std::map<std::string, std::string>& provenance) {
  std::string out;
  if (!provenance.empty()) out += nlohmann::json{{"record", "provenance"}, {"provenance", provenance}}.dump() + "\n";
  for (const ReferenceSample& r : refs) {
    nlohmann::json j{{"entity_id", r.entity_id},
                     {"image_index", r.image_index},
                     {"o_star", r.o_star},
                     {"logprob_under_frozen", r.logprob_under_frozen}};
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<ReferenceSample> reference_set_from_jsonl(const std::string& text) {
  std::vector<ReferenceSample> out;
  std::istringstream in(text);
  std::string line;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      if (j.contains("record")) continue;
      ReferenceSample r;
      r.entity_id = j.at("entity_id").get<std::size_t>();
      r.image_index = j.at("image_index").get<std::size_t>();
      r.o_star = j.at("o_star").get<Tokens>();
      r.logprob_under_frozen = j.at("logprob_under_frozen").get<double>();
      out.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, std::string("malformed reference cache: ") + e.what());
  }
  return out;
}

LossEval loss_ga(const SeqModel& model, const EntityWorld& world, const std::vector<ForgetItem>& batch) {
  require_nonempty(batch.size(), "forget");
  const Tokens q = plain_prompt(world);
  const double n = static_cast<double>(batch.size());
  std::vector<Row> rows;
  for (const ForgetItem& it : batch) rows.push_back({it.entity_id, it.image_index, &q, &it.response, 1.0 / n});
  LogprobGrad lg = run_rows(model, world, rows);
  const double loss = mean(lg.logprobs, 0, rows.size());
  return LossEval{loss, std::move(lg.grad), {{"ga", loss}}};
}

LossEval loss_bg(const SeqModel& model, const EntityWorld& world, const std::vector<ReferenceSample>& refs) {
  require_nonempty(refs.size(), "reference");
  const Tokens q = plain_prompt(world);
  const double n = static_cast<double>(refs.size());
  std::vector<Row> rows;
  for (const ReferenceSample& r : refs) rows.push_back({r.entity_id, r.image_index, &q, &r.o_star, -1.0 / n});
  LogprobGrad lg = run_rows(model, world, rows);
  const double loss = -mean(lg.logprobs, 0, rows.size());
  return LossEval{loss, std::move(lg.grad), {{"bg", loss}}};
}

LossEval loss_pubg(const SeqModel& model, const EntityWorld& world, const std::vector<ForgetItem>& batch,
                   const std::vector<ReferenceSample>& refs) {
  require_nonempty(batch.size(), "forget");
  if (refs.size() != batch.size()) fail(ErrorCode::kInvalidBatch, "every forget item needs one paired reference");
  for (std::size_t j = 0; j < batch.size(); ++j)
    if (refs[j].entity_id != batch[j].entity_id || refs[j].image_index != batch[j].image_index)
      fail(ErrorCode::kInvalidBatch, "reference " + std::to_string(j) + " is paired with a different image");
  const Tokens q = plain_prompt(world);
  const double n = static_cast<double>(batch.size());
  std::vector<Row> rows;
  for (const ForgetItem& it : batch) rows.push_back({it.entity_id, it.image_index, &q, &it.response, 1.0 / n});
  for (const ReferenceSample& r : refs) rows.push_back({r.entity_id, r.image_index, &q, &r.o_star, -1.0 / n});
  LogprobGrad lg = run_rows(model, world, rows);
  const double ga = mean(lg.logprobs, 0, batch.size());
  const double bg = -mean(lg.logprobs, batch.size(), rows.size());
  return LossEval{ga + bg, std::move(lg.grad), {{"ga", ga}, {"bg", bg}}};
}

LossEval loss_retain(const SeqModel& model, const EntityWorld& world, const std::vector<ForgetItem>& batch) {
  require_nonempty(batch.size(), "retain");
  const Tokens q = plain_prompt(world);
  const double n = static_cast<double>(batch.size());
  std::vector<Row> rows;
  for (const ForgetItem& it : batch) rows.push_back({it.entity_id, it.image_index, &q, &it.response, -1.0 / n});
  LogprobGrad lg = run_rows(model, world, rows);
  const double loss = -mean(lg.logprobs, 0, rows.size());
  return LossEval{loss, std::move(lg.grad), {{"retain", loss}}};
}

LossEval loss_npo(const SeqModel& model, const FrozenModel& frozen, const EntityWorld& world,
                  const std::vector<ForgetItem>& batch, double beta) {
  require_nonempty(batch.size(), "forget");
  if (!(beta > 0.0)) fail(ErrorCode::kInvalidConfig, "NPO beta must be positive");
  const Tokens q = plain_prompt(world);
  const double n = static_cast<double>(batch.size());
  std::vector<SeqRow> seq;
  for (const ForgetItem& it : batch) seq.push_back({world.image(it.entity_id, it.image_index).vector, q, it.response});
  const SeqBatch b = make_batch(seq, model.hyper());
  const std::vector<double> ref = batch_logprob(frozen.get(), b);
  const std::vector<double> cur = batch_logprob(model, b);
  // L = (2/beta) mean log(1 + exp(beta * d)), d = logp - logp_ref.
  // dL/dlogp_j = (2/N) sigmoid(beta * d_j).
  std::vector<double> w(batch.size());
  double loss = 0.0;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const double x = beta * (cur[j] - ref[j]);
    const double softplus = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    loss += 2.0 / beta * softplus / n;
    w[j] = 2.0 / n / (1.0 + std::exp(-x));
  }
  LogprobGrad lg = weighted_logprob_grad(model, b, w);
  return LossEval{loss, std::move(lg.grad), {{"npo", loss}}};
}

LossEval loss_random(const SeqModel& model, const EntityWorld& world, const std::vector<ForgetItem>& batch,
                     const std::vector<Tokens>& retain_targets) {
  require_nonempty(batch.size(), "forget");
  if (retain_targets.size() != batch.size()) fail(ErrorCode::kInvalidBatch, "one random target per forget item");
  const Tokens q = plain_prompt(world);
  const double n = static_cast<double>(batch.size());
  std::vector<Row> rows;
  for (const ForgetItem& it : batch) rows.push_back({it.entity_id, it.image_index, &q, &it.response, 1.0 / n});
  for (std::size_t j = 0; j < batch.size(); ++j)
    rows.push_back({batch[j].entity_id, batch[j].image_index, &q, &retain_targets[j], -1.0 / n});
  LogprobGrad lg = run_rows(model, world, rows);
  const double ga = mean(lg.logprobs, 0, batch.size());
  const double nll = -mean(lg.logprobs, batch.size(), rows.size());
  return LossEval{ga + nll, std::move(lg.grad), {{"ga", ga}, {"random_nll", nll}}};
}

LossEval loss_reject(const SeqModel& model, const EntityWorld& world, const std::vector<ForgetItem>& batch,
                     const Tokens& templ) {
  require_nonempty(batch.size(), "forget");
  if (templ.empty() || templ.back() != world.vocab.eos)
    fail(ErrorCode::kInvalidConfig, "refusal template must be nonempty and EOS-terminated");
  for (std::size_t i = 0; i + 1 < templ.size(); ++i)
    if (world.vocab.class_of(templ[i]) != TokenClass::kRefusal)
      fail(ErrorCode::kInvalidConfig, "refusal template must consist of REFUSAL tokens");
  const Tokens q = plain_prompt(world);
  const double n = static_cast<double>(batch.size());
  std::vector<Row> rows;
  for (const ForgetItem& it : batch) rows.push_back({it.entity_id, it.image_index, &q, &templ, -1.0 / n});
  LogprobGrad lg = run_rows(model, world, rows);
  const double loss = -mean(lg.logprobs, 0, rows.size());
  return LossEval{loss, std::move(lg.grad), {{"reject", loss}}};
}

void UnlearnTask::validate() const {
  optimizer.validate();
  if ((method == Method::kPubg || method == Method::kBgOnly) && references.empty() && !resample_per_step)
    fail(ErrorCode::kInvalidConfig, std::string(method_name(method)) + " requires reference samples");
  if (method == Method::kNpo && !(npo_beta > 0.0)) fail(ErrorCode::kInvalidConfig, "NPO beta must be positive");
  if (refusal_template && refusal_template->empty()) fail(ErrorCode::kInvalidConfig, "empty refusal template");
  if (retain_weight < 0.0) fail(ErrorCode::kInvalidConfig, "retain weight must be non-negative");
  if (adapter_rank > 0 && !(adapter_alpha > 0.0)) fail(ErrorCode::kInvalidConfig, "adapter alpha must be positive");
}

UnlearnResult run_unlearning(const UnlearnTask& task, const SeqModel& base, const EntityWorld& world) {
  task.validate();
  const FrozenModel frozen = clone_frozen(base);
  SeqModel model = task.adapter_rank > 0
                       ? attach_adapter(base, task.adapter_rank, task.adapter_alpha,
                                        derive_seed(task.optimizer.seed, 0xADA))
                       : clone(base);
  const Dataset forget = make_forget_dataset(world);
  const Dataset retain = make_retain_dataset(world);
  if (forget.empty()) fail(ErrorCode::kUndefinedInput, "forget dataset is empty");
  if ((task.use_retain || task.method == Method::kRandom) && retain.empty())
    fail(ErrorCode::kUndefinedInput, "retain dataset is empty");

  std::map<std::pair<std::size_t, std::size_t>, std::vector<const ReferenceSample*>> refs_by_image;
  for (const ReferenceSample& r : task.references) refs_by_image[{r.entity_id, r.image_index}].push_back(&r);

  Tokens templ = task.refusal_template.value_or(world.refusal);
  if (!task.refusal_template) templ.push_back(world.vocab.eos);

  EpochSampler retain_sampler(std::max<std::size_t>(retain.size(), 1), derive_seed(task.optimizer.seed, 0x4E7));

  auto pick_response = [&](std::size_t entity, Rng& rng) -> const Tokens& {
    const auto& rs = world.responses[entity].responses;
    std::uniform_int_distribution<std::size_t> u(0, rs.size() - 1);
    return rs[u(rng)];
  };

  const BatchLossFn loss_fn = [&](const SeqModel& m, std::span<const std::size_t> idx, std::size_t,
                                  Rng& rng) -> LossEval {
    std::vector<ForgetItem> items;
    for (std::size_t i : idx) {
      const DatasetEntry& d = forget[i];
      items.push_back({d.entity_id, d.image_index, pick_response(d.entity_id, rng)});
    }
    auto paired_refs = [&]() {
      std::vector<ReferenceSample> refs;
      for (const ForgetItem& it : items) {
        if (task.resample_per_step) {
          ReferenceSample r{it.entity_id, it.image_index,
                            draw_reference(frozen.get(), world, it.entity_id, it.image_index, task.reference, rng), 0.0};
          refs.push_back(std::move(r));
          continue;
        }
        const auto found = refs_by_image.find({it.entity_id, it.image_index});
        if (found == refs_by_image.end())
          fail(ErrorCode::kInvalidBatch, "no reference sample for entity " + std::to_string(it.entity_id));
        std::uniform_int_distribution<std::size_t> u(0, found->second.size() - 1);
        refs.push_back(*found->second[u(rng)]);
      }
      return refs;
    };

    LossEval total;
    switch (task.method) {
      case Method::kPubg: accumulate(total, loss_pubg(m, world, items, paired_refs()), 1.0, "pubg"); break;
      case Method::kGa: accumulate(total, loss_ga(m, world, items), 1.0, "ga"); break;
      case Method::kBgOnly: accumulate(total, loss_bg(m, world, paired_refs()), 1.0, "bg"); break;
      case Method::kNpo: accumulate(total, loss_npo(m, frozen, world, items, task.npo_beta), 1.0, "npo"); break;
      case Method::kReject: accumulate(total, loss_reject(m, world, items, templ), 1.0, "reject"); break;
      case Method::kRandom: {
        std::vector<Tokens> targets;
        std::uniform_int_distribution<std::size_t> pick(0, retain.size() - 1);
        for (std::size_t j = 0; j < items.size(); ++j) targets.push_back(pick_response(retain[pick(rng)].entity_id, rng));
        accumulate(total, loss_random(m, world, items, targets), 1.0, "random");
        break;
      }
    }
    if (task.use_retain && task.retain_weight > 0.0) {
      std::vector<ForgetItem> keep;
      for (std::size_t i : retain_sampler.next(task.optimizer.batch_size)) {
        const DatasetEntry& d = retain[i];
        keep.push_back({d.entity_id, d.image_index, pick_response(d.entity_id, rng)});
      }
      accumulate(total, loss_retain(m, world, keep), task.retain_weight, "retain");
    }
    return total;
  };

  LossTrace trace = train(model, loss_fn, forget.size(), task.optimizer);
  return UnlearnResult{std::move(model), std::move(trace)};
}

namespace {

struct Enumerated {
  std::vector<Tokens> seqs;
  std::vector<double> logp;  // under the model that was enumerated
};

// Every response the sampler can emit: sequences that end at the first EOS,
// or are cut off at max_len.
std::vector<Tokens> all_sequences(std::size_t vocab, std::size_t max_len, Token eos) {
  std::vector<Tokens> out;
  std::function<void(Tokens&)> rec = [&](Tokens& prefix) {
    for (std::size_t v = 0; v < vocab; ++v) {
      prefix.push_back(static_cast<Token>(v));
      if (static_cast<Token>(v) == eos || prefix.size() == max_len) out.push_back(prefix);
      else rec(prefix);
      prefix.pop_back();
    }
  };
  Tokens p;
  rec(p);
  return out;
}

ad::Mat one_hot_weights(const Tokens& seq, std::size_t vocab, double scale) {
  // Row p scores the prediction of seq[p] from the first p tokens.
  ad::Mat w = ad::Mat::Zero(static_cast<Eigen::Index>(seq.size()), static_cast<Eigen::Index>(vocab));
  for (std::size_t p = 0; p < seq.size(); ++p) w(static_cast<Eigen::Index>(p), seq[p]) = scale;
  return w;
}

Tokens feed_of(const Tokens& seq) { return Tokens(seq.begin(), seq.end() - 1); }

}  // namespace

KlVerifyReport verify_kl_rewrite(const KlVerifyConfig& cfg) {
  if (cfg.vocab_size > 8 || cfg.max_len > 3)
    fail(ErrorCode::kSize, "enumeration limited to vocab <= 8 and length <= 3");
  if (cfg.vocab_size < 3 || cfg.max_len == 0) fail(ErrorCode::kInvalidConfig, "need vocab >= 3 and max_len >= 1");

  ModelHyper h;
  h.vocab_size = cfg.vocab_size;
  h.d_model = 4;
  h.prefix_len = 1;
  h.layers = 1;
  h.heads = 2;
  h.mlp_hidden = 8;
  h.max_positions = 8;
  h.image_dim = 3;
  const Token eos = h.eos;

  auto make = [&](std::uint64_t seed) {
    SeqModel m(h, seed);
    Rng rng(derive_seed(seed, 0x7E5));
    std::normal_distribution<double> n(0.0, 0.8);
    for (double& v : m.params()) v += n(rng);
    return m;
  };
  const SeqModel reference = make(derive_seed(cfg.seed, 1));
  const SeqModel current = cfg.same_model ? reference : make(derive_seed(cfg.seed, 2));
  const std::vector<double> image{0.6, -0.3, 0.74};
  // The reference sees an extra prompt token, mirroring q + c versus q.
  const Tokens q{};
  const Tokens qc = cfg.same_model ? Tokens{} : Tokens{static_cast<Token>(cfg.vocab_size - 1)};

  KlVerifyReport rep;
  const std::vector<Tokens> seqs = all_sequences(cfg.vocab_size, cfg.max_len, eos);
  rep.sequences = seqs.size();
  std::vector<Tokens> feeds;
  std::vector<ad::Mat> unit;
  for (const Tokens& s : seqs) {
    feeds.push_back(feed_of(s));
    unit.push_back(one_hot_weights(s, cfg.vocab_size, 1.0));
  }
  const std::vector<double> lp_ref = soft_logprob_grad(reference, image, qc, feeds, unit).values;
  std::vector<double> p_ref(seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    p_ref[i] = std::exp(lp_ref[i]);
    rep.reference_mass += p_ref[i];
  }

  // (b) E_{o ~ p*}[-log p_theta(o)] by enumeration, with its gradient.
  std::vector<ad::Mat> neg_weighted;
  for (std::size_t i = 0; i < seqs.size(); ++i) neg_weighted.push_back(one_hot_weights(seqs[i], cfg.vocab_size, -p_ref[i]));
  const SoftGrad nll = soft_logprob_grad(current, image, q, feeds, neg_weighted);
  const std::vector<double> lp_cur = soft_logprob_grad(current, image, q, feeds, unit).values;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    rep.expected_nll += nll.values[i];
    rep.kl += p_ref[i] * (lp_ref[i] - lp_cur[i]);
    rep.entropy -= p_ref[i] * lp_ref[i];
  }

  // (a) grad KL(p* || p_theta), decomposed over the prefix tree: every
  // non-terminal prefix h contributes -p*(h) sum_v p*(v|h) grad log p_theta(v|h).
  std::vector<Tokens> prefixes{Tokens{}};
  for (std::size_t len = 1; len < cfg.max_len; ++len)
    for (const Tokens& s : seqs)
      if (s.size() > len) {
        const Tokens p(s.begin(), s.begin() + static_cast<long>(len));
        if (std::find(prefixes.begin(), prefixes.end(), p) == prefixes.end()) prefixes.push_back(p);
      }
  std::vector<ad::Mat> kl_weights;
  for (const Tokens& pre : prefixes) {
    const std::vector<double> cond = next_token_logprobs(reference, image, qc, pre);
    double pre_logp = 0.0;
    for (std::size_t t = 0; t < pre.size(); ++t)
      pre_logp += next_token_logprobs(reference, image, qc, Tokens(pre.begin(), pre.begin() + static_cast<long>(t)))
          [static_cast<std::size_t>(pre[t])];
    ad::Mat w = ad::Mat::Zero(static_cast<Eigen::Index>(pre.size() + 1), static_cast<Eigen::Index>(cfg.vocab_size));
    for (std::size_t v = 0; v < cfg.vocab_size; ++v)
      w(static_cast<Eigen::Index>(pre.size()), static_cast<Eigen::Index>(v)) = -std::exp(pre_logp + cond[v]);
    kl_weights.push_back(std::move(w));
  }
  const SoftGrad kl = soft_logprob_grad(current, image, q, prefixes, kl_weights);

  for (std::size_t i = 0; i < kl.grad.size(); ++i) {
    // soft_logprob_grad returns the gradient of sum w*logp; both objectives
    // carry their minus sign in the weights already.
    rep.max_grad_diff = std::max(rep.max_grad_diff, std::abs(kl.grad[i] - nll.grad[i]));
    rep.max_grad_abs = std::max(rep.max_grad_abs, std::abs(kl.grad[i]));
  }
  rep.grad_ok = rep.max_grad_diff <= 1e-8;
  rep.entropy_ok = std::abs((rep.expected_nll - rep.kl) - rep.entropy) <= 1e-10 &&
                   std::abs(rep.reference_mass - 1.0) <= 1e-12;

  // Monte-Carlo: draw o* from the reference sampler, average -log p_theta(o*)
  // and its directional derivative along a random direction u.
  Rng urng(derive_seed(cfg.seed, 0xD1));
  std::normal_distribution<double> un(0.0, 1.0);
  std::vector<double> u(current.layout().total());
  for (double& x : u) x = un(urng);
  std::vector<double> dir(seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const std::vector<ad::Mat> wi{one_hot_weights(seqs[i], cfg.vocab_size, -1.0)};
    const SoftGrad gi = soft_logprob_grad(current, image, q, {feeds[i]}, wi);
    double d = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) d += u[k] * gi.grad[k];
    dir[i] = d;
  }
  for (std::size_t k = 0; k < u.size(); ++k) rep.exact_dir += u[k] * nll.grad[k];

  std::map<Tokens, std::size_t> where;
  for (std::size_t i = 0; i < seqs.size(); ++i) where[seqs[i]] = i;
  Rng srng(derive_seed(cfg.seed, 0x3C));
  double s1 = 0.0, s2 = 0.0, d1 = 0.0, d2 = 0.0;
  for (std::size_t k = 0; k < cfg.mc_samples; ++k) {
    const Tokens o = sample(reference, image, qc, 1.0, cfg.max_len, srng);
    const std::size_t i = where.at(o);
    const double x = -lp_cur[i];
    s1 += x;
    s2 += x * x;
    d1 += dir[i];
    d2 += dir[i] * dir[i];
  }
  const double n = static_cast<double>(std::max<std::size_t>(cfg.mc_samples, 1));
  rep.mc_mean = s1 / n;
  rep.mc_stderr = std::sqrt(std::max(0.0, s2 / n - rep.mc_mean * rep.mc_mean) / n);
  rep.mc_dir_mean = d1 / n;
  rep.mc_dir_stderr = std::sqrt(std::max(0.0, d2 / n - rep.mc_dir_mean * rep.mc_dir_mean) / n);
  const double tol = 1e-12;
  rep.mc_ok = cfg.mc_samples > 0 && std::abs(rep.mc_mean - rep.expected_nll) <= 3.0 * rep.mc_stderr + tol &&
              std::abs(rep.mc_dir_mean - rep.exact_dir) <= 3.0 * rep.mc_dir_stderr + tol;
  return rep;
}

}  // namespace unlearnlab
