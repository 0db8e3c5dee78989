// SPDX-License-Identifier: Apache-2.0
#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

namespace unlearnlab {

SummaryIndex SummaryIndex::build(const EntityWorld& world) {
  std::vector<Tokens> summaries;
  for (const Entity& e : world.entities) summaries.push_back(e.summary);
  std::vector<bool> special(world.vocab.size());
  for (std::size_t t = 0; t < special.size(); ++t) special[t] = world.vocab.is_special(static_cast<Token>(t));
  return build(summaries, std::move(special), world.vocab.size());
}

SummaryIndex SummaryIndex::build(const std::vector<Tokens>& summaries, std::vector<bool> special,
                                 std::size_t vocab_size) {
  if (special.size() != vocab_size) fail(ErrorCode::kInvalidConfig, "special mask must cover the vocabulary");
  SummaryIndex idx;
  idx.summaries_ = summaries;
  idx.special_ = std::move(special);
  idx.df_.assign(vocab_size, 0);
  for (const Tokens& s : summaries) {
    const std::set<Token> uniq(s.begin(), s.end());
    for (Token t : uniq) idx.df_.at(static_cast<std::size_t>(t))++;
  }
  const double d = static_cast<double>(summaries.size());
  idx.idf_.resize(vocab_size);
  for (std::size_t t = 0; t < vocab_size; ++t)
    idx.idf_[t] = std::log((1.0 + d) / (1.0 + static_cast<double>(idx.df_[t]))) + 1.0;
  return idx;
}

double tfidf_precision(const Tokens& output, const Tokens& summary, const SummaryIndex& index) {
  std::map<Token, std::size_t> tf;
  for (Token t : output)
    if (!index.excluded(t)) tf[t]++;
  if (tf.empty()) return 0.0;
  const std::set<Token> in_summary(summary.begin(), summary.end());
  double matched = 0.0;
  double total = 0.0;
  for (const auto& [t, n] : tf) {
    const double w = static_cast<double>(n) * index.idf(t);
    total += w;
    if (in_summary.count(t) != 0) matched += w;
  }
  return matched / total;
}

UsrTerms usr_terms(const Tokens& output, std::size_t entity, const SummaryIndex& index,
                   const std::vector<std::size_t>& distractors) {
  UsrTerms u;
  u.t_self = tfidf_precision(output, index.summaries().at(entity), index);
  for (std::size_t j : distractors) {
    if (j == entity) continue;
    u.t_max_other = std::max(u.t_max_other, tfidf_precision(output, index.summaries().at(j), index));
  }
  u.success = u.t_max_other >= u.t_self;
  return u;
}

double usr(const std::vector<Tokens>& outputs, const std::vector<std::size_t>& entities, const SummaryIndex& index,
           const std::vector<std::size_t>& distractors) {
  if (outputs.empty()) fail(ErrorCode::kUndefinedInput, "USR over an empty forget set is undefined");
  if (outputs.size() != entities.size()) fail(ErrorCode::kInvalidBatch, "one entity per output required");
  double hits = 0.0;
  for (std::size_t i = 0; i < outputs.size(); ++i)
    hits += usr_terms(outputs[i], entities[i], index, distractors).success ? 1.0 : 0.0;
  return hits / static_cast<double>(outputs.size());
}

double leakage_score(const Tokens& output, const Entity& entity) {
  std::set<Token> secret(entity.name_tokens.begin(), entity.name_tokens.end());
  secret.insert(entity.fact_tokens.begin(), entity.fact_tokens.end());
  if (secret.empty()) return 1.0;
  std::set<Token> found;
  for (Token t : output)
    if (secret.count(t) != 0) found.insert(t);
  return 1.0 + 4.0 * static_cast<double>(found.size()) / static_cast<double>(secret.size());
}

double informativeness_score(const Tokens& output, const Entity& entity, std::size_t target_count) {
  std::set<Token> hits;
  for (Token t : output)
    if (std::binary_search(entity.visual_attrs.begin(), entity.visual_attrs.end(), t)) hits.insert(t);
  const double frac = std::min(1.0, static_cast<double>(hits.size()) / static_cast<double>(target_count));
  return 1.0 + 4.0 * frac;
}

double hallucination_score(const Tokens& output, const Entity& entity, const EntityWorld& world, std::size_t cap) {
  std::set<Token> foreign;
  std::set<Token> contradicting;
  for (Token t : output) {
    const TokenClass c = world.vocab.class_of(t);
    if ((c == TokenClass::kName || c == TokenClass::kFact) && world.owner_of(t) != entity.id) foreign.insert(t);
    if (c == TokenClass::kVisual && !std::binary_search(entity.visual_attrs.begin(), entity.visual_attrs.end(), t))
      contradicting.insert(t);
  }
  const double weighted = static_cast<double>(foreign.size() + contradicting.size());
  return 1.0 + 4.0 * std::min(1.0, weighted / static_cast<double>(cap));
}

double alignment_score(const Tokens& output, const std::vector<double>& image, const EntityWorld& world) {
  std::vector<double> mean(image.size(), 0.0);
  std::size_t n = 0;
  for (Token t : output) {
    if (world.vocab.is_special(t)) continue;
    const auto& e = world.reference_embeddings.at(static_cast<std::size_t>(t));
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += e[i];
    ++n;
  }
  if (n == 0) return 0.0;
  double dot = 0.0;
  double nm = 0.0;
  double ni = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    dot += mean[i] * image[i];
    nm += mean[i] * mean[i];
    ni += image[i] * image[i];
  }
  if (nm == 0.0 || ni == 0.0) return 0.0;
  return dot / std::sqrt(nm * ni);
}

Degeneration degeneration_stats(const Tokens& output) {
  Degeneration d;
  if (output.empty()) return d;
  const std::set<Token> uniq(output.begin(), output.end());
  d.distinct_1 = static_cast<double>(uniq.size()) / static_cast<double>(output.size());
  std::size_t run = 0;
  for (std::size_t i = 0; i < output.size(); ++i) {
    run = (i > 0 && output[i] == output[i - 1]) ? run + 1 : 1;
    d.max_run = std::max(d.max_run, run);
  }
  return d;
}

std::size_t count_class(const Tokens& output, const Vocab& vocab, TokenClass c) {
  return static_cast<std::size_t>(
      std::count_if(output.begin(), output.end(), [&](Token t) { return vocab.class_of(t) == c; }));
}

double bigram_precision(const Tokens& output, const Tokens& reference) {
  if (output.size() < 2) return 0.0;
  std::map<std::pair<Token, Token>, std::size_t> ref;
  for (std::size_t i = 1; i < reference.size(); ++i) ref[{reference[i - 1], reference[i]}]++;
  std::map<std::pair<Token, Token>, std::size_t> out;
  for (std::size_t i = 1; i < output.size(); ++i) out[{output[i - 1], output[i]}]++;
  std::size_t matched = 0;
  for (const auto& [bg, n] : out) {
    const auto it = ref.find(bg);
    if (it != ref.end()) matched += std::min(n, it->second);
  }
  return static_cast<double>(matched) / static_cast<double>(output.size() - 1);
}

ResponseStats response_statistics(const std::vector<Tokens>& outputs, const std::vector<std::size_t>& entities,
                                  const EntityWorld& world) {
  ResponseStats s;
  if (outputs.empty()) return s;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    s.visual_token_count += static_cast<double>(count_class(outputs[i], world.vocab, TokenClass::kVisual));
    s.name_fact_count += static_cast<double>(count_class(outputs[i], world.vocab, TokenClass::kName) +
                                             count_class(outputs[i], world.vocab, TokenClass::kFact));
    s.bigram_precision += bigram_precision(outputs[i], world.entities.at(entities.at(i)).summary);
  }
  const double n = static_cast<double>(outputs.size());
  s.visual_token_count /= n;
  s.name_fact_count /= n;
  s.bigram_precision /= n;
  return s;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kForgetSeen: return "forget-seen";
    case Split::kForgetUnseen: return "forget-unseen";
    case Split::kRetain: return "retain";
  }
  return "?";
}

Split split_from_name(const std::string& name) {
  for (Split s : {Split::kForgetSeen, Split::kForgetUnseen, Split::kRetain})
    if (name == split_name(s)) return s;
  fail(ErrorCode::kInvalidConfig, "unknown split '" + name + "'");
}

Tokens strip_eos(const Tokens& t, Token eos) {
  Tokens out;
  for (Token x : t) {
    if (x == eos) break;
    out.push_back(x);
  }
  return out;
}

SplitAggregate EvalReport::aggregate(Split s) const {
  SplitAggregate a;
  a.split = s;
  for (const EvalRow& r : rows) {
    if (r.split != s) continue;
    a.rows++;
    a.usr += r.usr_indicator ? 1.0 : 0.0;
    a.leakage += r.leakage;
    a.informativeness += r.informativeness;
    a.hallucination += r.hallucination;
    a.alignment += r.alignment;
    a.distinct_1 += r.distinct_1;
    a.max_run += static_cast<double>(r.max_run);
    a.length += static_cast<double>(r.length);
    a.visual_count += r.visual_count;
    a.name_fact_count += r.name_fact_count;
    a.bigram_precision += r.bigram_precision;
  }
  if (a.rows > 0) {
    const double n = static_cast<double>(a.rows);
    for (double* v : {&a.usr, &a.leakage, &a.informativeness, &a.hallucination, &a.alignment, &a.distinct_1,
                      &a.max_run, &a.length, &a.visual_count, &a.name_fact_count, &a.bigram_precision})
      *v /= n;
  }
  return a;
}

std::vector<SplitAggregate> EvalReport::aggregates() const {
  std::vector<SplitAggregate> out;
  for (Split s : {Split::kForgetSeen, Split::kForgetUnseen, Split::kRetain}) {
    SplitAggregate a = aggregate(s);
    if (a.rows > 0) out.push_back(a);
  }
  return out;
}

namespace {

const char* const kCsvHeader =
    "method,config_hash,seed,split,entity_id,image_index,usr_indicator,t_self,t_max_other,leakage,"
    "informativeness,hallucination,alignment,distinct_1,max_run,length,visual_count,name_fact_count,"
    "bigram_precision,output";

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string EvalReport::to_csv(const Vocab& vocab) const {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const EvalRow& r : rows) {
    out += method + "," + config_hash + "," + std::to_string(seed) + "," + split_name(r.split) + "," +
           std::to_string(r.entity_id) + "," + std::to_string(r.image_index) + "," + (r.usr_indicator ? "1" : "0") +
           "," + fmt(r.t_self) + "," + fmt(r.t_max_other) + "," + fmt(r.leakage) + "," + fmt(r.informativeness) +
           "," + fmt(r.hallucination) + "," + fmt(r.alignment) + "," + fmt(r.distinct_1) + "," +
           std::to_string(r.max_run) + "," + std::to_string(r.length) + "," + fmt(r.visual_count) + "," +
           fmt(r.name_fact_count) + "," + fmt(r.bigram_precision) + "," + vocab.render(r.output) + "\n";
  }
  return out;
}

EvalReport eval_report_from_csv(const std::string& text, const Vocab& vocab) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) fail(ErrorCode::kIo, "not an evaluation CSV");
  EvalReport rep;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto f = split_csv_line(line);
      if (f.size() != 20) fail(ErrorCode::kIo, "evaluation CSV row has the wrong column count");
      rep.method = f[0];
      rep.config_hash = f[1];
      rep.seed = std::stoull(f[2]);
      EvalRow r;
      r.split = split_from_name(f[3]);
      r.entity_id = std::stoul(f[4]);
      r.image_index = std::stoul(f[5]);
      r.usr_indicator = f[6] == "1";
      r.t_self = std::stod(f[7]);
      r.t_max_other = std::stod(f[8]);
      r.leakage = std::stod(f[9]);
      r.informativeness = std::stod(f[10]);
      r.hallucination = std::stod(f[11]);
      r.alignment = std::stod(f[12]);
      r.distinct_1 = std::stod(f[13]);
      r.max_run = std::stoul(f[14]);
      r.length = std::stoul(f[15]);
      r.visual_count = std::stod(f[16]);
      r.name_fact_count = std::stod(f[17]);
      r.bigram_precision = std::stod(f[18]);
      std::istringstream words(f[19]);
      std::string w;
      while (words >> w) r.output.push_back(vocab.id_of(w));
      rep.rows.push_back(std::move(r));
    }
  } catch (const std::logic_error& e) {
    fail(ErrorCode::kIo, std::string("malformed evaluation CSV: ") + e.what());
  }
  return rep;
}

EvalReport evaluate(const SeqModel& model, const EntityWorld& world, const std::vector<Split>& splits,
                    const SummaryIndex& index, const EvalOptions& opts) {
  std::vector<std::size_t> everyone(world.entities.size());
  for (std::size_t i = 0; i < everyone.size(); ++i) everyone[i] = i;
  const Tokens prompt = opts.directive ? directive_prompt(world) : plain_prompt(world);
  EvalReport rep;
  for (Split s : splits) {
    const auto& ids = s == Split::kRetain ? world.retain_ids : world.forget_ids;
    for (std::size_t e : ids) {
      const std::size_t n_img = world.images[e].size();
      const std::size_t first = s == Split::kForgetUnseen ? 1 : 0;
      const std::size_t last = s == Split::kForgetSeen ? 1 : n_img;
      for (std::size_t j = first; j < last; ++j) {
        const ImageFeature& img = world.image(e, j);
        const Entity& ent = world.entities[e];
        EvalRow r;
        r.split = s;
        r.entity_id = e;
        r.image_index = j;
        r.output = strip_eos(greedy_decode(model, img.vector, prompt, opts.max_len), world.vocab.eos);
        const UsrTerms u = usr_terms(r.output, e, index, everyone);
        r.usr_indicator = u.success;
        r.t_self = u.t_self;
        r.t_max_other = u.t_max_other;
        r.leakage = leakage_score(r.output, ent);
        r.informativeness = informativeness_score(r.output, ent);
        r.hallucination = hallucination_score(r.output, ent, world);
        r.alignment = alignment_score(r.output, img.vector, world);
        const Degeneration d = degeneration_stats(r.output);
        r.distinct_1 = d.distinct_1;
        r.max_run = d.max_run;
        r.length = r.output.size();
        const ResponseStats st = response_statistics({r.output}, {e}, world);
        r.visual_count = st.visual_token_count;
        r.name_fact_count = st.name_fact_count;
        r.bigram_precision = st.bigram_precision;
        rep.rows.push_back(std::move(r));
      }
    }
  }
  return rep;
}

}  // namespace unlearnlab
