// SPDX-License-Identifier: Apache-2.0
//
// Evaluation quantities: TF-IDF weighted precision against entity summaries,
// the unlearning success indicator, token-class judges on a 1..5 scale,
// embedding alignment, degeneration and response statistics.
#pragma once

#include "seqmodel.hpp"
#include "world.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace unlearnlab {

class SummaryIndex {
 public:
  static SummaryIndex build(const EntityWorld& world);
  static SummaryIndex build(const std::vector<Tokens>& summaries, std::vector<bool> special, std::size_t vocab_size);

  const std::vector<Tokens>& summaries() const { return summaries_; }
  double idf(Token t) const { return idf_.at(static_cast<std::size_t>(t)); }
  std::size_t document_frequency(Token t) const { return df_.at(static_cast<std::size_t>(t)); }
  bool excluded(Token t) const { return special_.at(static_cast<std::size_t>(t)); }

 private:
  std::vector<Tokens> summaries_;
  std::vector<std::size_t> df_;
  std::vector<double> idf_;
  std::vector<bool> special_;
};

// Fraction of the output's tf-idf mass carried by tokens that occur in the
// summary. Each distinct token w weighs tf(w) * idf(w); 0 for empty output.
double tfidf_precision(const Tokens& output, const Tokens& summary, const SummaryIndex& index);

struct UsrTerms {
  double t_self = 0.0;
  double t_max_other = 0.0;
  bool success = false;  // t_max_other >= t_self
};

UsrTerms usr_terms(const Tokens& output, std::size_t entity, const SummaryIndex& index,
                   const std::vector<std::size_t>& distractors);

// Mean success indicator; outputs[i] belongs to entities[i].
double usr(const std::vector<Tokens>& outputs, const std::vector<std::size_t>& entities, const SummaryIndex& index,
           const std::vector<std::size_t>& distractors);

double leakage_score(const Tokens& output, const Entity& entity);
double informativeness_score(const Tokens& output, const Entity& entity, std::size_t target_count = 3);
double hallucination_score(const Tokens& output, const Entity& entity, const EntityWorld& world,
                           std::size_t cap = 3);
double alignment_score(const Tokens& output, const std::vector<double>& image, const EntityWorld& world);

struct Degeneration {
  double distinct_1 = 1.0;
  std::size_t max_run = 0;
};

Degeneration degeneration_stats(const Tokens& output);

std::size_t count_class(const Tokens& output, const Vocab& vocab, TokenClass c);
double bigram_precision(const Tokens& output, const Tokens& reference);

struct ResponseStats {
  double visual_token_count = 0.0;
  double name_fact_count = 0.0;
  double bigram_precision = 0.0;
};

// Per-output means; outputs[i] is scored against the summary of entities[i].
ResponseStats response_statistics(const std::vector<Tokens>& outputs, const std::vector<std::size_t>& entities,
                                  const EntityWorld& world);

enum class Split { kForgetSeen, kForgetUnseen, kRetain };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct EvalRow {
  Split split = Split::kForgetSeen;
  std::size_t entity_id = 0;
  std::size_t image_index = 0;
  Tokens output;  // EOS stripped
  bool usr_indicator = false;
  double t_self = 0.0;
  double t_max_other = 0.0;
  double leakage = 1.0;
  double informativeness = 1.0;
  double hallucination = 1.0;
  double alignment = 0.0;
  double distinct_1 = 1.0;
  std::size_t max_run = 0;
  std::size_t length = 0;
  double visual_count = 0.0;
  double name_fact_count = 0.0;
  double bigram_precision = 0.0;
};

struct SplitAggregate {
  Split split = Split::kForgetSeen;
  std::size_t rows = 0;
  double usr = 0.0;
  double leakage = 0.0;
  double informativeness = 0.0;
  double hallucination = 0.0;
  double alignment = 0.0;
  double distinct_1 = 0.0;
  double max_run = 0.0;
  double length = 0.0;
  double visual_count = 0.0;
  double name_fact_count = 0.0;
  double bigram_precision = 0.0;
};

struct EvalReport {
  std::string method;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<EvalRow> rows;

  std::vector<SplitAggregate> aggregates() const;
  SplitAggregate aggregate(Split s) const;
  std::string to_csv(const Vocab& vocab) const;
};

struct EvalOptions {
  std::size_t max_len = 24;
  bool directive = false;  // prompt with q + c instead of q
};

// Greedy-decodes every image of the split and scores it.
EvalReport evaluate(const SeqModel& model, const EntityWorld& world, const std::vector<Split>& splits,
                    const SummaryIndex& index, const EvalOptions& opts = {});

Tokens strip_eos(const Tokens& t, Token eos);

// Parses a CSV written by EvalReport::to_csv.
EvalReport eval_report_from_csv(const std::string& text, const Vocab& vocab);

}  // namespace unlearnlab
