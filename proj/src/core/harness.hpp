// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration, orchestration and reporting. A run directory holds
// one subdirectory per forget-set size with the world, the shared original
// checkpoint, the cached reference samples, one checkpoint and trace per
// method, and one evaluation CSV per model. report() renders markdown tables
// from those files.
#pragma once

#include "metrics.hpp"
#include "optim.hpp"
#include "seqmodel.hpp"
#include "unlearn.hpp"
#include "world.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace unlearnlab {

struct ExperimentConfig {
  std::uint64_t seed = 7;
  WorldConfig world = default_world();
  ModelHyper model;
  OptimizerConfig base = default_base_optimizer();
  double directive_fraction = 0.5;
  OptimizerConfig unlearn = default_unlearn_optimizer();
  double retain_weight = 1.0;
  double npo_beta = 0.1;
  std::size_t adapter_rank = 0;
  double adapter_alpha = 16.0;
  std::map<std::string, double> learning_rates = default_learning_rates();
  ReferenceOptions reference;
  std::size_t eval_max_len = 24;
  std::vector<Method> methods = {Method::kPubg, Method::kGa, Method::kNpo, Method::kRandom, Method::kReject};
  bool ablation = true;
  std::vector<std::size_t> n_sweep = {5, 10, 20};
  std::string out_dir;  // not part of the hash

  static WorldConfig default_world();
  static OptimizerConfig default_base_optimizer();
  static OptimizerConfig default_unlearn_optimizer();
  static std::map<std::string, double> default_learning_rates();

  // key=value lines; '#' starts a comment. Unknown keys are errors.
  static ExperimentConfig from_text(const std::string& text);
  static ExperimentConfig load(const std::string& path);
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static std::vector<std::string> keys();

  // Canonical key=value text of every hashed key in a fixed order.
  std::string to_text() const;
  std::string hash() const;
  void validate() const;

  // Forget-set sizes evaluated by run_experiment: the sweep plus world.forget.
  std::vector<std::size_t> cells() const;
  std::uint64_t world_seed(std::size_t n) const;
  double learning_rate(Method m) const;
};

// Output root from UNLEARN_LAB_OUT, or the given fallback.
std::string default_output_root(const std::string& fallback = "runs");

UnlearnTask make_task(const ExperimentConfig& cfg, Method m, std::uint64_t world_seed);
OptimizerConfig base_optimizer_for(const ExperimentConfig& cfg, std::uint64_t world_seed);
std::uint64_t base_init_seed(std::uint64_t world_seed);
ReferenceOptions reference_options_for(const ExperimentConfig& cfg, std::uint64_t world_seed);
ModelHyper model_hyper_for(const ExperimentConfig& cfg, const EntityWorld& world);

// Prepends config_hash and seed columns to every line of a CSV.
std::string with_provenance_columns(const std::string& csv, const std::string& hash, std::uint64_t seed);

// Evaluation label of the original model prompted with the directive.
inline constexpr const char* kOriginalLabel = "original";
inline constexpr const char* kDirectiveLabel = "original-directive";

struct CellResult {
  std::size_t n = 0;
  std::uint64_t world_seed = 0;
  std::optional<EntityWorld> world;
  double base_nll = 0.0;
  std::map<std::string, EvalReport> reports;  // keyed by label
  std::vector<std::string> errors;            // "stage: message"
};

struct ExperimentResult {
  std::string config_hash;
  std::vector<CellResult> cells;
  const CellResult* cell(std::size_t n) const;
};

// Runs every cell, writes all artifacts under cfg.out_dir (when non-empty) and
// renders report.md. Stage failures are recorded and skip dependent stages.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

// Rebuilds a finished cell from the world and evaluation files of a run
// directory. Missing or unreadable files are listed in errors.
CellResult load_cell(const std::string& run_dir, std::size_t n);

// Markdown tables rendered from the files of a run directory.
struct RenderedReport {
  std::string markdown;
  std::string summary_csv;
  std::vector<std::string> gaps;
};
RenderedReport render_report(const std::string& run_dir);
// Writes report.md and summary.csv into run_dir.
RenderedReport report(const std::string& run_dir);

// Markdown cell helpers, exposed for testing the bolding rule.
enum class Better { kHigher, kLower };
// Index of the strictly best value, or none on ties, gaps or empty input.
std::optional<std::size_t> single_best(const std::vector<std::optional<double>>& values, Better better);

struct Check {
  int criterion = 0;
  std::string name;
  bool passed = false;
  std::string detail;
};

// Behavioural acceptance checks evaluated on a finished cell.
std::vector<Check> behaviour_checks(const CellResult& cell);

}  // namespace unlearnlab
