// SPDX-License-Identifier: Apache-2.0
#include "harness.hpp"

#include "base_training.hpp"
#include "world_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>

namespace unlearnlab {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    fail(ErrorCode::kInvalidConfig, "key '" + key + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    fail(ErrorCode::kInvalidConfig, "key '" + key + "' expects an unsigned integer, got '" + v + "'");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out))
    fail(ErrorCode::kInvalidConfig, "key '" + key + "' expects a finite number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(ErrorCode::kInvalidConfig, "key '" + key + "' expects true or false, got '" + v + "'");
}

std::string fmt_real(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

struct KeyDef {
  const char* key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define UL_SIZE_KEY(name, field)                                                               \
  KeyDef{name, [](const ExperimentConfig& c) { return std::to_string(c.field); },             \
         [](ExperimentConfig& c, const std::string& v) { c.field = parse_size(name, v); }}
#define UL_REAL_KEY(name, field)                                                               \
  KeyDef{name, [](const ExperimentConfig& c) { return fmt_real(c.field); },                   \
         [](ExperimentConfig& c, const std::string& v) { c.field = parse_real(name, v); }}
#define UL_LR_KEY(name, method)                                                                \
  KeyDef{name, [](const ExperimentConfig& c) { return fmt_real(c.learning_rates.at(method)); }, \
         [](ExperimentConfig& c, const std::string& v) { c.learning_rates[method] = parse_real(name, v); }}

const std::vector<KeyDef>& key_defs() {
  static const std::vector<KeyDef> defs = {
      KeyDef{"seed", [](const ExperimentConfig& c) { return std::to_string(c.seed); },
             [](ExperimentConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); }},
      UL_SIZE_KEY("world.entities", world.entities),
      UL_SIZE_KEY("world.forget", world.forget),
      UL_SIZE_KEY("world.visual_pool", world.visual_pool),
      UL_SIZE_KEY("world.visual_per_entity", world.visual_per_entity),
      UL_SIZE_KEY("world.names_per_entity", world.names_per_entity),
      UL_SIZE_KEY("world.facts_per_entity", world.facts_per_entity),
      UL_SIZE_KEY("world.image_dim", world.image_dim),
      UL_SIZE_KEY("world.images_per_entity", world.images_per_entity),
      UL_SIZE_KEY("world.responses_per_entity", world.responses_per_entity),
      UL_REAL_KEY("world.image_noise", world.image_noise),
      UL_REAL_KEY("world.min_separation", world.min_separation),
      UL_SIZE_KEY("model.d_model", model.d_model),
      UL_SIZE_KEY("model.prefix_len", model.prefix_len),
      UL_SIZE_KEY("model.layers", model.layers),
      UL_SIZE_KEY("model.heads", model.heads),
      UL_SIZE_KEY("model.mlp_hidden", model.mlp_hidden),
      UL_SIZE_KEY("model.max_positions", model.max_positions),
      UL_REAL_KEY("base.learning_rate", base.learning_rate),
      UL_SIZE_KEY("base.steps", base.steps),
      UL_SIZE_KEY("base.batch_size", base.batch_size),
      UL_REAL_KEY("base.weight_decay", base.weight_decay),
      UL_REAL_KEY("base.grad_clip", base.grad_clip),
      UL_REAL_KEY("base.directive_fraction", directive_fraction),
      UL_SIZE_KEY("unlearn.steps", unlearn.steps),
      UL_SIZE_KEY("unlearn.batch_size", unlearn.batch_size),
      UL_REAL_KEY("unlearn.weight_decay", unlearn.weight_decay),
      UL_REAL_KEY("unlearn.grad_clip", unlearn.grad_clip),
      UL_REAL_KEY("unlearn.retain_weight", retain_weight),
      UL_REAL_KEY("unlearn.npo_beta", npo_beta),
      UL_SIZE_KEY("unlearn.adapter_rank", adapter_rank),
      UL_REAL_KEY("unlearn.adapter_alpha", adapter_alpha),
      UL_LR_KEY("lr.pubg", "pubg"),
      UL_LR_KEY("lr.ga", "ga"),
      UL_LR_KEY("lr.npo", "npo"),
      UL_LR_KEY("lr.random", "random"),
      UL_LR_KEY("lr.reject", "reject"),
      UL_LR_KEY("lr.bg", "bg"),
      UL_SIZE_KEY("reference.samples", reference.samples_per_image),
      UL_REAL_KEY("reference.temperature", reference.temperature),
      UL_SIZE_KEY("reference.max_len", reference.max_len),
      UL_REAL_KEY("reference.max_leak_fraction", reference.max_leak_fraction),
      UL_SIZE_KEY("eval.max_len", eval_max_len),
      KeyDef{"methods",
             [](const ExperimentConfig& c) {
               std::string s;
               for (Method m : c.methods) s += (s.empty() ? "" : ",") + std::string(method_name(m));
               return s;
             },
             [](ExperimentConfig& c, const std::string& v) {
               c.methods.clear();
               for (const std::string& m : split_list(v)) c.methods.push_back(method_from_name(m));
             }},
      KeyDef{"ablation", [](const ExperimentConfig& c) { return std::string(c.ablation ? "true" : "false"); },
             [](ExperimentConfig& c, const std::string& v) { c.ablation = parse_bool("ablation", v); }},
      KeyDef{"n_sweep",
             [](const ExperimentConfig& c) {
               std::string s;
               for (std::size_t n : c.n_sweep) s += (s.empty() ? "" : ",") + std::to_string(n);
               return s;
             },
             [](ExperimentConfig& c, const std::string& v) {
               c.n_sweep.clear();
               for (const std::string& n : split_list(v)) c.n_sweep.push_back(parse_size("n_sweep", n));
             }},
  };
  return defs;
}

#undef UL_SIZE_KEY
#undef UL_REAL_KEY
#undef UL_LR_KEY

const KeyDef& find_key(const std::string& key) {
  for (const KeyDef& d : key_defs())
    if (key == d.key) return d;
  fail(ErrorCode::kInvalidConfig, "unknown config key '" + key + "'");
}

}  // namespace

WorldConfig ExperimentConfig::default_world() {
  WorldConfig w;
  w.entities = 25;
  w.forget = 10;
  return w;
}

OptimizerConfig ExperimentConfig::default_base_optimizer() {
  OptimizerConfig o;
  o.learning_rate = 3e-3;
  o.steps = 1000;
  o.batch_size = 8;
  return o;
}

OptimizerConfig ExperimentConfig::default_unlearn_optimizer() {
  OptimizerConfig o;
  o.steps = 30;
  o.batch_size = 8;
  return o;
}

std::map<std::string, double> ExperimentConfig::default_learning_rates() {
  return {{"pubg", 2e-3}, {"ga", 1.5e-2}, {"npo", 2e-2}, {"random", 1e-2}, {"reject", 3e-3}, {"bg", 2e-3}};
}

ExperimentConfig ExperimentConfig::from_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorCode::kInvalidConfig, "config line " + std::to_string(lineno) + " lacks '='");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) { return from_text(read_text_file(path)); }

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  if (key == "out") {
    out_dir = value;
    return;
  }
  find_key(key).set(*this, value);
}

std::string ExperimentConfig::get(const std::string& key) const {
  if (key == "out") return out_dir;
  return find_key(key).get(*this);
}

std::vector<std::string> ExperimentConfig::keys() {
  std::vector<std::string> out;
  for (const KeyDef& d : key_defs()) out.emplace_back(d.key);
  return out;
}

std::string ExperimentConfig::to_text() const {
  std::string out;
  for (const KeyDef& d : key_defs()) out += std::string(d.key) + " = " + d.get(*this) + "\n";
  return out;
}

std::string ExperimentConfig::hash() const { return hex64(fnv1a64(to_text())); }

void ExperimentConfig::validate() const {
  world.validate();
  for (std::size_t n : cells())
    if (n == 0 || n >= world.entities)
      fail(ErrorCode::kInvalidConfig, "forget-set size " + std::to_string(n) + " must lie in (0, entities)");
  base.validate();
  unlearn.validate();
  if (!(directive_fraction > 0.0 && directive_fraction < 1.0))
    fail(ErrorCode::kInvalidConfig, "base.directive_fraction must lie in (0, 1)");
  if (methods.empty() && !ablation) fail(ErrorCode::kInvalidConfig, "no methods to run");
  for (const auto& [name, lr] : learning_rates)
    if (!(lr > 0.0)) fail(ErrorCode::kInvalidConfig, "learning rate for " + name + " must be positive");
  if (!(npo_beta > 0.0)) fail(ErrorCode::kInvalidConfig, "unlearn.npo_beta must be positive");
  if (eval_max_len == 0) fail(ErrorCode::kInvalidConfig, "eval.max_len must be positive");
  if (reference.samples_per_image == 0) fail(ErrorCode::kInvalidConfig, "reference.samples must be positive");
  ModelHyper h = model;
  h.vocab_size = 64;
  h.image_dim = world.image_dim;
  h.validate();
}

std::vector<std::size_t> ExperimentConfig::cells() const {
  std::set<std::size_t> s(n_sweep.begin(), n_sweep.end());
  s.insert(world.forget);
  return {s.begin(), s.end()};
}

std::uint64_t ExperimentConfig::world_seed(std::size_t n) const {
  return n == world.forget ? seed : derive_seed(seed, 0x5EE9, n);
}

double ExperimentConfig::learning_rate(Method m) const {
  const auto it = learning_rates.find(method_name(m));
  if (it == learning_rates.end()) fail(ErrorCode::kInvalidConfig, std::string("no learning rate for ") + method_name(m));
  return it->second;
}

std::string default_output_root(const std::string& fallback) {
  const char* env = std::getenv("UNLEARN_LAB_OUT");
  return (env != nullptr && *env != '\0') ? std::string(env) : fallback;
}

ModelHyper model_hyper_for(const ExperimentConfig& cfg, const EntityWorld& world) {
  return hyper_for_world(world, cfg.model);
}

OptimizerConfig base_optimizer_for(const ExperimentConfig& cfg, std::uint64_t world_seed) {
  OptimizerConfig o = cfg.base;
  o.seed = derive_seed(world_seed, 0xBA5E);
  return o;
}

std::uint64_t base_init_seed(std::uint64_t world_seed) { return derive_seed(world_seed, 0x1417); }

ReferenceOptions reference_options_for(const ExperimentConfig& cfg, std::uint64_t world_seed) {
  ReferenceOptions r = cfg.reference;
  r.max_len = std::min(r.max_len, cfg.eval_max_len);
  r.seed = derive_seed(world_seed, 0x2EF);
  return r;
}

UnlearnTask make_task(const ExperimentConfig& cfg, Method m, std::uint64_t world_seed) {
  UnlearnTask t;
  t.method = m;
  t.optimizer = cfg.unlearn;
  t.optimizer.learning_rate = cfg.learning_rate(m);
  t.optimizer.seed = derive_seed(world_seed, 0x0F6);
  t.npo_beta = cfg.npo_beta;
  t.retain_weight = cfg.retain_weight;
  t.adapter_rank = cfg.adapter_rank;
  t.adapter_alpha = cfg.adapter_alpha;
  t.reference = reference_options_for(cfg, world_seed);
  return t;
}

const CellResult* ExperimentResult::cell(std::size_t n) const {
  for (const CellResult& c : cells)
    if (c.n == n) return &c;
  return nullptr;
}

std::string with_provenance_columns(const std::string& csv, const std::string& hash, std::uint64_t seed) {
  std::istringstream in(csv);
  std::string line;
  std::string out;
  bool header = true;
  while (std::getline(in, line)) {
    out += header ? "config_hash,seed," : hash + "," + std::to_string(seed) + ",";
    out += line + "\n";
    header = false;
  }
  return out;
}

namespace {

std::vector<Method> methods_for_cell(const ExperimentConfig& cfg, bool main_cell) {
  std::vector<Method> out = cfg.methods;
  if (main_cell && cfg.ablation)
    for (Method m : {Method::kGa, Method::kPubg, Method::kBgOnly})
      if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
  return out;
}

std::string cell_dir_name(std::size_t n) { return "n" + std::to_string(n); }

const std::vector<Split> kAllSplits = {Split::kForgetSeen, Split::kForgetUnseen, Split::kRetain};

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult result;
  result.config_hash = cfg.hash();
  const bool persist = !cfg.out_dir.empty();
  if (persist) {
    fs::create_directories(cfg.out_dir);
    write_text_file((fs::path(cfg.out_dir) / "config.txt").string(),
                    "# config_hash = " + result.config_hash + "\n" + cfg.to_text());
  }

  for (std::size_t n : cfg.cells()) {
    CellResult cell;
    cell.n = n;
    cell.world_seed = cfg.world_seed(n);
    const fs::path dir = persist ? fs::path(cfg.out_dir) / cell_dir_name(n) : fs::path();
    if (persist) fs::create_directories(dir);
    const std::map<std::string, std::string> prov = {{"config_hash", result.config_hash},
                                                     {"seed", std::to_string(cfg.seed)},
                                                     {"n", std::to_string(n)},
                                                     {"world_seed", std::to_string(cell.world_seed)}};
    auto record = [&](const std::string& stage, const std::exception& e) {
      cell.errors.push_back(stage + ": " + e.what());
    };
    auto write = [&](const std::string& name, const std::string& text) {
      if (persist) write_text_file((dir / name).string(), text);
    };

    try {
      WorldConfig wc = cfg.world;
      wc.forget = n;
      EntityWorld world = generate_world(wc, cell.world_seed);
      world.provenance = prov;
      write("world.jsonl", world_to_jsonl(world));
      cell.world = std::move(world);
    } catch (const std::exception& e) {
      record("world", e);
      result.cells.push_back(std::move(cell));
      continue;
    }
    const EntityWorld& world = *cell.world;
    const SummaryIndex index = SummaryIndex::build(world);
    EvalOptions eo;
    eo.max_len = cfg.eval_max_len;

    auto evaluate_into = [&](const std::string& label, const SeqModel& model, bool directive) {
      EvalOptions o = eo;
      o.directive = directive;
      EvalReport r = evaluate(model, world, kAllSplits, index, o);
      r.method = label;
      r.config_hash = result.config_hash;
      r.seed = cfg.seed;
      write("eval_" + label + ".csv", r.to_csv(world.vocab));
      cell.reports.emplace(label, std::move(r));
    };

    std::optional<SeqModel> base;
    try {
      BaseTrainingResult br = train_base_model(world, model_hyper_for(cfg, world),
                                               base_optimizer_for(cfg, cell.world_seed), cfg.directive_fraction,
                                               base_init_seed(cell.world_seed));
      cell.base_nll = br.final_nll;
      std::map<std::string, std::string> meta = prov;
      meta["role"] = "original";
      meta["final_nll"] = fmt_real(br.final_nll);
      if (persist) save_checkpoint(br.model, (dir / "base.ckpt").string(), meta);
      write("base_trace.csv", with_provenance_columns(br.trace.to_csv(), result.config_hash, cfg.seed));
      base = std::move(br.model);
    } catch (const std::exception& e) {
      record("base", e);
      result.cells.push_back(std::move(cell));
      continue;
    }

    try {
      evaluate_into(kOriginalLabel, *base, false);
      evaluate_into(kDirectiveLabel, *base, true);
    } catch (const std::exception& e) {
      record("eval original", e);
    }

    std::optional<std::vector<ReferenceSample>> refs;
    const std::vector<Method> methods = methods_for_cell(cfg, n == cfg.world.forget);
    const bool need_refs = std::any_of(methods.begin(), methods.end(),
                                       [](Method m) { return m == Method::kPubg || m == Method::kBgOnly; });
    if (need_refs) {
      try {
        refs = build_reference_set(clone_frozen(*base), world, reference_options_for(cfg, cell.world_seed));
        write("references.jsonl", reference_set_to_jsonl(*refs, prov));
      } catch (const std::exception& e) {
        record("references", e);
      }
    }

    for (Method m : methods) {
      const std::string name = method_name(m);
      const bool uses_refs = m == Method::kPubg || m == Method::kBgOnly;
      if (uses_refs && !refs) {
        cell.errors.push_back("unlearn " + name + ": skipped, no reference samples");
        continue;
      }
      try {
        UnlearnTask task = make_task(cfg, m, cell.world_seed);
        if (uses_refs) task.references = *refs;
        UnlearnResult ur = run_unlearning(task, *base, world);
        write(name + "_trace.csv", with_provenance_columns(ur.trace.to_csv(), result.config_hash, cfg.seed));
        if (ur.trace.aborted) {
          cell.errors.push_back("unlearn " + name + ": " + ur.trace.error);
          continue;
        }
        std::map<std::string, std::string> meta = prov;
        meta["role"] = name;
        if (persist) save_checkpoint(ur.model, (dir / (name + ".ckpt")).string(), meta);
        evaluate_into(name, ur.model, false);
      } catch (const std::exception& e) {
        record("unlearn " + name, e);
      }
    }
    if (!cell.errors.empty()) {
      std::string text;
      for (const std::string& e : cell.errors) text += e + "\n";
      write("errors.txt", text);
    }
    result.cells.push_back(std::move(cell));
  }
  if (persist) report(cfg.out_dir);
  return result;
}

std::optional<std::size_t> single_best(const std::vector<std::optional<double>>& values, Better better) {
  std::optional<std::size_t> best;
  bool tie = false;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!values[i]) return std::nullopt;
    if (!best) {
      best = i;
      continue;
    }
    const double a = *values[i];
    const double b = *values[*best];
    const bool improves = better == Better::kHigher ? a > b : a < b;
    if (improves) {
      best = i;
      tie = false;
    } else if (a == b) {
      tie = true;
    }
  }
  if (tie) return std::nullopt;
  return best;
}

namespace {

struct Column {
  std::string title;
  Split split;
  double SplitAggregate::*field;
  Better better;
  int decimals;
};

std::string cell_text(const std::optional<double>& v, int decimals, bool bold) {
  if (!v) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, *v);
  return bold ? "**" + std::string(buf) + "**" : std::string(buf);
}

// Value as printed, so that bolding treats visually equal cells as ties.
double displayed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return std::strtod(buf, nullptr);
}

// Rows: (display name, report). The first `fixed` rows are reference rows that
// never take part in bolding.
std::string markdown_table(const std::vector<std::pair<std::string, const EvalReport*>>& rows, std::size_t fixed,
                           const std::vector<Column>& cols) {
  std::vector<std::vector<std::optional<double>>> values(rows.size(), std::vector<std::optional<double>>(cols.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c)
      if (rows[r].second != nullptr) {
        const SplitAggregate a = rows[r].second->aggregate(cols[c].split);
        if (a.rows > 0) values[r][c] = displayed(a.*(cols[c].field), cols[c].decimals);
      }
  std::vector<std::optional<std::size_t>> best(cols.size());
  for (std::size_t c = 0; c < cols.size(); ++c) {
    std::vector<std::optional<double>> column;
    for (std::size_t r = fixed; r < rows.size(); ++r) column.push_back(values[r][c]);
    if (column.size() >= 2) {
      const auto b = single_best(column, cols[c].better);
      if (b) best[c] = *b + fixed;
    }
  }
  std::string out = "| Method |";
  std::string rule = "|---|";
  for (const Column& c : cols) {
    out += " " + c.title + (c.better == Better::kHigher ? " ↑" : " ↓") + " |";
    rule += "---:|";
  }
  out += "\n" + rule + "\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out += "| " + rows[r].first + " |";
    for (std::size_t c = 0; c < cols.size(); ++c)
      out += " " + cell_text(values[r][c], cols[c].decimals, best[c] && *best[c] == r) + " |";
    out += "\n";
  }
  return out;
}

std::vector<Column> forget_columns() {
  std::vector<Column> cols;
  for (Split s : {Split::kForgetSeen, Split::kForgetUnseen}) {
    const std::string tag = s == Split::kForgetSeen ? "seen " : "unseen ";
    cols.push_back({tag + "USR", s, &SplitAggregate::usr, Better::kHigher, 2});
    cols.push_back({tag + "privacy", s, &SplitAggregate::leakage, Better::kLower, 2});
    cols.push_back({tag + "alignment", s, &SplitAggregate::alignment, Better::kHigher, 3});
    cols.push_back({tag + "inform", s, &SplitAggregate::informativeness, Better::kHigher, 2});
    cols.push_back({tag + "hall", s, &SplitAggregate::hallucination, Better::kLower, 2});
  }
  return cols;
}

std::string display_name(const std::string& label) {
  if (label == kOriginalLabel) return "Original";
  if (label == "pubg") return "PUBG";
  if (label == "ga") return "GA";
  if (label == "npo") return "NPO";
  if (label == "random") return "Random";
  if (label == "reject") return "Reject";
  if (label == "bg") return "BG";
  return label;
}

}  // namespace

CellResult load_cell(const std::string& run_dir, std::size_t n) {
  const fs::path root(run_dir);
  const ExperimentConfig cfg = ExperimentConfig::load((root / "config.txt").string());
  CellResult cell;
  cell.n = n;
  cell.world_seed = cfg.world_seed(n);
  const fs::path dir = root / cell_dir_name(n);
  if (fs::exists(dir / "world.jsonl")) {
    try {
      cell.world = read_world((dir / "world.jsonl").string());
    } catch (const std::exception& e) {
      cell.errors.push_back(cell_dir_name(n) + "/world.jsonl unreadable: " + e.what());
    }
  } else {
    cell.errors.push_back(cell_dir_name(n) + "/world.jsonl missing");
  }
  if (!cell.world) return cell;
  std::vector<std::string> labels = {kOriginalLabel, kDirectiveLabel};
  for (Method m : methods_for_cell(cfg, n == cfg.world.forget)) labels.emplace_back(method_name(m));
  for (const std::string& label : labels) {
    const fs::path p = dir / ("eval_" + label + ".csv");
    if (!fs::exists(p)) {
      cell.errors.push_back(cell_dir_name(n) + "/eval_" + label + ".csv missing");
      continue;
    }
    try {
      cell.reports.emplace(label, eval_report_from_csv(read_text_file(p.string()), cell.world->vocab));
    } catch (const std::exception& e) {
      cell.errors.push_back(cell_dir_name(n) + "/eval_" + label + ".csv unreadable: " + e.what());
    }
  }
  return cell;
}

RenderedReport render_report(const std::string& run_dir) {
  RenderedReport out;
  const fs::path root(run_dir);
  const fs::path cfg_path = root / "config.txt";
  if (!fs::exists(cfg_path)) fail(ErrorCode::kIo, "run directory has no config.txt: " + run_dir);
  const ExperimentConfig cfg = ExperimentConfig::load(cfg_path.string());
  const std::string hash = cfg.hash();

  std::string md = "# Unlearning report\n\nconfig " + hash + ", seed " + std::to_string(cfg.seed) + ", " +
                   std::to_string(cfg.world.entities) + " entities\n";
  std::string csv =
      "config_hash,seed,n,label,split,rows,usr,leakage,informativeness,hallucination,alignment,distinct_1,max_run,"
      "length,visual_count,name_fact_count,bigram_precision\n";

  for (std::size_t n : cfg.cells()) {
    const bool main_cell = n == cfg.world.forget;
    const fs::path dir = root / cell_dir_name(n);
    CellResult cell = load_cell(run_dir, n);
    out.gaps.insert(out.gaps.end(), cell.errors.begin(), cell.errors.end());
    std::vector<std::string> labels = {kOriginalLabel, kDirectiveLabel};
    for (Method m : methods_for_cell(cfg, main_cell)) labels.emplace_back(method_name(m));
    const std::map<std::string, EvalReport>& reports = cell.reports;
    auto find = [&](const std::string& label) -> const EvalReport* {
      const auto it = reports.find(label);
      return it == reports.end() ? nullptr : &it->second;
    };

    for (const std::string& label : labels) {
      const EvalReport* r = find(label);
      if (r == nullptr) continue;
      for (const SplitAggregate& a : r->aggregates()) {
        char buf[512];
        std::snprintf(buf, sizeof buf, ",%zu,%s,%s,%zu,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                      n, label.c_str(), split_name(a.split), a.rows, a.usr, a.leakage, a.informativeness,
                      a.hallucination, a.alignment, a.distinct_1, a.max_run, a.length, a.visual_count,
                      a.name_fact_count, a.bigram_precision);
        csv += hash + "," + std::to_string(cfg.seed) + buf;
      }
    }

    std::vector<std::pair<std::string, const EvalReport*>> rows = {{"Original", find(kOriginalLabel)}};
    for (Method m : cfg.methods) rows.emplace_back(display_name(method_name(m)), find(method_name(m)));
    md += "\n## Forget entities, n = " + std::to_string(n) + "\n\n";
    md += markdown_table(rows, 1, forget_columns());

    if (!main_cell) continue;
    md += "\n## Retain entities, n = " + std::to_string(n) + "\n\n";
    md += markdown_table(rows, 1,
                         {{"alignment", Split::kRetain, &SplitAggregate::alignment, Better::kHigher, 3},
                          {"inform", Split::kRetain, &SplitAggregate::informativeness, Better::kHigher, 2}});

    if (cfg.ablation) {
      md += "\n## Ablation, n = " + std::to_string(n) + "\n\n";
      md += markdown_table({{"Original", find(kOriginalLabel)},
                            {"GA loss only", find("ga")},
                            {"BG loss only", find("bg")},
                            {"GA + BG", find("pubg")}},
                           1, forget_columns());
    }

    md += "\n## Original model, plain vs directive prompt, n = " + std::to_string(n) + "\n\n";
    md += "| Prompt | visual tokens | name/fact tokens | bigram precision |\n|---|---:|---:|---:|\n";
    for (const auto& [title, label] :
         std::vector<std::pair<std::string, std::string>>{{"plain", kOriginalLabel}, {"directive", kDirectiveLabel}}) {
      const EvalReport* r = find(label);
      std::optional<double> v, nf, bp;
      if (r != nullptr && !r->rows.empty()) {
        double sv = 0, snf = 0, sbp = 0;
        for (const EvalRow& row : r->rows) {
          sv += row.visual_count;
          snf += row.name_fact_count;
          sbp += row.bigram_precision;
        }
        const double k = static_cast<double>(r->rows.size());
        v = sv / k;
        nf = snf / k;
        bp = sbp / k;
      }
      md += "| " + title + " | " + cell_text(v, 2, false) + " | " + cell_text(nf, 2, false) + " | " +
            cell_text(bp, 3, false) + " |\n";
    }
  }
  if (!out.gaps.empty()) {
    md += "\n## Gaps\n\n";
    for (const std::string& g : out.gaps) md += "- " + g + "\n";
  }
  out.markdown = md;
  out.summary_csv = csv;
  return out;
}

RenderedReport report(const std::string& run_dir) {
  RenderedReport r = render_report(run_dir);
  write_text_file((fs::path(run_dir) / "report.md").string(), r.markdown);
  write_text_file((fs::path(run_dir) / "summary.csv").string(), r.summary_csv);
  return r;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

bool is_forget_row(const EvalRow& r) { return r.split != Split::kRetain; }

double forget_mean(const EvalReport& r, const std::function<double(const EvalRow&)>& f) {
  double s = 0.0;
  std::size_t k = 0;
  for (const EvalRow& row : r.rows)
    if (is_forget_row(row)) {
      s += f(row);
      ++k;
    }
  return k == 0 ? 0.0 : s / static_cast<double>(k);
}

// Criterion-3 style headline for a forget-side run, against the baselines.
Check headline(int criterion, const std::string& name, const CellResult& cell, const std::string& label) {
  Check c{criterion, name, false, ""};
  const auto it = cell.reports.find(label);
  if (it == cell.reports.end()) {
    c.detail = "missing report " + label;
    return c;
  }
  bool ok = true;
  std::string d;
  for (Split s : {Split::kForgetSeen, Split::kForgetUnseen}) {
    const SplitAggregate a = it->second.aggregate(s);
    double best_other = -2.0;
    std::string missing;
    for (const char* b : {"ga", "npo", "random", "reject"}) {
      const auto bt = cell.reports.find(b);
      if (bt == cell.reports.end()) {
        missing += std::string(" ") + b;
        continue;
      }
      best_other = std::max(best_other, bt->second.aggregate(s).alignment);
    }
    const bool pass = a.usr == 1.0 && a.leakage == 1.0 && a.informativeness >= 3.0 && a.hallucination <= 2.0 &&
                      a.alignment > best_other && missing.empty();
    ok = ok && pass;
    d += std::string(split_name(s)) + ": usr " + fmt(a.usr) + " privacy " + fmt(a.leakage) + " inform " +
         fmt(a.informativeness) + " hall " + fmt(a.hallucination) + " align " + fmt(a.alignment) +
         " vs best baseline " + fmt(best_other) + (missing.empty() ? "" : " missing" + missing) + "; ";
  }
  c.passed = ok;
  c.detail = d;
  return c;
}

}  // namespace

std::vector<Check> behaviour_checks(const CellResult& cell) {
  std::vector<Check> out;
  auto get = [&](const std::string& label) -> const EvalReport* {
    const auto it = cell.reports.find(label);
    return it == cell.reports.end() ? nullptr : &it->second;
  };
  auto missing = [&](int crit, const std::string& name, const std::string& label) {
    out.push_back({crit, name, false, "missing report " + label});
  };

  out.push_back(headline(3, "PUBG headline", cell, "pubg"));

  {
    Check c{4, "universal suppression", true, ""};
    for (const char* m : {"pubg", "ga", "npo", "random", "reject"}) {
      const EvalReport* r = get(m);
      if (r == nullptr) {
        c.passed = false;
        c.detail += std::string(m) + " missing; ";
        continue;
      }
      for (Split s : {Split::kForgetSeen, Split::kForgetUnseen}) {
        const SplitAggregate a = r->aggregate(s);
        const bool pass = a.usr == 1.0 && a.leakage == 1.0;
        c.passed = c.passed && pass;
        if (!pass) c.detail += std::string(m) + " " + split_name(s) + " usr " + fmt(a.usr) + " privacy " + fmt(a.leakage) + "; ";
      }
    }
    if (c.passed) c.detail = "all methods usr 1 and privacy 1 on both splits";
    out.push_back(c);
  }

  if (const EvalReport* ga = get("ga")) {
    const double frac = forget_mean(*ga, [](const EvalRow& r) { return (r.distinct_1 < 0.3 || r.max_run >= 5) ? 1.0 : 0.0; });
    out.push_back({5, "GA degenerates", frac >= 0.8, "degenerate fraction " + fmt(frac)});
  } else {
    missing(5, "GA degenerates", "ga");
  }
  if (const EvalReport* npo = get("npo"); npo != nullptr && get(kOriginalLabel) != nullptr) {
    const double len = forget_mean(*npo, [](const EvalRow& r) { return static_cast<double>(r.length); });
    const double orig =
        forget_mean(*get(kOriginalLabel), [](const EvalRow& r) { return static_cast<double>(r.length); });
    out.push_back({5, "NPO short outputs", len < 0.25 * orig, "mean length " + fmt(len) + " vs original " + fmt(orig)});
  } else {
    missing(5, "NPO short outputs", "npo/original");
  }
  if (const EvalReport* rnd = get("random"); rnd != nullptr && cell.world) {
    const EntityWorld& w = *cell.world;
    const double hall = forget_mean(*rnd, [](const EvalRow& r) { return r.hallucination; });
    const double foreign = forget_mean(*rnd, [&](const EvalRow& r) {
      for (Token t : r.output)
        if (w.vocab.class_of(t) == TokenClass::kFact && w.owner_of(t) != r.entity_id) return 1.0;
      return 0.0;
    });
    out.push_back({5, "Random hallucinates", hall >= 4.0 && foreign >= 0.8,
                   "hallucination " + fmt(hall) + ", foreign facts in " + fmt(foreign)});
  } else {
    missing(5, "Random hallucinates", "random");
  }
  if (const EvalReport* rej = get("reject"); rej != nullptr && cell.world) {
    const Tokens& refusal = cell.world->refusal;
    const double frac = forget_mean(*rej, [&](const EvalRow& r) { return r.output == refusal ? 1.0 : 0.0; });
    const double inform = forget_mean(*rej, [](const EvalRow& r) { return r.informativeness; });
    out.push_back({5, "Reject refuses", frac >= 0.9 && inform == 1.0,
                   "refusal fraction " + fmt(frac) + ", inform " + fmt(inform)});
  } else {
    missing(5, "Reject refuses", "reject");
  }

  if (const EvalReport* ga = get("ga")) {
    bool ok = true;
    std::string d;
    for (Split s : {Split::kForgetSeen, Split::kForgetUnseen}) {
      const SplitAggregate a = ga->aggregate(s);
      ok = ok && a.usr == 1.0 && a.informativeness <= 1.5;
      d += std::string(split_name(s)) + ": usr " + fmt(a.usr) + " inform " + fmt(a.informativeness) + "; ";
    }
    out.push_back({6, "GA loss only", ok, d});
  } else {
    missing(6, "GA loss only", "ga");
  }
  if (const EvalReport* bg = get("bg")) {
    bool ok = true;
    std::string d;
    for (Split s : {Split::kForgetSeen, Split::kForgetUnseen}) {
      const SplitAggregate a = bg->aggregate(s);
      ok = ok && a.usr <= 0.2 && a.leakage >= 3.0;
      d += std::string(split_name(s)) + ": usr " + fmt(a.usr) + " privacy " + fmt(a.leakage) + "; ";
    }
    out.push_back({6, "BG loss only fails to unlearn", ok, d});
  } else {
    missing(6, "BG loss only fails to unlearn", "bg");
  }
  out.push_back(headline(6, "GA + BG headline", cell, "pubg"));

  if (const EvalReport* pubg = get("pubg"); pubg != nullptr && get(kOriginalLabel) && get("reject")) {
    const double p = pubg->aggregate(Split::kRetain).informativeness;
    const double o = get(kOriginalLabel)->aggregate(Split::kRetain).informativeness;
    const double r = get("reject")->aggregate(Split::kRetain).informativeness;
    out.push_back({7, "PUBG retain informativeness", std::abs(p - o) <= 0.5,
                   "PUBG " + fmt(p) + " vs original " + fmt(o)});
    out.push_back({7, "Reject retain below PUBG", r < p, "Reject " + fmt(r) + " vs PUBG " + fmt(p)});
  } else {
    missing(7, "retain informativeness", "pubg/original/reject");
  }

  if (get(kOriginalLabel) != nullptr && get(kDirectiveLabel) != nullptr) {
    auto mean = [](const EvalReport& r, double EvalRow::*f) {
      double s = 0.0;
      for (const EvalRow& row : r.rows) s += row.*f;
      return r.rows.empty() ? 0.0 : s / static_cast<double>(r.rows.size());
    };
    const EvalReport& plain = *get(kOriginalLabel);
    const EvalReport& dir = *get(kDirectiveLabel);
    const double nf_p = mean(plain, &EvalRow::name_fact_count), nf_d = mean(dir, &EvalRow::name_fact_count);
    const double v_p = mean(plain, &EvalRow::visual_count), v_d = mean(dir, &EvalRow::visual_count);
    const double b_p = mean(plain, &EvalRow::bigram_precision), b_d = mean(dir, &EvalRow::bigram_precision);
    out.push_back({8, "recognized vs directive statistics", nf_p > 5.0 * nf_d && v_d > 2.0 * v_p && b_p > b_d,
                   "name/fact " + fmt(nf_p) + " vs " + fmt(nf_d) + ", visual " + fmt(v_p) + " vs " + fmt(v_d) +
                       ", bigram " + fmt(b_p) + " vs " + fmt(b_d)});
  } else {
    missing(8, "recognized vs directive statistics", "original/original-directive");
  }
  return out;
}

}  // namespace unlearnlab
