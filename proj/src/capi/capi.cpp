// SPDX-License-Identifier: Apache-2.0
#include "unlearnlab.h"

#include "base_training.hpp"
#include "harness.hpp"
#include "metrics.hpp"
#include "unlearn.hpp"
#include "world_io.hpp"

#include <cstring>
#include <exception>
#include <memory>
#include <new>
#include <string>

using namespace unlearnlab;

struct ul_config {
  ExperimentConfig cfg;
};
struct ul_world {
  EntityWorld world;
};
struct ul_model {
  SeqModel model;
};
struct ul_run {
  ExperimentResult result;
  std::vector<std::string> errors;
  std::vector<Check> checks;
};

namespace {

thread_local std::string g_last_error;

ul_status to_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::kInvalidConfig: return UL_ERR_INVALID_CONFIG;
    case ErrorCode::kDomain: return UL_ERR_DOMAIN;
    case ErrorCode::kNumeric: return UL_ERR_NUMERIC;
    case ErrorCode::kInvalidBatch: return UL_ERR_INVALID_BATCH;
    case ErrorCode::kSize: return UL_ERR_SIZE;
    case ErrorCode::kIo: return UL_ERR_IO;
    case ErrorCode::kLayoutMismatch: return UL_ERR_LAYOUT_MISMATCH;
    case ErrorCode::kUndefinedInput: return UL_ERR_UNDEFINED_INPUT;
    case ErrorCode::kBaseModel: return UL_ERR_BASE_MODEL;
  }
  return UL_ERR_INTERNAL;
}

template <typename F>
ul_status guard(F&& f) {
  try {
    g_last_error.clear();
    return f();
  } catch (const Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return UL_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return UL_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown exception";
    return UL_ERR_INTERNAL;
  }
}

ul_status null_arg(const char* what) {
  g_last_error = std::string("null argument: ") + what;
  return UL_ERR_NULL_ARGUMENT;
}

ul_status copy_out(const std::string& s, char* buf, size_t cap, size_t* needed) {
  if (needed != nullptr) *needed = s.size() + 1;
  if (buf == nullptr || cap < s.size() + 1) {
    if (buf != nullptr && cap > 0) buf[0] = '\0';
    g_last_error = "buffer too small";
    return UL_ERR_SIZE;
  }
  std::memcpy(buf, s.c_str(), s.size() + 1);
  return UL_OK;
}

std::vector<ReferenceSample> references_for(const ExperimentConfig& cfg, const EntityWorld& world,
                                            const SeqModel& base) {
  return build_reference_set(clone_frozen(base), world, reference_options_for(cfg, world.seed));
}

std::map<std::string, std::string> provenance(const ExperimentConfig& cfg, const EntityWorld& world,
                                              const std::string& role) {
  return {{"config_hash", cfg.hash()}, {"seed", std::to_string(cfg.seed)},
          {"world_seed", std::to_string(world.seed)}, {"role", role}};
}

std::string trace_csv(const LossTrace& trace, const ExperimentConfig& cfg) {
  return with_provenance_columns(trace.to_csv(), cfg.hash(), cfg.seed);
}

}  // namespace

extern "C" {

const char* ul_version(void) { return "1.0.0"; }

const char* ul_status_string(ul_status status) {
  switch (status) {
    case UL_OK: return "ok";
    case UL_ERR_INVALID_CONFIG: return "invalid config";
    case UL_ERR_DOMAIN: return "domain error";
    case UL_ERR_NUMERIC: return "numeric error";
    case UL_ERR_INVALID_BATCH: return "invalid batch";
    case UL_ERR_SIZE: return "size error";
    case UL_ERR_IO: return "i/o error";
    case UL_ERR_LAYOUT_MISMATCH: return "layout mismatch";
    case UL_ERR_UNDEFINED_INPUT: return "undefined input";
    case UL_ERR_BASE_MODEL: return "base model error";
    case UL_ERR_NULL_ARGUMENT: return "null argument";
    case UL_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* ul_last_error(void) { return g_last_error.c_str(); }

ul_status ul_config_new(ul_config** out) {
  if (out == nullptr) return null_arg("out");
  return guard([&] {
    *out = new ul_config{};
    return UL_OK;
  });
}

ul_status ul_config_load(const char* path, ul_config** out) {
  if (path == nullptr || out == nullptr) return null_arg("path/out");
  return guard([&] {
    *out = new ul_config{ExperimentConfig::load(path)};
    return UL_OK;
  });
}

ul_status ul_config_set(ul_config* cfg, const char* key, const char* value) {
  if (cfg == nullptr || key == nullptr || value == nullptr) return null_arg("cfg/key/value");
  return guard([&] {
    ExperimentConfig next = cfg->cfg;
    next.set(key, value);
    cfg->cfg = std::move(next);
    return UL_OK;
  });
}

ul_status ul_config_get(const ul_config* cfg, const char* key, char* buf, size_t cap, size_t* needed) {
  if (cfg == nullptr || key == nullptr) return null_arg("cfg/key");
  return guard([&] { return copy_out(cfg->cfg.get(key), buf, cap, needed); });
}

ul_status ul_config_text(const ul_config* cfg, char* buf, size_t cap, size_t* needed) {
  if (cfg == nullptr) return null_arg("cfg");
  return guard([&] { return copy_out(cfg->cfg.to_text(), buf, cap, needed); });
}

ul_status ul_config_hash(const ul_config* cfg, char* buf, size_t cap, size_t* needed) {
  if (cfg == nullptr) return null_arg("cfg");
  return guard([&] { return copy_out(cfg->cfg.hash(), buf, cap, needed); });
}

ul_status ul_config_validate(const ul_config* cfg) {
  if (cfg == nullptr) return null_arg("cfg");
  return guard([&] {
    cfg->cfg.validate();
    return UL_OK;
  });
}

void ul_config_free(ul_config* cfg) { delete cfg; }

ul_status ul_default_output_root(char* buf, size_t cap, size_t* needed) {
  return guard([&] { return copy_out(default_output_root(), buf, cap, needed); });
}

ul_status ul_world_generate(const ul_config* cfg, ul_world** out) {
  if (cfg == nullptr || out == nullptr) return null_arg("cfg/out");
  return guard([&] {
    EntityWorld w = generate_world(cfg->cfg.world, cfg->cfg.world_seed(cfg->cfg.world.forget));
    w.provenance = {{"config_hash", cfg->cfg.hash()}, {"seed", std::to_string(cfg->cfg.seed)}};
    *out = new ul_world{std::move(w)};
    return UL_OK;
  });
}

ul_status ul_world_load(const char* path, ul_world** out) {
  if (path == nullptr || out == nullptr) return null_arg("path/out");
  return guard([&] {
    *out = new ul_world{read_world(path)};
    return UL_OK;
  });
}

ul_status ul_world_save(const ul_world* world, const char* path) {
  if (world == nullptr || path == nullptr) return null_arg("world/path");
  return guard([&] {
    write_world(world->world, path);
    return UL_OK;
  });
}

ul_status ul_world_info(const ul_world* world, size_t* entities, size_t* forget, size_t* vocab_size,
                        uint64_t* seed) {
  if (world == nullptr) return null_arg("world");
  if (entities != nullptr) *entities = world->world.entities.size();
  if (forget != nullptr) *forget = world->world.forget_ids.size();
  if (vocab_size != nullptr) *vocab_size = world->world.vocab.size();
  if (seed != nullptr) *seed = world->world.seed;
  g_last_error.clear();
  return UL_OK;
}

void ul_world_free(ul_world* world) { delete world; }

ul_status ul_base_train(const ul_config* cfg, const ul_world* world, const char* trace_csv_path, ul_model** out,
                        double* final_nll) {
  if (cfg == nullptr || world == nullptr || out == nullptr) return null_arg("cfg/world/out");
  return guard([&] {
    const ExperimentConfig& c = cfg->cfg;
    const EntityWorld& w = world->world;
    BaseTrainingResult br = train_base_model(w, model_hyper_for(c, w), base_optimizer_for(c, w.seed),
                                             c.directive_fraction, base_init_seed(w.seed));
    if (trace_csv_path != nullptr) write_text_file(trace_csv_path, trace_csv(br.trace, c));
    if (final_nll != nullptr) *final_nll = br.final_nll;
    *out = new ul_model{std::move(br.model)};
    return UL_OK;
  });
}

ul_status ul_model_load(const char* path, ul_model** out) {
  if (path == nullptr || out == nullptr) return null_arg("path/out");
  return guard([&] {
    *out = new ul_model{load_checkpoint(path)};
    return UL_OK;
  });
}

ul_status ul_model_save(const ul_model* model, const char* path) {
  if (model == nullptr || path == nullptr) return null_arg("model/path");
  return guard([&] {
    save_checkpoint(model->model, path);
    return UL_OK;
  });
}

ul_status ul_model_param_count(const ul_model* model, size_t* count) {
  if (model == nullptr || count == nullptr) return null_arg("model/count");
  *count = model->model.params().size();
  g_last_error.clear();
  return UL_OK;
}

void ul_model_free(ul_model* model) { delete model; }

ul_status ul_reference_build(const ul_config* cfg, const ul_world* world, const ul_model* base, const char* path) {
  if (cfg == nullptr || world == nullptr || base == nullptr || path == nullptr)
    return null_arg("cfg/world/base/path");
  return guard([&] {
    const auto refs = references_for(cfg->cfg, world->world, base->model);
    write_text_file(path, reference_set_to_jsonl(refs, provenance(cfg->cfg, world->world, "references")));
    return UL_OK;
  });
}

ul_status ul_unlearn(const ul_config* cfg, const ul_world* world, const ul_model* base, const char* method,
                     const char* references_path, const char* trace_csv_path, ul_model** out) {
  if (cfg == nullptr || world == nullptr || base == nullptr || method == nullptr || out == nullptr)
    return null_arg("cfg/world/base/method/out");
  return guard([&] {
    const ExperimentConfig& c = cfg->cfg;
    const EntityWorld& w = world->world;
    const Method m = method_from_name(method);
    UnlearnTask task = make_task(c, m, w.seed);
    if (m == Method::kPubg || m == Method::kBgOnly)
      task.references = references_path != nullptr ? reference_set_from_jsonl(read_text_file(references_path))
                                                   : references_for(c, w, base->model);
    UnlearnResult ur = run_unlearning(task, base->model, w);
    if (trace_csv_path != nullptr) write_text_file(trace_csv_path, trace_csv(ur.trace, c));
    if (ur.trace.aborted) fail(ErrorCode::kNumeric, "unlearning aborted: " + ur.trace.error);
    *out = new ul_model{std::move(ur.model)};
    return UL_OK;
  });
}

ul_status ul_evaluate(const ul_config* cfg, const ul_world* world, const ul_model* model, const char* label,
                      int directive, const char* csv_path) {
  if (cfg == nullptr || world == nullptr || model == nullptr || label == nullptr || csv_path == nullptr)
    return null_arg("cfg/world/model/label/csv_path");
  return guard([&] {
    const EntityWorld& w = world->world;
    EvalOptions o;
    o.max_len = cfg->cfg.eval_max_len;
    o.directive = directive != 0;
    EvalReport r = evaluate(model->model, w, {Split::kForgetSeen, Split::kForgetUnseen, Split::kRetain},
                            SummaryIndex::build(w), o);
    r.method = label;
    r.config_hash = cfg->cfg.hash();
    r.seed = cfg->cfg.seed;
    write_text_file(csv_path, r.to_csv(w.vocab));
    return UL_OK;
  });
}

ul_status ul_report(const char* run_dir, size_t* gaps) {
  if (run_dir == nullptr) return null_arg("run_dir");
  return guard([&] {
    const RenderedReport r = report(run_dir);
    if (gaps != nullptr) *gaps = r.gaps.size();
    return UL_OK;
  });
}

ul_status ul_verify_kl(size_t vocab_size, size_t max_len, uint64_t seed, size_t samples, ul_kl_result* out) {
  if (out == nullptr) return null_arg("out");
  return guard([&] {
    KlVerifyConfig kc;
    kc.vocab_size = vocab_size;
    kc.max_len = max_len;
    kc.seed = seed;
    kc.mc_samples = samples;
    const KlVerifyReport r = verify_kl_rewrite(kc);
    *out = ul_kl_result{r.sequences,     r.reference_mass, r.kl,        r.expected_nll, r.entropy,
                        r.max_grad_diff, r.max_grad_abs,   r.mc_mean,   r.mc_stderr,    r.mc_dir_mean,
                        r.mc_dir_stderr, r.exact_dir,      r.grad_ok,   r.entropy_ok,   r.mc_ok};
    return UL_OK;
  });
}

ul_status ul_run_experiment(const ul_config* cfg, const char* out_dir, ul_run** out) {
  if (cfg == nullptr || out == nullptr) return null_arg("cfg/out");
  return guard([&] {
    ExperimentConfig c = cfg->cfg;
    c.out_dir = out_dir != nullptr ? out_dir : "";
    auto run = std::make_unique<ul_run>();
    run->result = run_experiment(c);
    for (const CellResult& cell : run->result.cells)
      for (const std::string& e : cell.errors) run->errors.push_back("n" + std::to_string(cell.n) + " " + e);
    if (const CellResult* main = run->result.cell(c.world.forget)) run->checks = behaviour_checks(*main);
    *out = run.release();
    return UL_OK;
  });
}

ul_status ul_run_error_count(const ul_run* run, size_t* count) {
  if (run == nullptr || count == nullptr) return null_arg("run/count");
  *count = run->errors.size();
  return UL_OK;
}

ul_status ul_run_error(const ul_run* run, size_t index, const char** message) {
  if (run == nullptr || message == nullptr) return null_arg("run/message");
  if (index >= run->errors.size()) {
    g_last_error = "error index out of range";
    return UL_ERR_DOMAIN;
  }
  *message = run->errors[index].c_str();
  return UL_OK;
}

ul_status ul_run_check_count(const ul_run* run, size_t* count) {
  if (run == nullptr || count == nullptr) return null_arg("run/count");
  *count = run->checks.size();
  return UL_OK;
}

ul_status ul_run_check(const ul_run* run, size_t index, int* criterion, int* passed, const char** name,
                       const char** detail) {
  if (run == nullptr) return null_arg("run");
  if (index >= run->checks.size()) {
    g_last_error = "check index out of range";
    return UL_ERR_DOMAIN;
  }
  const Check& c = run->checks[index];
  if (criterion != nullptr) *criterion = c.criterion;
  if (passed != nullptr) *passed = c.passed ? 1 : 0;
  if (name != nullptr) *name = c.name.c_str();
  if (detail != nullptr) *detail = c.detail.c_str();
  return UL_OK;
}

void ul_run_free(ul_run* run) { delete run; }

}  // extern "C"
