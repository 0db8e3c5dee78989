// SPDX-License-Identifier: Apache-2.0
//
// unlearn-lab: command-line front end over the C interface.
#include "unlearnlab.h"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <memory>
#include <string>
#include <vector>

namespace {

struct Failure {
  int code;
  std::string message;
};

void check(ul_status s, const std::string& what) {
  if (s != UL_OK) throw Failure{2, what + ": " + ul_status_string(s) + ": " + ul_last_error()};
}

template <typename T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using ConfigPtr = std::unique_ptr<ul_config, Deleter<ul_config, ul_config_free>>;
using WorldPtr = std::unique_ptr<ul_world, Deleter<ul_world, ul_world_free>>;
using ModelPtr = std::unique_ptr<ul_model, Deleter<ul_model, ul_model_free>>;
using RunPtr = std::unique_ptr<ul_run, Deleter<ul_run, ul_run_free>>;

std::string fetch(const std::function<ul_status(char*, size_t, size_t*)>& f, const std::string& what) {
  size_t needed = 0;
  f(nullptr, 0, &needed);
  std::string buf(needed, '\0');
  check(f(buf.data(), buf.size(), &needed), what);
  buf.resize(needed - 1);
  return buf;
}

// Options shared by every subcommand that needs an experiment configuration.
struct ConfigOptions {
  std::string path;
  std::vector<std::string> sets;

  void attach(CLI::App* app) {
    app->add_option("--config", path, "key = value configuration file")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "override a configuration key (key=value), repeatable");
  }

  ConfigPtr load(const std::vector<std::pair<std::string, std::string>>& extra = {}) const {
    ul_config* raw = nullptr;
    if (path.empty()) check(ul_config_new(&raw), "config");
    else check(ul_config_load(path.c_str(), &raw), "load config " + path);
    ConfigPtr cfg(raw);
    for (const std::string& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw Failure{2, "--set expects key=value, got '" + kv + "'"};
      check(ul_config_set(cfg.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()), "--set " + kv);
    }
    for (const auto& [k, v] : extra) check(ul_config_set(cfg.get(), k.c_str(), v.c_str()), "--" + k);
    return cfg;
  }
};

WorldPtr load_world(const std::string& path) {
  ul_world* w = nullptr;
  check(ul_world_load(path.c_str(), &w), "load world " + path);
  return WorldPtr(w);
}

ModelPtr load_model(const std::string& path) {
  ul_model* m = nullptr;
  check(ul_model_load(path.c_str(), &m), "load model " + path);
  return ModelPtr(m);
}

void ensure_parent(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entity unlearning laboratory for a toy vision-language model"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ul_version()));

  // gen-world
  auto* gen = app.add_subcommand("gen-world", "generate a synthetic entity world");
  ConfigOptions gen_cfg;
  gen_cfg.attach(gen);
  std::optional<std::size_t> gen_entities, gen_forget;
  std::optional<std::uint64_t> gen_seed;
  std::string gen_out;
  gen->add_option("--entities", gen_entities, "number of entities");
  gen->add_option("--forget", gen_forget, "number of forget entities");
  gen->add_option("--seed", gen_seed, "world seed");
  gen->add_option("--out", gen_out, "output JSON-lines path")->required();

  // train-base
  auto* base = app.add_subcommand("train-base", "train the original model on a world");
  ConfigOptions base_cfg;
  base_cfg.attach(base);
  std::string base_world, base_out, base_trace;
  base->add_option("--world", base_world, "world file")->required()->check(CLI::ExistingFile);
  base->add_option("--out", base_out, "checkpoint path")->required();
  base->add_option("--trace", base_trace, "loss trace CSV path");

  // unlearn
  auto* unl = app.add_subcommand("unlearn", "run one unlearning method from an original checkpoint");
  ConfigOptions unl_cfg;
  unl_cfg.attach(unl);
  std::string unl_world, unl_base, unl_method, unl_out, unl_refs, unl_trace;
  unl->add_option("--world", unl_world, "world file")->required()->check(CLI::ExistingFile);
  unl->add_option("--base", unl_base, "original checkpoint")->required()->check(CLI::ExistingFile);
  unl->add_option("--method", unl_method, "pubg, ga, npo, random, reject or bg")
      ->required()
      ->check(CLI::IsMember({"pubg", "ga", "npo", "random", "reject", "bg"}));
  unl->add_option("--out", unl_out, "checkpoint path")->required();
  unl->add_option("--references", unl_refs, "reference cache; created when missing");
  unl->add_option("--trace", unl_trace, "loss trace CSV path");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on every split");
  ConfigOptions ev_cfg;
  ev_cfg.attach(ev);
  std::string ev_world, ev_model, ev_label, ev_out;
  bool ev_directive = false;
  ev->add_option("--world", ev_world, "world file")->required()->check(CLI::ExistingFile);
  ev->add_option("--model", ev_model, "checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--label", ev_label, "method label written to the report")->required();
  ev->add_option("--out", ev_out, "evaluation CSV path")->required();
  ev->add_flag("--directive", ev_directive, "prompt with the forget directive");

  // report
  auto* rep = app.add_subcommand("report", "render markdown tables for a run directory");
  std::string rep_dir;
  rep->add_option("--run-dir", rep_dir, "run directory")->required()->check(CLI::ExistingDirectory);

  // verify-kl
  auto* kl = app.add_subcommand("verify-kl", "check the KL rewrite on an enumerable instance");
  std::size_t kl_vocab = 6, kl_len = 3, kl_samples = 100000;
  std::uint64_t kl_seed = 1;
  kl->add_option("--vocab", kl_vocab, "vocabulary size (at most 8)");
  kl->add_option("--max-len", kl_len, "maximum response length (at most 3)");
  kl->add_option("--seed", kl_seed, "model seed");
  kl->add_option("--samples", kl_samples, "Monte-Carlo samples");

  // run-all
  auto* all = app.add_subcommand("run-all", "run the full pipeline and render the report");
  ConfigOptions all_cfg;
  all_cfg.attach(all);
  std::string all_out;
  std::optional<std::uint64_t> all_seed;
  bool all_assert = false;
  all->add_option("--out", all_out, "run directory (default: $UNLEARN_LAB_OUT/run-<config hash>)");
  all->add_option("--seed", all_seed, "experiment seed");
  all->add_flag("--assert", all_assert, "exit nonzero when an acceptance check fails");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      std::vector<std::pair<std::string, std::string>> extra;
      if (gen_entities) extra.emplace_back("world.entities", std::to_string(*gen_entities));
      if (gen_forget) extra.emplace_back("world.forget", std::to_string(*gen_forget));
      if (gen_seed) extra.emplace_back("seed", std::to_string(*gen_seed));
      ConfigPtr cfg = gen_cfg.load(extra);
      ul_world* w = nullptr;
      check(ul_world_generate(cfg.get(), &w), "generate world");
      WorldPtr world(w);
      ensure_parent(gen_out);
      check(ul_world_save(world.get(), gen_out.c_str()), "save world");
      size_t e = 0, f = 0, v = 0;
      uint64_t s = 0;
      ul_world_info(world.get(), &e, &f, &v, &s);
      std::printf("world: %zu entities, %zu forget, vocabulary %zu, seed %llu -> %s\n", e, f, v,
                  static_cast<unsigned long long>(s), gen_out.c_str());
    } else if (base->parsed()) {
      ConfigPtr cfg = base_cfg.load();
      WorldPtr world = load_world(base_world);
      ul_model* m = nullptr;
      double nll = 0.0;
      if (!base_trace.empty()) ensure_parent(base_trace);
      check(ul_base_train(cfg.get(), world.get(), base_trace.empty() ? nullptr : base_trace.c_str(), &m, &nll),
            "train base");
      ModelPtr model(m);
      ensure_parent(base_out);
      check(ul_model_save(model.get(), base_out.c_str()), "save model");
      std::printf("original model: per-token NLL %.4f -> %s\n", nll, base_out.c_str());
    } else if (unl->parsed()) {
      ConfigPtr cfg = unl_cfg.load();
      WorldPtr world = load_world(unl_world);
      ModelPtr base_model = load_model(unl_base);
      const bool needs_refs = unl_method == "pubg" || unl_method == "bg";
      if (needs_refs && !unl_refs.empty() && !std::filesystem::exists(unl_refs)) {
        ensure_parent(unl_refs);
        check(ul_reference_build(cfg.get(), world.get(), base_model.get(), unl_refs.c_str()), "build references");
      }
      if (!unl_trace.empty()) ensure_parent(unl_trace);
      ul_model* m = nullptr;
      check(ul_unlearn(cfg.get(), world.get(), base_model.get(), unl_method.c_str(),
                       unl_refs.empty() ? nullptr : unl_refs.c_str(), unl_trace.empty() ? nullptr : unl_trace.c_str(),
                       &m),
            "unlearn " + unl_method);
      ModelPtr model(m);
      ensure_parent(unl_out);
      check(ul_model_save(model.get(), unl_out.c_str()), "save model");
      std::printf("%s: unlearned model -> %s\n", unl_method.c_str(), unl_out.c_str());
    } else if (ev->parsed()) {
      ConfigPtr cfg = ev_cfg.load();
      WorldPtr world = load_world(ev_world);
      ModelPtr model = load_model(ev_model);
      ensure_parent(ev_out);
      check(ul_evaluate(cfg.get(), world.get(), model.get(), ev_label.c_str(), ev_directive ? 1 : 0, ev_out.c_str()),
            "evaluate");
      std::printf("%s: evaluation -> %s\n", ev_label.c_str(), ev_out.c_str());
    } else if (rep->parsed()) {
      size_t gaps = 0;
      check(ul_report(rep_dir.c_str(), &gaps), "report");
      std::printf("report: %s/report.md (%zu gaps)\n", rep_dir.c_str(), gaps);
    } else if (kl->parsed()) {
      ul_kl_result r{};
      check(ul_verify_kl(kl_vocab, kl_len, kl_seed, kl_samples, &r), "verify-kl");
      std::printf("sequences %zu, reference mass %.15f\n", r.sequences, r.reference_mass);
      std::printf("KL %.12f, expected NLL %.12f, entropy %.12f\n", r.kl, r.expected_nll, r.entropy);
      std::printf("gradient: max |dKL - dNLL| %.3e (max |grad| %.3e) %s\n", r.max_grad_diff, r.max_grad_abs,
                  r.grad_ok ? "ok" : "FAIL");
      std::printf("NLL - KL equals entropy: %s\n", r.entropy_ok ? "ok" : "FAIL");
      std::printf("sampled NLL %.6f +- %.6f, directional %.6f +- %.6f vs exact %.6f: %s\n", r.mc_mean, r.mc_stderr,
                  r.mc_dir_mean, r.mc_dir_stderr, r.exact_dir, r.mc_ok ? "ok" : "FAIL");
      return (r.grad_ok && r.entropy_ok && r.mc_ok) ? 0 : 1;
    } else if (all->parsed()) {
      std::vector<std::pair<std::string, std::string>> extra;
      if (all_seed) extra.emplace_back("seed", std::to_string(*all_seed));
      ConfigPtr cfg = all_cfg.load(extra);
      if (all_out.empty()) {
        const std::string root = fetch([](char* b, size_t c, size_t* n) { return ul_default_output_root(b, c, n); },
                                       "output root");
        const std::string hash =
            fetch([&](char* b, size_t c, size_t* n) { return ul_config_hash(cfg.get(), b, c, n); }, "config hash");
        all_out = (std::filesystem::path(root) / ("run-" + hash)).string();
      }
      ul_run* r = nullptr;
      check(ul_run_experiment(cfg.get(), all_out.c_str(), &r), "run-all");
      RunPtr run(r);
      size_t errors = 0, checks = 0;
      ul_run_error_count(run.get(), &errors);
      for (size_t i = 0; i < errors; ++i) {
        const char* msg = nullptr;
        ul_run_error(run.get(), i, &msg);
        std::fprintf(stderr, "stage failure: %s\n", msg);
      }
      ul_run_check_count(run.get(), &checks);
      bool ok = errors == 0;
      for (size_t i = 0; i < checks; ++i) {
        int criterion = 0, passed = 0;
        const char *name = nullptr, *detail = nullptr;
        ul_run_check(run.get(), i, &criterion, &passed, &name, &detail);
        ok = ok && passed != 0;
        std::printf("[%s] criterion %d %s: %s\n", passed ? "pass" : "FAIL", criterion, name, detail);
      }
      std::printf("run directory: %s\n", all_out.c_str());
      if (all_assert && !ok) return 1;
    }
  } catch (const Failure& f) {
    std::fprintf(stderr, "error: %s\n", f.message.c_str());
    return f.code;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
