// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite. Prints one pass/fail line per criterion and exits nonzero
// when any criterion fails.
//
// usage: acceptance <path to unlearn-lab> [work directory]
#include "base_training.hpp"
#include "harness.hpp"
#include "metrics.hpp"
#include "optim.hpp"
#include "seqmodel.hpp"
#include "unlearn.hpp"
#include "world.hpp"
#include "world_io.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

using namespace unlearnlab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      passed = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Five-point central difference of f along coordinate i.
double central_difference(const std::function<double(const SeqModel&)>& f, const SeqModel& m, std::size_t i,
                          double h) {
  auto at = [&](double delta) {
    SeqModel c = m;
    c.params()[i] += delta;
    return f(c);
  };
  return (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
}

// Worst relative error over every coordinate; coordinates where both values
// are below `floor` in magnitude are compared on that scale.
double worst_relative_error(const std::vector<double>& analytic, const std::function<double(const SeqModel&)>& f,
                            const SeqModel& m, double floor = 1e-8) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double fd = central_difference(f, m, i, 1e-3);
    const double denom = std::max({std::abs(analytic[i]), std::abs(fd), floor});
    worst = std::max(worst, std::abs(analytic[i] - fd) / denom);
  }
  return worst;
}

Outcome criterion_gradients() {
  Outcome o;
  // Model log-probability on a tiny model (d_model 4, vocabulary 8), with and
  // without low-rank adapters.
  for (std::size_t rank : {std::size_t{0}, std::size_t{2}}) {
    ModelHyper h;
    h.vocab_size = 8;
    h.d_model = 4;
    h.prefix_len = 2;
    h.layers = 2;
    h.heads = 2;
    h.mlp_hidden = 6;
    h.max_positions = 12;
    h.image_dim = 3;
    h.adapter_rank = rank;
    h.adapter_alpha = 2.0;
    SeqModel m(h, 31);
    Rng rng(32);
    std::normal_distribution<double> nd(0.0, 0.4);
    for (double& v : m.params()) v += nd(rng);
    if (rank > 0) m.set_adapter_enabled(true);
    const std::vector<double> img0{0.3, -0.8, 0.5}, img1{-0.6, 0.1, 0.7};
    const std::vector<SeqRow> rows{{img0, {3, 4}, {5, 6, 2}}, {img1, {3}, {7, 2}}, {img0, {4, 4, 3}, {2}}};
    const SeqBatch batch = make_batch(rows, h);
    const std::vector<double> w{0.7, -1.3, 0.4};
    const LogprobGrad g = weighted_logprob_grad(m, batch, w);
    const double worst = worst_relative_error(
        g.grad,
        [&](const SeqModel& mm) {
          const auto lp = batch_logprob(mm, batch);
          return w[0] * lp[0] + w[1] * lp[1] + w[2] * lp[2];
        },
        m);
    o.require(worst < 1e-4, "model rank " + std::to_string(rank) + " rel err " + fmt("%.2e", worst));
    o.detail += (o.detail.empty() ? "" : ", ") + std::string(rank ? "adapter " : "full ") + fmt("%.2e", worst);
  }

  // Unlearning objectives on a tiny world-sized model.
  WorldConfig wc;
  wc.entities = 8;
  wc.forget = 2;
  wc.visual_pool = 8;
  wc.image_dim = 8;
  const EntityWorld world = generate_world(wc, 5);
  ModelHyper base;
  base.d_model = 4;
  base.mlp_hidden = 6;
  base.layers = 1;
  base.prefix_len = 1;
  SeqModel m(hyper_for_world(world, base), 9);
  const FrozenModel frozen = clone_frozen(m);
  Rng rng(10);
  std::normal_distribution<double> nd(0.0, 0.1);
  for (double& v : m.params()) v += nd(rng);
  std::vector<ForgetItem> batch;
  std::vector<ReferenceSample> refs;
  for (std::size_t id : world.forget_ids) {
    batch.push_back({id, 0, world.responses[id].responses[0]});
    ReferenceSample r;
    r.entity_id = id;
    r.o_star = visual_description(world, id);
    refs.push_back(r);
  }
  const LossEval pubg = loss_pubg(m, world, batch, refs);
  const double wp = worst_relative_error(
      pubg.grad, [&](const SeqModel& mm) { return loss_pubg(mm, world, batch, refs).loss; }, m);
  o.require(wp < 1e-4, "paired objective rel err " + fmt("%.2e", wp));
  const LossEval npo = loss_npo(m, frozen, world, batch, 0.5);
  const double wn = worst_relative_error(
      npo.grad, [&](const SeqModel& mm) { return loss_npo(mm, frozen, world, batch, 0.5).loss; }, m);
  o.require(wn < 1e-4, "NPO rel err " + fmt("%.2e", wn));
  o.detail += ", paired objective " + fmt("%.2e", wp) + ", NPO " + fmt("%.2e", wn);
  return o;
}

Outcome criterion_kl() {
  Outcome o;
  struct Case {
    std::size_t vocab, len;
    std::uint64_t seed;
  };
  for (const Case c : {Case{6, 3, 1}, Case{8, 3, 2}, Case{4, 2, 3}}) {
    KlVerifyConfig cfg;
    cfg.vocab_size = c.vocab;
    cfg.max_len = c.len;
    cfg.seed = c.seed;
    cfg.mc_samples = 100000;
    const KlVerifyReport r = verify_kl_rewrite(cfg);
    const std::string tag = "V=" + std::to_string(c.vocab) + " L=" + std::to_string(c.len);
    o.require(r.max_grad_diff <= 1e-8, tag + " max grad diff " + fmt("%.2e", r.max_grad_diff));
    o.require(r.grad_ok && r.entropy_ok, tag + " exact identity");
    o.require(r.mc_ok, tag + " sampled estimator outside 3 sigma");
    o.require(std::abs(r.reference_mass - 1.0) < 1e-12, tag + " enumeration misses mass");
    o.detail += (o.detail.empty() ? "" : ", ") + tag + ": grad diff " + fmt("%.1e", r.max_grad_diff) + ", MC " +
                fmt("%.4f", r.mc_mean) + "+-" + fmt("%.4f", r.mc_stderr) + " vs " + fmt("%.4f", r.expected_nll);
  }
  return o;
}

Outcome criterion_metric_units() {
  Outcome o;
  // tf-idf bounds and monotonicity
  std::vector<bool> special(8, false);
  special[0] = special[1] = special[2] = true;
  const SummaryIndex idx = SummaryIndex::build({{3, 4}, {4, 5}, {6}}, special, 8);
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<Token> tok(0, 7);
  bool bounded = true, monotone = true;
  for (int trial = 0; trial < 2000; ++trial) {
    Tokens out;
    for (int i = 0, n = 1 + static_cast<int>(rng() % 6); i < n; ++i) out.push_back(tok(rng));
    const Tokens& s = idx.summaries()[rng() % 3];
    const double p = tfidf_precision(out, s, idx);
    bounded = bounded && p >= 0.0 && p <= 1.0;
    for (Token extra = 3; extra < 8; ++extra) {
      if (std::find(s.begin(), s.end(), extra) != s.end()) continue;
      Tokens longer = out;
      longer.push_back(extra);
      monotone = monotone && tfidf_precision(longer, s, idx) <= p;
    }
  }
  o.require(bounded, "tf-idf outside [0,1]");
  o.require(monotone, "tf-idf increased after a non-matching token");
  o.require(tfidf_precision({3, 4}, {3, 4}, idx) == 1.0, "tf-idf of the summary itself");
  o.require(tfidf_precision({}, {3, 4}, idx) == 0.0, "tf-idf of empty output");

  // USR tie rule
  const EntityWorld w = generate_world(WorldConfig{}, 3);
  const SummaryIndex widx = SummaryIndex::build(w);
  std::vector<std::size_t> all;
  for (const Entity& e : w.entities) all.push_back(e.id);
  std::vector<Tokens> empty(w.forget_ids.size()), own;
  for (std::size_t id : w.forget_ids) own.push_back(w.entities[id].summary);
  o.require(usr(empty, w.forget_ids, widx, all) == 1.0, "USR of empty outputs");
  o.require(usr(own, w.forget_ids, widx, all) == 0.0, "USR of self summaries");

  // oracle floor and ceiling
  const Entity& e = w.entities[0];
  o.require(leakage_score(visual_description(w, 0), e) == 1.0, "leakage floor");
  o.require(leakage_score(e.summary, e) == 5.0, "leakage ceiling");
  o.require(informativeness_score(w.refusal, e) == 1.0, "informativeness floor");
  o.require(informativeness_score(e.visual_attrs, e) == 5.0, "informativeness ceiling");
  o.require(hallucination_score(visual_description(w, 0), e, w) == 1.0, "hallucination floor");
  o.require(hallucination_score(w.entities[1].summary, e, w) == 5.0, "hallucination ceiling");

  // AdamW scalar step
  std::vector<double> p{1.0};
  OptimizerState st = OptimizerState::zeros(1);
  OptimizerConfig cfg;
  cfg.learning_rate = 0.1;
  adamw_step(p, std::vector<double>{1.0}, st, cfg);
  o.require(std::abs(p[0] - 0.9) < 1e-6, "AdamW step gave " + fmt("%.12f", p[0]));
  if (o.passed) o.detail = "tf-idf, USR ties, oracle bounds, AdamW step " + fmt("%.10f", p[0]);
  return o;
}

int run_cli(const std::string& cli, const fs::path& out, const fs::path& log) {
  const std::string cmd = "\"" + cli + "\" run-all --out \"" + out.string() + "\" > \"" + log.string() + "\" 2>&1";
  return std::system(cmd.c_str());
}

std::map<std::string, std::string> csv_files(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(root))
    if (entry.is_regular_file() && entry.path().extension() == ".csv")
      out[fs::relative(entry.path(), root).string()] = read_text_file(entry.path().string());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s <unlearn-lab> [work directory]\n", argv[0]);
    return 2;
  }
  const std::string cli = argv[1];
  const fs::path work = argc > 2 ? fs::path(argv[2]) : fs::temp_directory_path() / "unlearn-lab-acceptance";
  fs::remove_all(work);
  fs::create_directories(work);
  const auto t0 = std::chrono::steady_clock::now();

  std::map<int, Outcome> results;
  auto guarded = [&](int id, const std::function<Outcome()>& f) {
    try {
      results[id] = f();
    } catch (const std::exception& e) {
      results[id] = Outcome{false, std::string("exception: ") + e.what()};
    }
  };

  guarded(1, criterion_gradients);
  guarded(2, criterion_kl);

  // Full pipeline through the command-line tool, twice with the same seed.
  const fs::path run_a = work / "run-a";
  const fs::path run_b = work / "run-b";
  const int rc_a = run_cli(cli, run_a, work / "run-a.log");
  const int rc_b = run_cli(cli, run_b, work / "run-b.log");

  std::vector<Check> checks;
  std::string pipeline_error;
  if (rc_a != 0) pipeline_error = "run-all exited with status " + std::to_string(rc_a);
  try {
    const ExperimentConfig cfg = ExperimentConfig::load((run_a / "config.txt").string());
    const CellResult cell = load_cell(run_a.string(), cfg.world.forget);
    for (const std::string& e : cell.errors) pipeline_error += (pipeline_error.empty() ? "" : "; ") + e;
    checks = behaviour_checks(cell);
  } catch (const std::exception& e) {
    pipeline_error += (pipeline_error.empty() ? "" : "; ") + std::string(e.what());
  }
  for (int id = 3; id <= 8; ++id) {
    Outcome o;
    if (!pipeline_error.empty()) o.require(false, pipeline_error);
    bool any = false;
    for (const Check& c : checks) {
      if (c.criterion != id) continue;
      any = true;
      o.require(c.passed, c.name + " [" + c.detail + "]");
    }
    if (!any) o.require(false, "no checks evaluated");
    if (o.passed) {
      for (const Check& c : checks)
        if (c.criterion == id) o.detail += (o.detail.empty() ? "" : "; ") + c.name;
    }
    results[id] = o;
  }

  guarded(9, criterion_metric_units);

  guarded(10, [&] {
    Outcome o;
    o.require(rc_a == 0 && rc_b == 0, "run-all failed");
    if (!o.passed) return o;
    const auto a = csv_files(run_a);
    const auto b = csv_files(run_b);
    o.require(!a.empty(), "no CSV written");
    std::size_t differing = 0;
    for (const auto& [name, text] : a) {
      const auto it = b.find(name);
      if (it == b.end() || it->second != text) {
        ++differing;
        o.require(false, name + " differs");
      }
    }
    for (const auto& [name, text] : b)
      if (a.count(name) == 0) o.require(false, name + " only in the second run");
    if (o.passed) o.detail = std::to_string(a.size()) + " CSV files byte-identical";
    (void)differing;
    return o;
  });

  static const char* titles[] = {"",
                                 "gradient correctness",
                                 "KL rewrite",
                                 "PUBG headline",
                                 "universal suppression",
                                 "aftermath signatures",
                                 "ablation",
                                 "retain preservation",
                                 "recognized vs directive statistics",
                                 "metric unit properties",
                                 "determinism"};
  bool all = true;
  for (int id = 1; id <= 10; ++id) {
    const Outcome& o = results[id];
    all = all && o.passed;
    std::printf("criterion %2d %-36s %s  %s\n", id, titles[id], o.passed ? "PASS" : "FAIL", o.detail.c_str());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("elapsed %.1f s, work directory %s\n", secs, work.string().c_str());
  return all ? 0 : 1;
}
