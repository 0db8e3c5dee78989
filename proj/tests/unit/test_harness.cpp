// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "harness.hpp"
#include "world_io.hpp"

#include <cstdlib>
#include <filesystem>

using namespace unlearnlab;

TEST_CASE("configuration text round trip preserves the hash") {
  ExperimentConfig cfg;
  const std::string text = cfg.to_text();
  const ExperimentConfig back = ExperimentConfig::from_text(text);
  CHECK(back.to_text() == text);
  CHECK(back.hash() == cfg.hash());
  CHECK(cfg.hash().size() == 16);
  CHECK(cfg.hash() == hex64(fnv1a64(text)));
}

TEST_CASE("configuration parsing handles comments, spacing and overrides") {
  const ExperimentConfig cfg = ExperimentConfig::from_text(
      "# comment\n"
      "seed = 11\n"
      "  lr.pubg=0.004   # trailing comment\n"
      "methods = pubg, ga\n"
      "n_sweep = 5,20\n"
      "\n");
  CHECK(cfg.seed == 11);
  CHECK(cfg.learning_rate(Method::kPubg) == 0.004);
  CHECK(cfg.methods == std::vector<Method>{Method::kPubg, Method::kGa});
  CHECK(cfg.cells() == std::vector<std::size_t>{5, 10, 20});
  CHECK(cfg.get("lr.pubg") == "0.004");
  CHECK(cfg.hash() != ExperimentConfig{}.hash());
}

TEST_CASE("every key reads back what was set") {
  ExperimentConfig cfg;
  for (const std::string& k : ExperimentConfig::keys()) {
    const std::string v = cfg.get(k);
    ExperimentConfig copy;
    copy.set(k, v);
    CHECK(copy.get(k) == v);
    CHECK(copy.hash() == cfg.hash());
  }
}

TEST_CASE("unknown keys and malformed values are rejected") {
  CHECK_THROWS_AS(ExperimentConfig::from_text("no_such_key = 1\n"), Error);
  CHECK_THROWS_AS(ExperimentConfig::from_text("seed\n"), Error);
  CHECK_THROWS_AS(ExperimentConfig::from_text("seed = seven\n"), Error);
  CHECK_THROWS_AS(ExperimentConfig::from_text("world.entities = 12abc\n"), Error);
  CHECK_THROWS_AS(ExperimentConfig::from_text("methods = pubg,unknown\n"), Error);
  ExperimentConfig cfg;
  CHECK_THROWS_AS(cfg.get("nope"), Error);
}

TEST_CASE("validation rejects impossible experiments") {
  ExperimentConfig cfg;
  cfg.validate();
  cfg.n_sweep = {25};
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = ExperimentConfig{};
  cfg.set("lr.ga", "0");
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = ExperimentConfig{};
  cfg.set("base.directive_fraction", "1");
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("the output directory does not enter the hash") {
  ExperimentConfig a;
  ExperimentConfig b;
  b.set("out", "/tmp/elsewhere");
  CHECK(a.hash() == b.hash());
}

TEST_CASE("world seeds: main cell uses the experiment seed, other cells derive distinct seeds") {
  ExperimentConfig cfg;
  CHECK(cfg.world_seed(cfg.world.forget) == cfg.seed);
  CHECK(cfg.world_seed(5) != cfg.seed);
  CHECK(cfg.world_seed(5) != cfg.world_seed(20));
}

TEST_CASE("output root follows the environment") {
  ::setenv("UNLEARN_LAB_OUT", "/tmp/ul-root", 1);
  CHECK(default_output_root() == "/tmp/ul-root");
  ::unsetenv("UNLEARN_LAB_OUT");
  CHECK(default_output_root() == "runs");
  CHECK(default_output_root("x") == "x");
}

TEST_CASE("single best bolding needs a strict winner") {
  using V = std::vector<std::optional<double>>;
  CHECK(single_best(V{1.0, 3.0, 2.0}, Better::kHigher) == 1u);
  CHECK(single_best(V{1.0, 3.0, 2.0}, Better::kLower) == 0u);
  CHECK_FALSE(single_best(V{3.0, 3.0, 2.0}, Better::kHigher));
  CHECK(single_best(V{1.0, 1.0, 2.0}, Better::kHigher) == 2u);
  CHECK_FALSE(single_best(V{1.0, 1.0, 2.0}, Better::kLower));
  CHECK_FALSE(single_best(V{1.0, std::nullopt, 2.0}, Better::kHigher));
  CHECK_FALSE(single_best(V{}, Better::kHigher));
  CHECK(single_best(V{4.0}, Better::kHigher) == 0u);
}

TEST_CASE("provenance columns are prepended to every CSV line") {
  const std::string out = with_provenance_columns("a,b\n1,2\n3,4\n", "ff", 9);
  CHECK(out == "config_hash,seed,a,b\nff,9,1,2\nff,9,3,4\n");
}

TEST_CASE("report on an empty run directory records gaps instead of failing") {
  const auto dir = std::filesystem::temp_directory_path() / "ul-empty-report";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir / "n10");
  write_text_file((dir / "config.txt").string(), ExperimentConfig{}.to_text());
  const RenderedReport r = report(dir.string());
  CHECK_FALSE(r.gaps.empty());
  CHECK(std::filesystem::exists(dir / "report.md"));
  CHECK(r.markdown.find("n/a") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("a miniature experiment writes every artifact with provenance") {
  const auto dir = std::filesystem::temp_directory_path() / "ul-mini-run";
  std::filesystem::remove_all(dir);
  ExperimentConfig cfg = ExperimentConfig::from_text(
      "world.entities = 8\nworld.forget = 2\nn_sweep = 2\n"
      "model.d_model = 8\nmodel.mlp_hidden = 16\nbase.steps = 20\nunlearn.steps = 2\n"
      "reference.max_leak_fraction = 1\nmethods = ga,reject\nablation = false\n");
  cfg.out_dir = dir.string();
  const ExperimentResult r = run_experiment(cfg);
  REQUIRE(r.cells.size() == 1);
  CHECK(r.config_hash == cfg.hash());
  const CellResult* cell = r.cell(2);
  REQUIRE(cell != nullptr);
  CHECK(cell->errors.empty());
  CHECK(cell->reports.count("ga") == 1);
  CHECK(cell->reports.count(kOriginalLabel) == 1);
  CHECK(cell->reports.count(kDirectiveLabel) == 1);
  for (const char* f : {"world.jsonl", "base.ckpt", "base_trace.csv", "eval_original.csv", "eval_ga.csv",
                        "ga_trace.csv", "ga.ckpt", "reject.ckpt", "eval_reject.csv"})
    CHECK_MESSAGE(std::filesystem::exists(dir / "n2" / f), f);
  CHECK(std::filesystem::exists(dir / "config.txt"));
  CHECK(std::filesystem::exists(dir / "report.md"));
  CHECK(std::filesystem::exists(dir / "summary.csv"));
  const std::string eval = read_text_file((dir / "n2" / "eval_ga.csv").string());
  CHECK(eval.find(cfg.hash()) != std::string::npos);
  const EntityWorld w = read_world((dir / "n2" / "world.jsonl").string());
  CHECK(w.provenance.at("config_hash") == cfg.hash());
  CHECK(checkpoint_meta((dir / "n2" / "ga.ckpt").string()).at("config_hash") == cfg.hash());
  std::filesystem::remove_all(dir);
}

TEST_CASE("omitting the retain loss damages the retain entities") {
  auto run = [](const std::string& weight) {
    ExperimentConfig cfg = ExperimentConfig::from_text("n_sweep = 10\nmethods = pubg,reject\nablation = false\n");
    cfg.set("unlearn.retain_weight", weight);
    const ExperimentResult r = run_experiment(cfg);
    const CellResult* cell = r.cell(10);
    REQUIRE(cell != nullptr);
    REQUIRE(cell->errors.empty());
    return std::make_pair(cell->reports.at("pubg").aggregate(Split::kRetain),
                          cell->reports.at("reject").aggregate(Split::kRetain));
  };
  const auto with = run("1");
  const auto without = run("0");
  // Reject without retain refuses retain entities too.
  CHECK(without.second.informativeness < with.second.informativeness - 0.5);
  // PUBG without retain describes retain entities anonymously: identity is lost.
  CHECK(without.first.leakage < with.first.leakage - 1.0);
  CHECK(without.first.usr > with.first.usr);
}
