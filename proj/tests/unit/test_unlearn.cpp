// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "base_training.hpp"
#include "unlearn.hpp"

#include <cmath>

using namespace unlearnlab;

namespace {

struct Fixture {
  EntityWorld world = generate_world(WorldConfig{}, 23);
  SeqModel model;
  std::vector<ForgetItem> batch;
  std::vector<ReferenceSample> refs;

  Fixture() : model(SeqModel(small_hyper(world), 77)) {
    for (std::size_t k = 0; k < world.forget_ids.size(); ++k) {
      const std::size_t id = world.forget_ids[k];
      batch.push_back({id, 0, world.responses[id].responses[k % world.responses[id].responses.size()]});
      ReferenceSample r;
      r.entity_id = id;
      r.o_star = visual_description(world, id);
      refs.push_back(r);
    }
  }

  static ModelHyper small_hyper(const EntityWorld& w) {
    ModelHyper h;
    h.d_model = 8;
    h.mlp_hidden = 16;
    return hyper_for_world(w, h);
  }
};

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_abs(const std::vector<double>& a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

double mean_batch_logprob(const SeqModel& m, const EntityWorld& w, const std::vector<ForgetItem>& batch) {
  double s = 0.0;
  for (const ForgetItem& it : batch)
    s += forward_logprob(m, w.image(it.entity_id, it.image_index).vector, plain_prompt(w), it.response);
  return s / static_cast<double>(batch.size());
}

}  // namespace

TEST_CASE("paired objective is the sum of its ascent and descent parts") {
  Fixture f;
  const LossEval ga = loss_ga(f.model, f.world, f.batch);
  const LossEval bg = loss_bg(f.model, f.world, f.refs);
  const LossEval pubg = loss_pubg(f.model, f.world, f.batch, f.refs);
  CHECK(pubg.loss == doctest::Approx(ga.loss + bg.loss).epsilon(1e-12));
  std::vector<double> sum(ga.grad.size());
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = ga.grad[i] + bg.grad[i];
  CHECK(max_abs_diff(pubg.grad, sum) < 1e-12);
  CHECK(ga.loss == doctest::Approx(mean_batch_logprob(f.model, f.world, f.batch)).epsilon(1e-12));
}

TEST_CASE("paired objective cancels when the reference equals the forget response") {
  Fixture f;
  std::vector<ReferenceSample> same = f.refs;
  for (std::size_t j = 0; j < same.size(); ++j) same[j].o_star = f.batch[j].response;
  const LossEval pubg = loss_pubg(f.model, f.world, f.batch, same);
  CHECK(std::abs(pubg.loss) < 1e-12);
  CHECK(max_abs(pubg.grad) < 1e-12);
}

TEST_CASE("paired objective rejects mismatched pairs") {
  Fixture f;
  std::vector<ReferenceSample> shifted = f.refs;
  std::rotate(shifted.begin(), shifted.begin() + 1, shifted.end());
  CHECK_THROWS_AS(loss_pubg(f.model, f.world, f.batch, shifted), Error);
  shifted.pop_back();
  CHECK_THROWS_AS(loss_pubg(f.model, f.world, f.batch, shifted), Error);
  CHECK_THROWS_AS(loss_ga(f.model, f.world, {}), Error);
}

TEST_CASE("NPO at the reference point equals (2/beta) ln 2 with the ascent gradient") {
  Fixture f;
  const FrozenModel frozen = clone_frozen(f.model);
  for (double beta : {0.1, 1.0, 2.5}) {
    const LossEval npo = loss_npo(f.model, frozen, f.world, f.batch, beta);
    CHECK(npo.loss == doctest::Approx(2.0 / beta * std::log(2.0)).epsilon(1e-12));
    const LossEval ga = loss_ga(f.model, f.world, f.batch);
    CHECK(max_abs_diff(npo.grad, ga.grad) < 1e-12);
  }
  CHECK_THROWS_AS(loss_npo(f.model, frozen, f.world, f.batch, 0.0), Error);
}

TEST_CASE("NPO gradient matches a finite difference along a random direction") {
  Fixture f;
  const FrozenModel frozen = clone_frozen(f.model);
  SeqModel moved = clone(f.model);
  Rng rng(4);
  std::normal_distribution<double> nd(0.0, 0.05);
  for (double& p : moved.params()) p += nd(rng);
  const LossEval at = loss_npo(moved, frozen, f.world, f.batch, 0.7);
  std::vector<double> dir(at.grad.size());
  for (double& d : dir) d = nd(rng);
  double analytic = 0.0;
  for (std::size_t i = 0; i < dir.size(); ++i) analytic += at.grad[i] * dir[i];
  const double h = 1e-5;
  SeqModel plus = clone(moved), minus = clone(moved);
  for (std::size_t i = 0; i < dir.size(); ++i) {
    plus.params()[i] += h * dir[i];
    minus.params()[i] -= h * dir[i];
  }
  const double numeric =
      (loss_npo(plus, frozen, f.world, f.batch, 0.7).loss - loss_npo(minus, frozen, f.world, f.batch, 0.7).loss) /
      (2.0 * h);
  CHECK(std::abs(analytic - numeric) <= 1e-6 * std::max(1.0, std::abs(numeric)));
}

TEST_CASE("retain, random and reject objectives are mean negative log-likelihoods") {
  Fixture f;
  const LossEval retain = loss_retain(f.model, f.world, f.batch);
  CHECK(retain.loss == doctest::Approx(-mean_batch_logprob(f.model, f.world, f.batch)).epsilon(1e-12));
  const LossEval ga = loss_ga(f.model, f.world, f.batch);
  std::vector<Tokens> targets;
  for (const ForgetItem& it : f.batch) targets.push_back(it.response);
  const LossEval random = loss_random(f.model, f.world, f.batch, targets);
  CHECK(std::abs(random.loss) < 1e-12);
  CHECK(max_abs(random.grad) < 1e-12);
  Tokens templ = f.world.refusal;
  templ.push_back(f.world.vocab.eos);
  const LossEval reject = loss_reject(f.model, f.world, f.batch, templ);
  std::vector<ForgetItem> as_items = f.batch;
  for (ForgetItem& it : as_items) it.response = templ;
  CHECK(reject.loss == doctest::Approx(-mean_batch_logprob(f.model, f.world, as_items)).epsilon(1e-12));
  CHECK_THROWS_AS(loss_reject(f.model, f.world, f.batch, f.world.refusal), Error);
  CHECK_THROWS_AS(loss_reject(f.model, f.world, f.batch, f.batch[0].response), Error);
}

TEST_CASE("a small ascent step lowers the forget log-probability") {
  Fixture f;
  const LossEval ga = loss_ga(f.model, f.world, f.batch);
  SeqModel stepped = clone(f.model);
  for (std::size_t i = 0; i < ga.grad.size(); ++i) stepped.params()[i] -= 1e-3 * ga.grad[i];
  CHECK(mean_batch_logprob(stepped, f.world, f.batch) < mean_batch_logprob(f.model, f.world, f.batch));
}

TEST_CASE("unlearning leaves the base model and frozen references untouched") {
  Fixture f;
  const std::vector<double> before(f.model.params().begin(), f.model.params().end());
  UnlearnTask task;
  task.method = Method::kPubg;
  task.optimizer.steps = 3;
  task.optimizer.learning_rate = 1e-2;
  task.optimizer.seed = 5;
  for (std::size_t k = 0; k < f.refs.size(); ++k) task.references.push_back(f.refs[k]);
  const UnlearnResult r = run_unlearning(task, f.model, f.world);
  CHECK(std::vector<double>(f.model.params().begin(), f.model.params().end()) == before);
  CHECK(r.trace.steps.size() == 3);
  CHECK_FALSE(r.trace.aborted);
  CHECK(max_abs_diff(std::vector<double>(r.model.params().begin(), r.model.params().end()), before) > 0.0);

  // identical tasks give identical models
  const UnlearnResult again = run_unlearning(task, f.model, f.world);
  CHECK(std::vector<double>(again.model.params().begin(), again.model.params().end()) ==
        std::vector<double>(r.model.params().begin(), r.model.params().end()));
}

TEST_CASE("adapter-only unlearning changes only adapter factors") {
  Fixture f;
  UnlearnTask task;
  task.method = Method::kGa;
  task.optimizer.steps = 2;
  task.optimizer.learning_rate = 1e-2;
  task.adapter_rank = 2;
  task.adapter_alpha = 4.0;
  const UnlearnResult r = run_unlearning(task, f.model, f.world);
  CHECK(r.model.adapter_enabled());
  for (const ParamBlock& b : f.model.layout().blocks()) {
    const auto a = f.model.block(b.name);
    const auto c = r.model.block(b.name);
    CHECK(std::equal(a.begin(), a.end(), c.begin()));
  }
}

TEST_CASE("methods that need references refuse to run without them") {
  Fixture f;
  UnlearnTask task;
  task.method = Method::kPubg;
  task.optimizer.steps = 1;
  CHECK_THROWS_AS(task.validate(), Error);
  task.method = Method::kBgOnly;
  CHECK_THROWS_AS(task.validate(), Error);
  task.method = Method::kNpo;
  task.npo_beta = -1.0;
  CHECK_THROWS_AS(task.validate(), Error);
}

TEST_CASE("reference cache round trip skips the provenance record") {
  Fixture f;
  f.refs[0].logprob_under_frozen = -0.125;
  const std::string text = reference_set_to_jsonl(f.refs, {{"config_hash", "abc"}, {"seed", "7"}});
  CHECK(text.rfind("{\"provenance\"", 0) == 0);
  const auto back = reference_set_from_jsonl(text);
  REQUIRE(back.size() == f.refs.size());
  CHECK(back[0].o_star == f.refs[0].o_star);
  CHECK(back[0].logprob_under_frozen == -0.125);
  CHECK(reference_set_to_jsonl(back, {{"config_hash", "abc"}, {"seed", "7"}}) == text);
  CHECK_THROWS_AS(reference_set_from_jsonl("{\"entity_id\": 1}\n"), Error);
}

TEST_CASE("method names round trip") {
  for (Method m : {Method::kPubg, Method::kGa, Method::kNpo, Method::kRandom, Method::kReject, Method::kBgOnly})
    CHECK(method_from_name(method_name(m)) == m);
  CHECK_THROWS_AS(method_from_name("unknown"), Error);
}

TEST_CASE("KL rewrite holds by enumeration") {
  KlVerifyConfig cfg;
  cfg.mc_samples = 20000;
  const KlVerifyReport r = verify_kl_rewrite(cfg);
  CHECK(r.grad_ok);
  CHECK(r.entropy_ok);
  CHECK(r.mc_ok);
  CHECK(r.reference_mass == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.kl > 0.0);
  CHECK(r.max_grad_diff < 1e-8);
  CHECK(r.expected_nll - r.kl == doctest::Approx(r.entropy).epsilon(1e-10));

  cfg.same_model = true;
  const KlVerifyReport same = verify_kl_rewrite(cfg);
  CHECK(std::abs(same.kl) < 1e-12);
  CHECK(same.ok());
}

TEST_CASE("KL verification rejects instances too large to enumerate") {
  KlVerifyConfig cfg;
  cfg.vocab_size = 9;
  CHECK_THROWS_AS(verify_kl_rewrite(cfg), Error);
  cfg.vocab_size = 6;
  cfg.max_len = 4;
  CHECK_THROWS_AS(verify_kl_rewrite(cfg), Error);
}
