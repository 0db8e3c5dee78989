// SPDX-License-Identifier: Apache-2.0
#include "base_training.hpp"

namespace unlearnlab {

ModelHyper hyper_for_world(const EntityWorld& world, ModelHyper base) {
  base.vocab_size = world.vocab.size();
  base.image_dim = world.config.image_dim;
  base.pad = world.vocab.pad;
  base.bos = world.vocab.bos;
  base.eos = world.vocab.eos;
  return base;
}

SeqRow example_row(const EntityWorld& world, const TrainExample& ex) {
  return SeqRow{world.image(ex.entity_id, ex.image_index).vector,
                ex.directive ? directive_prompt(world) : plain_prompt(world), ex.target};
}

LossEval token_nll_loss(const SeqModel& model, const EntityWorld& world, const std::vector<TrainExample>& examples,
                        std::span<const std::size_t> indices) {
  std::vector<SeqRow> rows;
  double tokens = 0.0;
  for (std::size_t i : indices) {
    rows.push_back(example_row(world, examples.at(i)));
    tokens += static_cast<double>(examples[i].target.size());
  }
  const SeqBatch batch = make_batch(rows, model.hyper());
  const std::vector<double> w(rows.size(), -1.0 / tokens);
  LogprobGrad lg = weighted_logprob_grad(model, batch, w);
  double total = 0.0;
  for (double lp : lg.logprobs) total -= lp;
  return LossEval{total / tokens, std::move(lg.grad), {{"nll", total / tokens}}};
}

double mean_token_nll(const SeqModel& model, const EntityWorld& world, const std::vector<TrainExample>& examples) {
  double total = 0.0;
  double tokens = 0.0;
  for (const TrainExample& ex : examples) {
    const SeqRow row = example_row(world, ex);
    total -= forward_logprob(model, row.image, row.prompt, row.target);
    tokens += static_cast<double>(ex.target.size());
  }
  return tokens > 0.0 ? total / tokens : 0.0;
}

BaseTrainingResult train_base_model(const EntityWorld& world, const ModelHyper& hyper, const OptimizerConfig& cfg,
                                    double directive_fraction, std::uint64_t init_seed) {
  const std::vector<TrainExample> examples = make_base_training_set(world, directive_fraction);
  SeqModel model(hyper, init_seed);
  const BatchLossFn loss = [&](const SeqModel& m, std::span<const std::size_t> idx, std::size_t, Rng&) {
    return token_nll_loss(m, world, examples, idx);
  };
  LossTrace trace = train(model, loss, examples.size(), cfg);
  if (trace.aborted) fail(ErrorCode::kNumeric, "base training diverged: " + trace.error);
  const double nll = mean_token_nll(model, world, examples);
  return BaseTrainingResult{std::move(model), std::move(trace), nll};
}

}  // namespace unlearnlab
