// SPDX-License-Identifier: Apache-2.0
//
// Supervised training of the original model on the world's plain and
// directive examples.
#pragma once

#include "optim.hpp"
#include "seqmodel.hpp"
#include "world.hpp"

namespace unlearnlab {

// Model hyperparameters sized for a world; the remaining fields keep their
// defaults.
ModelHyper hyper_for_world(const EntityWorld& world, ModelHyper base = {});

SeqRow example_row(const EntityWorld& world, const TrainExample& ex);

// Mean per-token negative log-likelihood over the examples named by indices,
// with its gradient.
LossEval token_nll_loss(const SeqModel& model, const EntityWorld& world, const std::vector<TrainExample>& examples,
                        std::span<const std::size_t> indices);

double mean_token_nll(const SeqModel& model, const EntityWorld& world, const std::vector<TrainExample>& examples);

struct BaseTrainingResult {
  SeqModel model;
  LossTrace trace;
  double final_nll = 0.0;
};

BaseTrainingResult train_base_model(const EntityWorld& world, const ModelHyper& hyper, const OptimizerConfig& cfg,
                                    double directive_fraction, std::uint64_t init_seed);

}  // namespace unlearnlab
