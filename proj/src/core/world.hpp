// SPDX-License-Identifier: Apache-2.0
//
// Synthetic entity universe. Every entity owns disjoint NAME and FACT tokens,
// a unique set of VISUAL attributes, a handful of image feature vectors and K
// reference responses that reveal its name and facts.
#pragma once

#include "common.hpp"

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace unlearnlab {

enum class TokenClass : std::uint8_t {
  kName,
  kFact,
  kVisual,
  kQuery,
  kRefusal,
  kFunction,
  kSpecial,
};

const char* token_class_name(TokenClass c);
TokenClass token_class_from_name(const std::string& name);

struct Vocab {
  std::vector<TokenClass> classes;
  std::vector<std::string> names;
  Token pad = 0;
  Token bos = 1;
  Token eos = 2;
  Tokens directive;

  std::size_t size() const { return classes.size(); }
  TokenClass class_of(Token t) const { return classes.at(static_cast<std::size_t>(t)); }
  bool is_special(Token t) const { return class_of(t) == TokenClass::kSpecial; }
  Tokens tokens_of(TokenClass c) const;
  Token id_of(const std::string& name) const;
  std::string render(const Tokens& tokens) const;
};

struct Entity {
  std::size_t id = 0;
  Tokens name_tokens;
  Tokens fact_tokens;
  Tokens visual_attrs;  // sorted
  Tokens summary;       // name_tokens followed by fact_tokens
};

struct ImageFeature {
  std::size_t entity_id = 0;
  std::vector<double> vector;
  bool seen = false;
};

struct ResponseSet {
  std::size_t entity_id = 0;
  std::vector<Tokens> responses;
};

struct WorldConfig {
  std::size_t entities = 10;
  std::size_t forget = 5;
  std::size_t visual_pool = 16;
  std::size_t visual_per_entity = 3;
  std::size_t names_per_entity = 2;
  std::size_t facts_per_entity = 3;
  std::size_t image_dim = 24;
  std::size_t images_per_entity = 3;  // first one is the seen image
  std::size_t responses_per_entity = 3;
  double image_noise = 0.15;
  double min_separation = 0.1;

  void validate() const;
};

struct EntityWorld {
  WorldConfig config;
  std::uint64_t seed = 0;
  Vocab vocab;
  std::vector<Entity> entities;
  std::vector<std::vector<ImageFeature>> images;
  std::vector<ResponseSet> responses;
  Tokens query;
  Tokens directive;
  Tokens refusal;
  std::vector<std::size_t> forget_ids;
  std::vector<std::size_t> retain_ids;
  // Fixed reference embeddings for alignment scoring, one unit row per token.
  // Regenerated from (config, seed); never trained.
  std::vector<std::vector<double>> reference_embeddings;
  // Free-form provenance (config hash, run seed) carried by the file header.
  std::map<std::string, std::string> provenance;

  bool is_forget(std::size_t entity) const;
  std::size_t owner_of(Token t) const;  // entity owning a NAME/FACT token
  const ImageFeature& image(std::size_t entity, std::size_t index) const {
    return images.at(entity).at(index);
  }
};

EntityWorld generate_world(const WorldConfig& config, std::uint64_t seed);

std::vector<std::vector<double>> make_reference_embeddings(const WorldConfig& config, std::uint64_t seed,
                                                           std::size_t vocab_size);

// Per-entity view-only description, e.g. "the person is red curly and tall".
Tokens visual_description(const EntityWorld& world, std::size_t entity);

Tokens plain_prompt(const EntityWorld& world);
Tokens directive_prompt(const EntityWorld& world);

// Invariant checks. Return an empty string when the invariant holds.
std::string check_world_invariants(const EntityWorld& world);
// min over entities of (min same-entity cosine - max cross-entity cosine).
double image_separation_margin(const EntityWorld& world);

struct DatasetEntry {
  std::size_t entity_id = 0;
  std::size_t image_index = 0;
};

using Dataset = std::vector<DatasetEntry>;

Dataset make_forget_dataset(const EntityWorld& world);
Dataset make_retain_dataset(const EntityWorld& world);

// One supervised sequence: image, prompt (with or without directive), target.
struct TrainExample {
  std::size_t entity_id = 0;
  std::size_t image_index = 0;
  bool directive = false;
  Tokens target;
};

std::vector<TrainExample> make_base_training_set(const EntityWorld& world, double directive_fraction);

}  // namespace unlearnlab
