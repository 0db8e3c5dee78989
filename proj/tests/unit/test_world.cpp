// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "world.hpp"
#include "world_io.hpp"

#include <algorithm>
#include <set>

using namespace unlearnlab;

namespace {

std::size_t count_of(const Tokens& t, const Vocab& v, TokenClass c) {
  return static_cast<std::size_t>(std::count_if(t.begin(), t.end(), [&](Token x) { return v.class_of(x) == c; }));
}

}  // namespace

TEST_CASE("generated worlds satisfy every invariant") {
  for (std::uint64_t seed : {1u, 7u, 42u}) {
    WorldConfig cfg;
    cfg.entities = 25;
    cfg.forget = 10;
    const EntityWorld w = generate_world(cfg, seed);
    CHECK(check_world_invariants(w).empty());
    CHECK(image_separation_margin(w) >= cfg.min_separation);
    CHECK(w.forget_ids.size() == 10);
    CHECK(w.retain_ids.size() == 15);
  }
}

TEST_CASE("name and fact tokens are owned by exactly one entity") {
  const EntityWorld w = generate_world(WorldConfig{}, 3);
  std::set<Token> seen;
  for (const Entity& e : w.entities) {
    for (Token t : e.name_tokens) {
      CHECK(seen.insert(t).second);
      CHECK(w.owner_of(t) == e.id);
    }
    for (Token t : e.fact_tokens) {
      CHECK(seen.insert(t).second);
      CHECK(w.owner_of(t) == e.id);
    }
  }
}

TEST_CASE("visual attribute sets are unique per entity") {
  const EntityWorld w = generate_world(WorldConfig{}, 5);
  std::set<Tokens> sets;
  for (const Entity& e : w.entities) CHECK(sets.insert(e.visual_attrs).second);
}

TEST_CASE("forget and retain datasets partition the entities") {
  WorldConfig cfg;
  cfg.entities = 25;
  cfg.forget = 10;
  const EntityWorld w = generate_world(cfg, 11);
  const Dataset f = make_forget_dataset(w);
  const Dataset r = make_retain_dataset(w);
  CHECK(f.size() == 10);
  CHECK(r.size() == 15);
  std::set<std::size_t> ids;
  for (const auto& d : f) {
    CHECK(w.is_forget(d.entity_id));
    CHECK(ids.insert(d.entity_id).second);
  }
  for (const auto& d : r) {
    CHECK_FALSE(w.is_forget(d.entity_id));
    CHECK(ids.insert(d.entity_id).second);
  }
}

TEST_CASE("plain responses reveal identity and directive targets do not") {
  const EntityWorld w = generate_world(WorldConfig{}, 9);
  for (const auto& rs : w.responses) {
    const Entity& e = w.entities.at(rs.entity_id);
    for (const Tokens& r : rs.responses) {
      CHECK(count_of(r, w.vocab, TokenClass::kFact) >= 2);
      for (Token t : e.name_tokens) CHECK(std::find(r.begin(), r.end(), t) != r.end());
      for (Token t : r)
        if (w.vocab.class_of(t) == TokenClass::kName || w.vocab.class_of(t) == TokenClass::kFact)
          CHECK(w.owner_of(t) == e.id);
    }
  }
  const auto train = make_base_training_set(w, 0.5);
  std::size_t directive = 0;
  for (const auto& ex : train) {
    if (!ex.directive) continue;
    ++directive;
    CHECK(count_of(ex.target, w.vocab, TokenClass::kFact) == 0);
    CHECK(count_of(ex.target, w.vocab, TokenClass::kName) == 0);
    const Entity& e = w.entities.at(ex.entity_id);
    for (Token t : ex.target)
      if (w.vocab.class_of(t) == TokenClass::kVisual)
        CHECK(std::binary_search(e.visual_attrs.begin(), e.visual_attrs.end(), t));
  }
  CHECK(directive * 2 == train.size());
}

TEST_CASE("directive fraction outside the open unit interval is rejected") {
  const EntityWorld w = generate_world(WorldConfig{}, 9);
  CHECK_THROWS_AS(make_base_training_set(w, 0.0), Error);
  CHECK_THROWS_AS(make_base_training_set(w, 1.0), Error);
}

TEST_CASE("invalid world configurations are rejected") {
  WorldConfig cfg;
  cfg.forget = cfg.entities;
  CHECK_THROWS_AS(generate_world(cfg, 1), Error);
  cfg = WorldConfig{};
  cfg.forget = 0;
  CHECK_THROWS_AS(generate_world(cfg, 1), Error);
  cfg = WorldConfig{};
  cfg.visual_pool = 3;
  cfg.visual_per_entity = 3;
  CHECK_THROWS_AS(generate_world(cfg, 1), Error);
}

TEST_CASE("generation is deterministic in the seed") {
  const std::string a = world_to_jsonl(generate_world(WorldConfig{}, 21));
  const std::string b = world_to_jsonl(generate_world(WorldConfig{}, 21));
  const std::string c = world_to_jsonl(generate_world(WorldConfig{}, 22));
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("world JSON-lines round trip is lossless") {
  EntityWorld w = generate_world(WorldConfig{}, 13);
  w.provenance["config_hash"] = "00000000deadbeef";
  const std::string text = world_to_jsonl(w);
  const EntityWorld r = world_from_jsonl(text);
  CHECK(world_to_jsonl(r) == text);
  CHECK(r.provenance.at("config_hash") == "00000000deadbeef");
  CHECK(check_world_invariants(r).empty());
  CHECK(r.reference_embeddings == w.reference_embeddings);
  CHECK_THROWS_AS(world_from_jsonl("{\"not\": \"a world\"}\n"), Error);
}
