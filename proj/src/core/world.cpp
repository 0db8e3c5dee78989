// SPDX-License-Identifier: Apache-2.0
#include "world.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace unlearnlab {

namespace {

const char* const kFunctionWords[] = {"the", "person", "is", "known", "for", "and",
                                      "with", "has", "this", "a", "who", "in"};
const char* const kRefusalWords[] = {"i'm", "not", "the-best", "source", "for-that", "information"};
const char* const kQueryWords[] = {"tell", "me", "about"};
const char* const kVisualWords[] = {"red", "blue", "green", "yellow", "purple", "pink",
                                    "orange", "black", "white", "gray", "brown", "blonde",
                                    "auburn", "golden", "silver", "dark", "light", "pale",
                                    "bright", "tan", "beige", "curly", "tall", "bearded"};

std::string padded(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%03zu", prefix, i);
  return buf;
}

std::vector<double> unit_gaussian(std::uint64_t seed, std::size_t dim) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  for (double& x : v) {
    x = normal(rng);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

void normalize(std::vector<double>& v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Vocab build_vocab(const WorldConfig& cfg) {
  Vocab v;
  auto add = [&v](TokenClass c, std::string name) {
    v.classes.push_back(c);
    v.names.push_back(std::move(name));
    return static_cast<Token>(v.classes.size() - 1);
  };
  v.pad = add(TokenClass::kSpecial, "<pad>");
  v.bos = add(TokenClass::kSpecial, "<bos>");
  v.eos = add(TokenClass::kSpecial, "<eos>");
  v.directive.push_back(add(TokenClass::kSpecial, "<forget-entity>"));
  v.directive.push_back(add(TokenClass::kSpecial, "<describe-visual>"));
  for (const char* w : kQueryWords) add(TokenClass::kQuery, w);
  for (const char* w : kFunctionWords) add(TokenClass::kFunction, w);
  for (const char* w : kRefusalWords) add(TokenClass::kRefusal, w);
  for (std::size_t i = 0; i < cfg.visual_pool; ++i)
    add(TokenClass::kVisual, i < std::size(kVisualWords) ? kVisualWords[i] : padded("visual", i));
  for (std::size_t i = 0; i < cfg.entities * cfg.names_per_entity; ++i)
    add(TokenClass::kName, padded("name", i));
  for (std::size_t i = 0; i < cfg.entities * cfg.facts_per_entity; ++i)
    add(TokenClass::kFact, padded("fact", i));
  return v;
}

// Plain responses differ in their opening so that the K variants branch at
// the first generated token and are deterministic afterwards.
Tokens plain_response(const Vocab& v, const Entity& e, std::size_t k) {
  auto w = [&v](const char* s) { return v.id_of(s); };
  Tokens facts = e.fact_tokens;
  std::rotate(facts.begin(), facts.begin() + static_cast<long>(k % facts.size()), facts.end());
  const Token attr = e.visual_attrs[k % e.visual_attrs.size()];

  Tokens out;
  auto names = [&] { out.insert(out.end(), e.name_tokens.begin(), e.name_tokens.end()); };
  auto fact_list = [&] {
    for (std::size_t i = 0; i < facts.size(); ++i) {
      if (i + 1 == facts.size() && facts.size() > 1) out.push_back(w("and"));
      out.push_back(facts[i]);
    }
  };
  switch (k % 3) {
    case 0:
      out = {w("the"), w("person"), w("is")};
      names();
      out.push_back(w("known"));
      out.push_back(w("for"));
      fact_list();
      out.push_back(w("with"));
      break;
    case 1:
      out = {w("this"), w("is")};
      names();
      out.push_back(w("who"));
      out.push_back(w("has"));
      fact_list();
      out.push_back(w("in"));
      break;
    default:
      names();
      out.push_back(w("is"));
      out.push_back(w("known"));
      out.push_back(w("for"));
      fact_list();
      out.push_back(w("with"));
      break;
  }
  out.push_back(attr);
  out.push_back(v.eos);
  return out;
}

}  // namespace

const char* token_class_name(TokenClass c) {
  switch (c) {
    case TokenClass::kName: return "NAME";
    case TokenClass::kFact: return "FACT";
    case TokenClass::kVisual: return "VISUAL";
    case TokenClass::kQuery: return "QUERY";
    case TokenClass::kRefusal: return "REFUSAL";
    case TokenClass::kFunction: return "FUNCTION";
    case TokenClass::kSpecial: return "SPECIAL";
  }
  return "?";
}

TokenClass token_class_from_name(const std::string& name) {
  for (TokenClass c : {TokenClass::kName, TokenClass::kFact, TokenClass::kVisual, TokenClass::kQuery,
                       TokenClass::kRefusal, TokenClass::kFunction, TokenClass::kSpecial}) {
    if (name == token_class_name(c)) return c;
  }
  fail(ErrorCode::kIo, "unknown token class '" + name + "'");
}

Tokens Vocab::tokens_of(TokenClass c) const {
  Tokens out;
  for (std::size_t i = 0; i < classes.size(); ++i)
    if (classes[i] == c) out.push_back(static_cast<Token>(i));
  return out;
}

Token Vocab::id_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<Token>(i);
  fail(ErrorCode::kDomain, "unknown token '" + name + "'");
}

std::string Vocab::render(const Tokens& tokens) const {
  std::string out;
  for (Token t : tokens) {
    if (!out.empty()) out += ' ';
    out += (t >= 0 && static_cast<std::size_t>(t) < names.size()) ? names[static_cast<std::size_t>(t)]
                                                                  : "<oov>";
  }
  return out;
}

void WorldConfig::validate() const {
  if (entities < 8) fail(ErrorCode::kInvalidConfig, "world needs at least 8 entities");
  if (forget == 0 || forget >= entities)
    fail(ErrorCode::kInvalidConfig, "forget count must satisfy 0 < n < entities");
  if (visual_pool == 0 || visual_per_entity == 0 || visual_per_entity > visual_pool)
    fail(ErrorCode::kInvalidConfig, "empty or undersized VISUAL pool");
  if (names_per_entity == 0) fail(ErrorCode::kInvalidConfig, "entities need at least one name token");
  if (facts_per_entity < 3) fail(ErrorCode::kInvalidConfig, "entities need at least three fact tokens");
  if (images_per_entity < 2) fail(ErrorCode::kInvalidConfig, "need one seen and at least one unseen image");
  if (responses_per_entity < 2) fail(ErrorCode::kInvalidConfig, "need at least two responses per entity");
  if (image_dim < 2) fail(ErrorCode::kInvalidConfig, "image dimension too small");
  if (!(image_noise >= 0.0)) fail(ErrorCode::kInvalidConfig, "image noise must be non-negative");
  // Distinct attribute subsets are required for image separability.
  double subsets = 1.0;
  for (std::size_t i = 0; i < visual_per_entity; ++i)
    subsets = subsets * static_cast<double>(visual_pool - i) / static_cast<double>(i + 1);
  if (subsets < static_cast<double>(entities))
    fail(ErrorCode::kInvalidConfig, "VISUAL pool too small for distinct attribute sets");
}

std::vector<std::vector<double>> make_reference_embeddings(const WorldConfig& config, std::uint64_t seed,
                                                           std::size_t vocab_size) {
  std::vector<std::vector<double>> table(vocab_size);
  for (std::size_t t = 0; t < vocab_size; ++t)
    table[t] = unit_gaussian(derive_seed(seed, 0xE3B0, t), config.image_dim);
  return table;
}

bool EntityWorld::is_forget(std::size_t entity) const {
  return std::binary_search(forget_ids.begin(), forget_ids.end(), entity);
}

std::size_t EntityWorld::owner_of(Token t) const {
  for (const Entity& e : entities) {
    if (std::find(e.name_tokens.begin(), e.name_tokens.end(), t) != e.name_tokens.end()) return e.id;
    if (std::find(e.fact_tokens.begin(), e.fact_tokens.end(), t) != e.fact_tokens.end()) return e.id;
  }
  return entities.size();
}

Tokens visual_description(const EntityWorld& world, std::size_t entity) {
  const Vocab& v = world.vocab;
  const Tokens& attrs = world.entities.at(entity).visual_attrs;
  Tokens out = {v.id_of("the"), v.id_of("person"), v.id_of("is")};
  for (std::size_t i = 0; i < attrs.size(); ++i) {
    if (i + 1 == attrs.size() && attrs.size() > 1) out.push_back(v.id_of("and"));
    out.push_back(attrs[i]);
  }
  out.push_back(v.eos);
  return out;
}

Tokens plain_prompt(const EntityWorld& world) { return world.query; }

Tokens directive_prompt(const EntityWorld& world) {
  Tokens p = world.query;
  p.insert(p.end(), world.directive.begin(), world.directive.end());
  return p;
}

double image_separation_margin(const EntityWorld& world) {
  double margin = 2.0;
  for (std::size_t i = 0; i < world.images.size(); ++i) {
    const auto& own = world.images[i];
    double same = 2.0;
    for (std::size_t a = 1; a < own.size(); ++a) same = std::min(same, dot(own[0].vector, own[a].vector));
    double cross = -2.0;
    for (std::size_t j = 0; j < world.images.size(); ++j) {
      if (j == i) continue;
      for (const ImageFeature& f : world.images[j]) cross = std::max(cross, dot(own[0].vector, f.vector));
    }
    margin = std::min(margin, same - cross);
  }
  return margin;
}

EntityWorld generate_world(const WorldConfig& config, std::uint64_t seed) {
  config.validate();
  EntityWorld w;
  w.config = config;
  w.seed = seed;
  w.vocab = build_vocab(config);
  w.directive = w.vocab.directive;
  for (const char* q : kQueryWords) w.query.push_back(w.vocab.id_of(q));
  for (const char* r : kRefusalWords) w.refusal.push_back(w.vocab.id_of(r));

  const Tokens visual = w.vocab.tokens_of(TokenClass::kVisual);
  const Tokens names = w.vocab.tokens_of(TokenClass::kName);
  const Tokens facts = w.vocab.tokens_of(TokenClass::kFact);
  const std::size_t dim = config.image_dim;

  // Attribute directions double as the reference embeddings of VISUAL tokens.
  w.reference_embeddings = make_reference_embeddings(config, seed, w.vocab.size());

  constexpr int kMaxAttempts = 64;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Rng rng(derive_seed(seed, 0xA77, attempt));
    w.entities.assign(config.entities, Entity{});
    std::set<Tokens> used;
    for (std::size_t e = 0; e < config.entities; ++e) {
      Entity& ent = w.entities[e];
      ent.id = e;
      for (std::size_t i = 0; i < config.names_per_entity; ++i)
        ent.name_tokens.push_back(names[e * config.names_per_entity + i]);
      for (std::size_t i = 0; i < config.facts_per_entity; ++i)
        ent.fact_tokens.push_back(facts[e * config.facts_per_entity + i]);
      Tokens attrs;
      do {
        Tokens pool = visual;
        std::shuffle(pool.begin(), pool.end(), rng);
        attrs.assign(pool.begin(), pool.begin() + static_cast<long>(config.visual_per_entity));
        std::sort(attrs.begin(), attrs.end());
      } while (used.count(attrs) != 0);
      used.insert(attrs);
      ent.visual_attrs = attrs;
      ent.summary = ent.name_tokens;
      ent.summary.insert(ent.summary.end(), ent.fact_tokens.begin(), ent.fact_tokens.end());
    }

    w.images.assign(config.entities, {});
    for (std::size_t e = 0; e < config.entities; ++e) {
      std::vector<double> base(dim, 0.0);
      for (Token a : w.entities[e].visual_attrs)
        for (std::size_t d = 0; d < dim; ++d) base[d] += w.reference_embeddings[static_cast<std::size_t>(a)][d];
      normalize(base);
      for (std::size_t j = 0; j < config.images_per_entity; ++j) {
        Rng noise_rng(derive_seed(seed, 0x1A6, e, j));
        std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
        ImageFeature img;
        img.entity_id = e;
        img.seen = (j == 0);
        img.vector = base;
        for (double& x : img.vector) x += config.image_noise * normal(noise_rng);
        normalize(img.vector);
        w.images[e].push_back(std::move(img));
      }
    }
    if (image_separation_margin(w) >= config.min_separation) break;
    if (attempt + 1 == kMaxAttempts)
      fail(ErrorCode::kInvalidConfig, "could not draw separable images; lower image_noise or raise image_dim");
  }

  w.responses.resize(config.entities);
  for (std::size_t e = 0; e < config.entities; ++e) {
    w.responses[e].entity_id = e;
    for (std::size_t k = 0; k < config.responses_per_entity; ++k)
      w.responses[e].responses.push_back(plain_response(w.vocab, w.entities[e], k));
  }

  std::vector<std::size_t> order(config.entities);
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(seed, 0xF0));
  std::shuffle(order.begin(), order.end(), split_rng);
  w.forget_ids.assign(order.begin(), order.begin() + static_cast<long>(config.forget));
  w.retain_ids.assign(order.begin() + static_cast<long>(config.forget), order.end());
  std::sort(w.forget_ids.begin(), w.forget_ids.end());
  std::sort(w.retain_ids.begin(), w.retain_ids.end());
  return w;
}

std::string check_world_invariants(const EntityWorld& w) {
  std::ostringstream err;
  const Vocab& v = w.vocab;
  if (v.size() < 32) err << "vocab smaller than 32; ";
  for (Token t : {v.pad, v.bos, v.eos})
    if (!v.is_special(t)) err << "control token not SPECIAL; ";
  for (Token t : v.directive)
    if (!v.is_special(t)) err << "directive token not SPECIAL; ";

  std::set<Token> seen_facts;
  for (const Entity& e : w.entities) {
    if (e.visual_attrs.empty()) err << "entity " << e.id << " has no visual attributes; ";
    if (e.fact_tokens.size() < 3) err << "entity " << e.id << " has fewer than 3 facts; ";
    for (Token f : e.fact_tokens) {
      if (v.class_of(f) != TokenClass::kFact) err << "fact token of wrong class; ";
      if (!seen_facts.insert(f).second) err << "fact token " << f << " shared between entities; ";
      if (std::count(e.summary.begin(), e.summary.end(), f) != 1)
        err << "summary of entity " << e.id << " does not hold fact " << f << " exactly once; ";
    }
  }
  for (const auto& imgs : w.images) {
    if (imgs.size() < 2) err << "entity lacks an unseen image; ";
    for (const ImageFeature& img : imgs)
      if (std::abs(dot(img.vector, img.vector) - 1.0) > 1e-9) err << "image vector not unit norm; ";
  }
  if (image_separation_margin(w) <= 0.0) err << "image separability violated; ";
  for (const ResponseSet& rs : w.responses) {
    const Entity& e = w.entities.at(rs.entity_id);
    if (rs.responses.size() < 2) err << "fewer than 2 responses; ";
    for (const Tokens& r : rs.responses) {
      if (r.empty() || r.back() != v.eos) err << "response not EOS-terminated; ";
      std::size_t nn = 0, nf = 0;
      for (Token t : r) {
        if (std::find(e.name_tokens.begin(), e.name_tokens.end(), t) != e.name_tokens.end()) ++nn;
        if (std::find(e.fact_tokens.begin(), e.fact_tokens.end(), t) != e.fact_tokens.end()) ++nf;
      }
      if (nn < 1 || nf < 2) err << "response of entity " << e.id << " lacks name/fact tokens; ";
    }
  }
  std::vector<std::size_t> all = w.forget_ids;
  all.insert(all.end(), w.retain_ids.begin(), w.retain_ids.end());
  std::sort(all.begin(), all.end());
  if (all.size() != w.entities.size() || std::adjacent_find(all.begin(), all.end()) != all.end())
    err << "forget/retain sets do not partition the entities; ";
  if (w.forget_ids.size() != w.config.forget) err << "forget set size differs from config; ";
  return err.str();
}

Dataset make_forget_dataset(const EntityWorld& world) {
  Dataset d;
  for (std::size_t e : world.forget_ids) d.push_back({e, 0});
  return d;
}

Dataset make_retain_dataset(const EntityWorld& world) {
  Dataset d;
  for (std::size_t e : world.retain_ids) d.push_back({e, 0});
  return d;
}

std::vector<TrainExample> make_base_training_set(const EntityWorld& world, double directive_fraction) {
  if (!(directive_fraction > 0.0 && directive_fraction < 1.0))
    fail(ErrorCode::kInvalidConfig, "directive_fraction must lie in (0, 1)");
  std::vector<TrainExample> out;
  for (const Entity& e : world.entities) {
    const auto& imgs = world.images[e.id];
    const auto& resp = world.responses[e.id].responses;
    const std::size_t plain = imgs.size() * resp.size();
    for (std::size_t j = 0; j < imgs.size(); ++j)
      for (const Tokens& r : resp) out.push_back({e.id, j, false, r});
    const auto directive = static_cast<std::size_t>(
        std::llround(static_cast<double>(plain) * directive_fraction / (1.0 - directive_fraction)));
    for (std::size_t i = 0; i < std::max<std::size_t>(directive, 1); ++i)
      out.push_back({e.id, i % imgs.size(), true, visual_description(world, e.id)});
  }
  return out;
}

}  // namespace unlearnlab
