// SPDX-License-Identifier: Apache-2.0
#include "world_io.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace unlearnlab {

using nlohmann::json;

namespace {

constexpr int kWorldFormatVersion = 1;

json config_to_json(const WorldConfig& c) {
  return json{{"entities", c.entities},
              {"forget", c.forget},
              {"visual_pool", c.visual_pool},
              {"visual_per_entity", c.visual_per_entity},
              {"names_per_entity", c.names_per_entity},
              {"facts_per_entity", c.facts_per_entity},
              {"image_dim", c.image_dim},
              {"images_per_entity", c.images_per_entity},
              {"responses_per_entity", c.responses_per_entity},
              {"image_noise", c.image_noise},
              {"min_separation", c.min_separation}};
}

WorldConfig config_from_json(const json& j) {
  WorldConfig c;
  c.entities = j.at("entities").get<std::size_t>();
  c.forget = j.at("forget").get<std::size_t>();
  c.visual_pool = j.at("visual_pool").get<std::size_t>();
  c.visual_per_entity = j.at("visual_per_entity").get<std::size_t>();
  c.names_per_entity = j.at("names_per_entity").get<std::size_t>();
  c.facts_per_entity = j.at("facts_per_entity").get<std::size_t>();
  c.image_dim = j.at("image_dim").get<std::size_t>();
  c.images_per_entity = j.at("images_per_entity").get<std::size_t>();
  c.responses_per_entity = j.at("responses_per_entity").get<std::size_t>();
  c.image_noise = j.at("image_noise").get<double>();
  c.min_separation = j.at("min_separation").get<double>();
  return c;
}

}  // namespace

std::string world_to_jsonl(const EntityWorld& w) {
  std::vector<std::string> classes;
  for (TokenClass c : w.vocab.classes) classes.emplace_back(token_class_name(c));
  json header{{"record", "header"},
              {"format", "unlearnlab-world"},
              {"version", kWorldFormatVersion},
              {"seed", w.seed},
              {"config", config_to_json(w.config)},
              {"vocab",
               {{"names", w.vocab.names},
                {"classes", classes},
                {"pad", w.vocab.pad},
                {"bos", w.vocab.bos},
                {"eos", w.vocab.eos},
                {"directive", w.vocab.directive}}},
              {"query", w.query},
              {"directive", w.directive},
              {"refusal", w.refusal},
              {"forget_ids", w.forget_ids},
              {"retain_ids", w.retain_ids}};
  if (!w.provenance.empty()) header["provenance"] = w.provenance;
  std::string out = header.dump() + "\n";
  for (const Entity& e : w.entities) {
    json images = json::array();
    for (const ImageFeature& img : w.images[e.id])
      images.push_back({{"vector", img.vector}, {"seen_flag", img.seen}});
    json rec{{"id", e.id},
             {"name_tokens", e.name_tokens},
             {"fact_tokens", e.fact_tokens},
             {"visual_attrs", e.visual_attrs},
             {"summary", e.summary},
             {"images", images},
             {"responses", w.responses[e.id].responses}};
    out += rec.dump() + "\n";
  }
  return out;
}

EntityWorld world_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  EntityWorld w;
  bool have_header = false;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json rec = json::parse(line);
      if (!have_header) {
        if (rec.value("record", "") != "header" || rec.value("format", "") != "unlearnlab-world")
          fail(ErrorCode::kIo, "world file lacks a header record");
        if (rec.at("version").get<int>() != kWorldFormatVersion)
          fail(ErrorCode::kIo, "unsupported world format version");
        w.seed = rec.at("seed").get<std::uint64_t>();
        w.config = config_from_json(rec.at("config"));
        const json& v = rec.at("vocab");
        w.vocab.names = v.at("names").get<std::vector<std::string>>();
        for (const auto& c : v.at("classes")) w.vocab.classes.push_back(token_class_from_name(c.get<std::string>()));
        w.vocab.pad = v.at("pad").get<Token>();
        w.vocab.bos = v.at("bos").get<Token>();
        w.vocab.eos = v.at("eos").get<Token>();
        w.vocab.directive = v.at("directive").get<Tokens>();
        w.query = rec.at("query").get<Tokens>();
        w.directive = rec.at("directive").get<Tokens>();
        w.refusal = rec.at("refusal").get<Tokens>();
        w.forget_ids = rec.at("forget_ids").get<std::vector<std::size_t>>();
        w.retain_ids = rec.at("retain_ids").get<std::vector<std::size_t>>();
        if (rec.contains("provenance"))
          w.provenance = rec.at("provenance").get<std::map<std::string, std::string>>();
        have_header = true;
        continue;
      }
      Entity e;
      e.id = rec.at("id").get<std::size_t>();
      e.name_tokens = rec.at("name_tokens").get<Tokens>();
      e.fact_tokens = rec.at("fact_tokens").get<Tokens>();
      e.visual_attrs = rec.at("visual_attrs").get<Tokens>();
      e.summary = rec.at("summary").get<Tokens>();
      if (e.id != w.entities.size()) fail(ErrorCode::kIo, "entity records out of order");
      std::vector<ImageFeature> imgs;
      for (const auto& ij : rec.at("images")) {
        ImageFeature img;
        img.entity_id = e.id;
        img.vector = ij.at("vector").get<std::vector<double>>();
        img.seen = ij.at("seen_flag").get<bool>();
        imgs.push_back(std::move(img));
      }
      ResponseSet rs;
      rs.entity_id = e.id;
      rs.responses = rec.at("responses").get<std::vector<Tokens>>();
      w.entities.push_back(std::move(e));
      w.images.push_back(std::move(imgs));
      w.responses.push_back(std::move(rs));
    }
  } catch (const json::exception& ex) {
    fail(ErrorCode::kIo, std::string("malformed world file: ") + ex.what());
  }
  if (!have_header) fail(ErrorCode::kIo, "empty world file");
  if (w.entities.size() != w.config.entities) fail(ErrorCode::kIo, "entity count differs from header config");
  w.reference_embeddings = make_reference_embeddings(w.config, w.seed, w.vocab.size());
  return w;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write '" + path + "'");
  out << text;
  if (!out) fail(ErrorCode::kIo, "short write to '" + path + "'");
}

void write_world(const EntityWorld& world, const std::string& path) {
  write_text_file(path, world_to_jsonl(world));
}

EntityWorld read_world(const std::string& path) { return world_from_jsonl(read_text_file(path)); }

}  // namespace unlearnlab
