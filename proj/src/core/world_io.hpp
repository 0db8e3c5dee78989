// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "world.hpp"

#include <string>

namespace unlearnlab {

// JSON-lines: a header record (config, seed, vocab, prompts, splits) followed
// by one record per entity.
std::string world_to_jsonl(const EntityWorld& world);
EntityWorld world_from_jsonl(const std::string& text);

void write_world(const EntityWorld& world, const std::string& path);
EntityWorld read_world(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace unlearnlab
