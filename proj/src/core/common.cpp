// SPDX-License-Identifier: Apache-2.0
#include "common.hpp"

#include <cstdio>

namespace unlearnlab {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidConfig: return "invalid-config";
    case ErrorCode::kDomain: return "domain";
    case ErrorCode::kNumeric: return "numeric";
    case ErrorCode::kInvalidBatch: return "invalid-batch";
    case ErrorCode::kSize: return "size";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kLayoutMismatch: return "layout-mismatch";
    case ErrorCode::kUndefinedInput: return "undefined-input";
    case ErrorCode::kBaseModel: return "base-model";
  }
  return "unknown";
}

std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace unlearnlab
