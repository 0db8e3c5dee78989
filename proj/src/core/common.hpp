// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace unlearnlab {

using Token = std::int32_t;
using Tokens = std::vector<Token>;
using Rng = std::mt19937_64;

enum class ErrorCode {
  kInvalidConfig,
  kDomain,
  kNumeric,
  kInvalidBatch,
  kSize,
  kIo,
  kLayoutMismatch,
  kUndefinedInput,
  kBaseModel,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

// splitmix64 finalizer; used to derive independent stream seeds from a base
// seed and a list of tags.
std::uint64_t mix_seed(std::uint64_t x);

template <typename... Tags>
std::uint64_t derive_seed(std::uint64_t base, Tags... tags) {
  std::uint64_t s = mix_seed(base);
  ((s = mix_seed(s ^ static_cast<std::uint64_t>(tags))), ...);
  return s;
}

// 64-bit FNV-1a, stable across platforms; used for config provenance hashes.
std::uint64_t fnv1a64(const std::string& data);

std::string hex64(std::uint64_t v);

}  // namespace unlearnlab
