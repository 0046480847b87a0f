// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace memsave {

// Counter-based generator: draw i of stream `seed` is the SplitMix64
// finalizer applied to seed + (i + 1) * 0x9E3779B97F4A7C15, with mixing
// multipliers 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB (shifts 30, 27, 31).
// Any draw can be regenerated from (seed, index) alone, which is what
// dropout mask replay relies on.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() { return bits_at(seed_, counter_++); }
  double next_uniform() { return uniform_at(seed_, counter_++); }
  double next_normal() { return normal_at(seed_, counter_++); }

  static std::uint64_t bits_at(std::uint64_t seed, std::uint64_t index);
  /// Uniform in [0, 1) with 53 bits of resolution.
  static double uniform_at(std::uint64_t seed, std::uint64_t index);
  /// Standard normal via Box-Muller on draws 2i and 2i+1 of a derived stream.
  static double normal_at(std::uint64_t seed, std::uint64_t index);

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

/// Derives an independent stream seed from a parent seed and a salt.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t salt);

}  // namespace memsave
