// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0

#include "memsave/rng.hpp"

#include <cmath>
#include <numbers>

namespace memsave {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t Rng::bits_at(std::uint64_t seed, std::uint64_t index) {
  return mix64(seed + (index + 1) * kGolden);
}

double Rng::uniform_at(std::uint64_t seed, std::uint64_t index) {
  return static_cast<double>(bits_at(seed, index) >> 11) * 0x1.0p-53;
}

double Rng::normal_at(std::uint64_t seed, std::uint64_t index) {
  const std::uint64_t stream = mix64(seed ^ 0xD1B54A32D192ED03ULL);
  // 1 - u maps [0, 1) onto (0, 1] so the log is finite.
  const double u1 = 1.0 - uniform_at(stream, 2 * index);
  const double u2 = uniform_at(stream, 2 * index + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t salt) {
  return mix64(parent ^ mix64(salt + kGolden));
}

}  // namespace memsave
