#pragma once

#include <cstdint>
#include <string_view>

// Platform-independent hashing and uniform draws. std::hash and the standard
// distributions are not specified bit-for-bit, so anything that feeds a
// results file goes through these instead.
namespace streamctx::detail {

constexpr std::uint64_t fnv1a64(std::string_view text) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Top 53 bits mapped onto [0, 1).
constexpr double to_unit(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Uniform integer in [lo, hi] from 64 random bits. The modulo bias is below
// 2^-40 for the ranges used here.
constexpr std::int64_t to_range(std::uint64_t bits, std::int64_t lo, std::int64_t hi) noexcept {
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<std::int64_t>(bits % span);
}

}  // namespace streamctx::detail
