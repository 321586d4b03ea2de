#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace akb {

/// Deterministic random stream keyed by (root seed, stream id tuple).
///
/// The seed is derived by splitmix64-mixing the root seed and every id
/// component, then fed to std::mt19937_64, whose output sequence is fixed
/// by the standard. Uniform and normal variates are produced here rather
/// than via <random> distributions, whose algorithms are implementation
/// defined, so streams match across toolchains.
class rng_stream {
 public:
  using result_type = std::uint64_t;

  rng_stream() : rng_stream(0, {}) {}
  rng_stream(std::uint64_t root_seed, std::span<const std::uint64_t> stream_id);
  rng_stream(std::uint64_t root_seed, std::initializer_list<std::uint64_t> stream_id)
      : rng_stream(root_seed, std::span<const std::uint64_t>(stream_id.begin(), stream_id.size())) {}

  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return engine_(); }

  std::uint64_t root_seed() const noexcept { return root_seed_; }
  const std::vector<std::uint64_t>& stream_id() const noexcept { return stream_id_; }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller.
  double normal();
  std::vector<std::uint8_t> bytes(std::size_t n);

 private:
  std::uint64_t root_seed_;
  std::vector<std::uint64_t> stream_id_;
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

rng_stream rng_derive(std::uint64_t root_seed, std::initializer_list<std::uint64_t> stream_id);

std::uint64_t splitmix64(std::uint64_t x);
/// 64-bit FNV-1a; stable text/file hashing.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::uint64_t fnv1a64(std::string_view text);

}  // namespace akb
