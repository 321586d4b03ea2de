#include "akb/rng.hpp"

#include <cmath>
#include <numbers>

namespace akb {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(std::string_view text) {
  return fnv1a64(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

namespace {

std::uint64_t derive_seed(std::uint64_t root, std::span<const std::uint64_t> ids) {
  // Length is mixed in so (1) and (1, 0) differ.
  std::uint64_t h = splitmix64(root ^ 0x6a09e667f3bcc909ULL);
  h = splitmix64(h ^ ids.size());
  for (auto id : ids) {
    h = splitmix64(h ^ splitmix64(id));
  }
  return h;
}

}  // namespace

rng_stream::rng_stream(std::uint64_t root_seed, std::span<const std::uint64_t> stream_id)
    : root_seed_(root_seed),
      stream_id_(stream_id.begin(), stream_id.end()),
      engine_(derive_seed(root_seed, stream_id)) {}

double rng_stream::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::uint64_t rng_stream::below(std::uint64_t n) {
  if (n <= 1) {
    return 0;
  }
  // Rejection sampling keeps the result unbiased.
  const std::uint64_t limit = max() - max() % n;
  std::uint64_t v;
  do {
    v = engine_();
  } while (v >= limit);
  return v % n;
}

double rng_stream::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_normal_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  cached_normal_ = r * std::sin(theta);
  has_cached_ = true;
  return r * std::cos(theta);
}

std::vector<std::uint8_t> rng_stream::bytes(std::size_t n) {
  std::vector<std::uint8_t> out;
  out.reserve(n);
  while (out.size() < n) {
    std::uint64_t v = engine_();
    for (int i = 0; i < 8 && out.size() < n; ++i) {
      out.push_back(static_cast<std::uint8_t>(v & 0xff));
      v >>= 8;
    }
  }
  return out;
}

rng_stream rng_derive(std::uint64_t root_seed, std::initializer_list<std::uint64_t> stream_id) {
  return rng_stream(root_seed, stream_id);
}

}  // namespace akb
