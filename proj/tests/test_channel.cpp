#include <doctest.h>

#include <cmath>

#include "akb/channel.hpp"
#include "akb/error.hpp"

using namespace akb;
using namespace akb::channel;

namespace {

symbol_block unit_block(std::size_t n, std::uint64_t seed) {
  // Random QPSK-like unit-power symbols.
  rng_stream rng(seed, {1});
  symbol_block b(n);
  for (auto& s : b) {
    s = symbol(rng.uniform() < 0.5 ? -1.0 : 1.0, rng.uniform() < 0.5 ? -1.0 : 1.0) / std::sqrt(2.0);
  }
  return b;
}

}  // namespace

TEST_CASE("normalize_power examples") {
  auto a = normalize_power({symbol(1, 0), symbol(1, 0)});
  CHECK(a[0] == symbol(1, 0));
  CHECK(a[1] == symbol(1, 0));
  auto b = normalize_power({symbol(2, 0), symbol(0, 0)});
  CHECK(b[0].real() == doctest::Approx(std::sqrt(2.0)));
  CHECK(b[1] == symbol(0, 0));
  CHECK_THROWS_AS(normalize_power({symbol(0, 0), symbol(0, 0)}), numeric_error);
  CHECK_THROWS(normalize_power({}));
}

TEST_CASE("normalize_power yields unit power") {
  rng_stream rng(4, {0});
  symbol_block b(1000);
  for (auto& s : b) s = symbol(5 * rng.normal(), 3 * rng.normal());
  CHECK(mean_power(normalize_power(b)) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("noise variance examples") {
  CHECK(noise_variance(10.0) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(noise_variance(0.0) == 1.0);
  rng_stream rng(1, {0});
  CHECK(awgn({}, channel_spec{channel_kind::awgn, 10.0}, rng).empty());
}

TEST_CASE("awgn calibration over 1e6 symbols") {
  for (double snr : {0.0, 10.0}) {
    const auto clean = unit_block(1000000, 11);
    rng_stream rng(2024, {static_cast<std::uint64_t>(snr)});
    const auto noisy = awgn(clean, channel_spec{channel_kind::awgn, snr}, rng);
    CHECK(noisy.size() == clean.size());
    CHECK(std::abs(empirical_snr(clean, noisy) - snr) < 0.1);
    double mre = 0, mim = 0, var = 0;
    for (std::size_t i = 0; i < clean.size(); ++i) {
      const auto n = noisy[i] - clean[i];
      mre += n.real();
      mim += n.imag();
      var += std::norm(n);
    }
    const double cnt = static_cast<double>(clean.size());
    CHECK(std::abs(mre / cnt) < 5e-3);
    CHECK(std::abs(mim / cnt) < 5e-3);
    CHECK(std::abs(var / cnt / noise_variance(snr) - 1.0) < 0.01);
  }
}

TEST_CASE("awgn is deterministic given the stream") {
  const auto clean = unit_block(512, 3);
  rng_stream r1(5, {1, 2}), r2(5, {1, 2});
  const channel_spec spec{channel_kind::awgn, 3.0};
  CHECK(awgn(clean, spec, r1) == awgn(clean, spec, r2));
}

TEST_CASE("empirical_snr cap") {
  const auto clean = unit_block(16, 1);
  CHECK(empirical_snr(clean, clean) == 99.0);
  CHECK_THROWS(empirical_snr(clean, symbol_block(3)));
}

TEST_CASE("snr_map broadcasts the scalar") {
  auto m = snr_map({channel_kind::awgn, 10.0}, 16, 16);
  CHECK(m.rows() == 16);
  CHECK(m.cols() == 16);
  CHECK((m.array() == 10.0).all());
  auto one = snr_map({channel_kind::awgn, 0.0}, 1, 1);
  CHECK(one(0, 0) == 0.0);
  auto neg = snr_map({channel_kind::awgn, -5.0}, 2, 3);
  CHECK(neg.rows() == 2);
  CHECK(neg.cols() == 3);
  CHECK((neg.array() == -5.0).all());
  CHECK_THROWS(snr_map({channel_kind::awgn, 1.0}, 0, 3));
}
