#include "akb/channel.hpp"

#include <cmath>

#include "akb/error.hpp"
#include "akb/metrics.hpp"

namespace akb::channel {

double mean_power(const symbol_block& block) {
  if (block.empty()) {
    return 0.0;
  }
  double acc = 0.0;
  for (const auto& s : block) {
    acc += std::norm(s);
  }
  return acc / static_cast<double>(block.size());
}

symbol_block normalize_power(const symbol_block& block) {
  if (block.empty()) {
    throw invalid_argument("normalize_power: empty block");
  }
  const double p = mean_power(block);
  if (!(p > 0.0) || !std::isfinite(p)) {
    throw numeric_error("normalize_power: block has zero or non-finite power");
  }
  const double scale = 1.0 / std::sqrt(p);
  symbol_block out(block.size());
  for (std::size_t i = 0; i < block.size(); ++i) {
    out[i] = block[i] * scale;
  }
  return out;
}

symbol_block awgn(const symbol_block& block, const channel_spec& spec, rng_stream& rng) {
  if (!std::isfinite(spec.snr_db)) {
    throw invalid_argument("awgn: snr_db must be finite");
  }
  const double sd = std::sqrt(noise_variance(spec.snr_db) / 2.0);
  symbol_block out(block.size());
  for (std::size_t i = 0; i < block.size(); ++i) {
    const double re = rng.normal();
    const double im = rng.normal();
    out[i] = block[i] + symbol(sd * re, sd * im);
  }
  return out;
}

Eigen::MatrixXd snr_map(const channel_spec& spec, int grid_h, int grid_w) {
  if (grid_h < 1 || grid_w < 1) {
    throw shape_error("snr_map: grid dimensions must be >= 1");
  }
  return Eigen::MatrixXd::Constant(grid_h, grid_w, spec.snr_db);
}

double empirical_snr(const symbol_block& clean, const symbol_block& noisy) {
  if (clean.size() != noisy.size() || clean.empty()) {
    throw shape_error("empirical_snr: blocks must be non-empty and equal length");
  }
  double signal = 0.0;
  double noise = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    signal += std::norm(clean[i]);
    noise += std::norm(noisy[i] - clean[i]);
  }
  if (noise <= 0.0) {
    return psnr_cap_db;
  }
  return 10.0 * std::log10(signal / noise);
}

}  // namespace akb::channel
