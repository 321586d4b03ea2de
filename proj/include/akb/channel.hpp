#pragma once

#include <complex>
#include <vector>

#include <Eigen/Core>

#include "akb/rng.hpp"

namespace akb::channel {

using symbol = std::complex<double>;
/// One complex baseband value is one channel symbol.
using symbol_block = std::vector<symbol>;

enum class channel_kind { awgn };

struct channel_spec {
  channel_kind kind = channel_kind::awgn;
  double snr_db = 10.0;
};

/// Noise variance per complex symbol for unit signal power.
inline double noise_variance(double snr_db) { return std::pow(10.0, -snr_db / 10.0); }

symbol_block normalize_power(const symbol_block& block);

/// Adds circularly symmetric complex Gaussian noise, variance
/// 10^(-snr/10) per symbol (half per real component).
symbol_block awgn(const symbol_block& block, const channel_spec& spec, rng_stream& rng);

/// Flat per-token SNR map (the channel-KB agent's SNR input).
Eigen::MatrixXd snr_map(const channel_spec& spec, int grid_h, int grid_w);

/// 10*log10(signal energy / noise energy); 99 dB when noiseless.
double empirical_snr(const symbol_block& clean, const symbol_block& noisy);

double mean_power(const symbol_block& block);

}  // namespace akb::channel
