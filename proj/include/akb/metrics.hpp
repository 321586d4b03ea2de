#pragma once

#include <cstdint>
#include <string>

#include "akb/image.hpp"

namespace akb {

inline constexpr double psnr_cap_db = 99.0;

/// Mean squared intensity difference over all H*W*3 components.
double mse(const image& a, const image& b);

/// 10*log10(255^2 / mse), capped at `psnr_cap_db` when the images match.
double psnr(const image& a, const image& b);
double psnr_from_mse(double mse_value);

/// Channel bandwidth ratio: transmitted complex symbols (payload plus side
/// information) per source pixel component.
double cbr(std::uint64_t channel_symbols, std::uint64_t side_info_symbols, const image& img);
double cbr(std::uint64_t channel_symbols, std::uint64_t side_info_symbols,
           std::uint64_t source_symbols);

/// One aggregated evaluation cell.
struct link_report {
  std::string scheme;
  double snr_db = 0.0;
  double cbr = 0.0;
  double psnr_db = 0.0;
  double psnr_std = 0.0;
  std::uint64_t n_images = 1;
  std::uint64_t seed = 0;
};

}  // namespace akb
