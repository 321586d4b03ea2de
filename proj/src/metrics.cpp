#include "akb/metrics.hpp"

#include <cmath>

namespace akb {

double mse(const image& a, const image& b) {
  if (!a.same_shape(b)) {
    throw shape_error("mse: image shapes differ");
  }
  const auto da = a.data();
  const auto db = b.data();
  // Integer accumulation is exact for any realistic image size.
  std::uint64_t acc = 0;
  for (std::size_t i = 0; i < da.size(); ++i) {
    const std::int64_t d = static_cast<std::int64_t>(da[i]) - db[i];
    acc += static_cast<std::uint64_t>(d * d);
  }
  return static_cast<double>(acc) / static_cast<double>(da.size());
}

double psnr_from_mse(double mse_value) {
  if (mse_value <= 0.0) {
    return psnr_cap_db;
  }
  const double v = 10.0 * std::log10(255.0 * 255.0 / mse_value);
  return std::min(v, psnr_cap_db);
}

double psnr(const image& a, const image& b) { return psnr_from_mse(mse(a, b)); }

double cbr(std::uint64_t channel_symbols, std::uint64_t side_info_symbols,
           std::uint64_t source_symbols) {
  if (source_symbols == 0) {
    throw invalid_argument("cbr: source symbol count must be positive");
  }
  return static_cast<double>(channel_symbols + side_info_symbols) /
         static_cast<double>(source_symbols);
}

double cbr(std::uint64_t channel_symbols, std::uint64_t side_info_symbols, const image& img) {
  return cbr(channel_symbols, side_info_symbols, img.size());
}

}  // namespace akb
