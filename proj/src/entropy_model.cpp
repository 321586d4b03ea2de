#include "akb/entropy_model.hpp"

#include <algorithm>
#include <cmath>

namespace akb::entropy {

rate_set::rate_set(std::vector<int> rates) : rates_(std::move(rates)) {
  if (rates_.empty()) throw invalid_argument("rate_set: empty rate set");
  if (rates_.front() < 0) throw invalid_argument("rate_set: rates must be nonnegative");
  for (std::size_t i = 1; i < rates_.size(); ++i) {
    if (rates_[i] <= rates_[i - 1]) throw invalid_argument("rate_set: rates must strictly increase");
  }
}

int rate_set::index_bits() const {
  int bits = 0;
  while ((std::size_t{1} << bits) < rates_.size()) ++bits;
  return bits;
}

double token_entropy(double y, double mu, double sigma) {
  const double p = ad::gaussian_bin_mass(y, mu, sigma);
  return -std::log2(std::max(p, ad::likelihood_floor));
}

entropy_map_t entropy_map(const feature_map& f, const gaussian_params<double>& gp) {
  if (gp.mu.rows() != f.values.rows() || gp.mu.cols() != f.values.cols() ||
      gp.sigma.rows() != f.values.rows() || gp.sigma.cols() != f.values.cols()) {
    throw shape_error("entropy_map: parameter shape does not match feature map");
  }
  entropy_map_t e(f.grid_h, f.grid_w);
  for (int y = 0; y < f.grid_h; ++y) {
    for (int x = 0; x < f.grid_w; ++x) {
      const Eigen::Index col = static_cast<Eigen::Index>(y) * f.grid_w + x;
      double bits = 0.0;
      for (Eigen::Index d = 0; d < f.values.rows(); ++d) {
        bits += token_entropy(std::round(f.values(d, col)), gp.mu(d, col), gp.sigma(d, col));
      }
      e(y, x) = bits;
    }
  }
  return e;
}

int nearest_rate_index(double target, const rate_set& rates) {
  int best = 0;
  double best_dist = std::abs(target - rates[0]);
  for (std::size_t i = 1; i < rates.size(); ++i) {
    const double d = std::abs(target - rates[i]);
    if (d < best_dist) {  // strict: ties keep the lower index
      best = static_cast<int>(i);
      best_dist = d;
    }
  }
  return best;
}

rate_index_map rate_preset_map(const entropy_map_t& e, const rate_set& rates, double eta) {
  if (rates.size() == 0) throw invalid_argument("rate_preset_map: empty rate set");
  if (!(eta > 0.0)) throw invalid_argument("rate_preset_map: eta must be positive");
  rate_index_map idx(e.rows(), e.cols());
  for (Eigen::Index j = 0; j < e.cols(); ++j) {
    for (Eigen::Index i = 0; i < e.rows(); ++i) {
      idx(i, j) = nearest_rate_index(eta * e(i, j), rates);
    }
  }
  return idx;
}

rate_index_map offset_rate_map(const rate_index_map& rm, int offset, const rate_set& rates) {
  const int top = static_cast<int>(rates.size()) - 1;
  rate_index_map out = rm;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    int& v = out.data()[i];
    if (v != 0) v = std::clamp(v + offset, 0, top);
  }
  return out;
}

double rate_loss(const entropy_map_t& e) { return e.size() == 0 ? 0.0 : e.mean(); }

long payload_symbols(const rate_index_map& idx, const rate_set& rates) {
  long total = 0;
  for (Eigen::Index i = 0; i < idx.size(); ++i) {
    const int k = idx.data()[i];
    if (k < 0 || static_cast<std::size_t>(k) >= rates.size()) {
      throw invalid_argument("rate index out of range");
    }
    total += rates[static_cast<std::size_t>(k)];
  }
  return total;
}

}  // namespace akb::entropy
