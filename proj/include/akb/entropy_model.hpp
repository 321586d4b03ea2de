#pragma once

#include <utility>
#include <vector>

#include <Eigen/Core>

#include "akb/autodiff.hpp"
#include "akb/feature_map.hpp"
#include "akb/nn.hpp"

namespace akb::entropy {

inline constexpr double sigma_min = 0.01;
/// -log2 of the likelihood floor: the most bits a single element can cost.
inline constexpr double max_element_bits = 29.897352853986263;

/// Discrete per-token symbol budgets (complex symbols per token).
class rate_set {
 public:
  rate_set() : rate_set(std::vector<int>{0, 2, 4, 8, 12, 16, 24, 32}) {}
  explicit rate_set(std::vector<int> rates);

  int operator[](std::size_t i) const { return rates_[i]; }
  std::size_t size() const { return rates_.size(); }
  int max_rate() const { return rates_.back(); }
  const std::vector<int>& rates() const { return rates_; }
  /// Bits needed to signal one index: ceil(log2 |rates|).
  int index_bits() const;

  friend bool operator==(const rate_set&, const rate_set&) = default;

 private:
  std::vector<int> rates_;
};

/// Per-token rate indices, grid_h x grid_w.
using rate_index_map = Eigen::MatrixXi;
/// Per-token bit estimates, grid_h x grid_w.
using entropy_map_t = Eigen::MatrixXd;

template <class S>
struct gaussian_params {
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> mu;
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> sigma;
};

/// Bits for one quantised element: -log2 of the unit-bin Gaussian mass,
/// floored at 1e-9.
double token_entropy(double y, double mu, double sigma);

/// Two-layer network mapping each token's channel vector to per-element
/// (mu, sigma). The output head is zero-initialised.
template <class S>
struct entropy_model {
  nn::dense<S> hidden;
  nn::dense<S> head;
  int depth = 0;

  entropy_model() = default;
  entropy_model(int depth_, int hidden_width, rng_stream& rng)
      : hidden("entropy.hidden", depth_, hidden_width, rng),
        head("entropy.head", hidden_width, 2 * depth_, rng, /*zero=*/true),
        depth(depth_) {}

  /// Returns (mu, sigma) nodes for a (depth x N) quantised feature input.
  std::pair<ad::var<S>, ad::var<S>> predict(ad::tape<S>& t, const ad::var<S>& y) {
    auto h = ad::silu(hidden(t, y));
    auto out = head(t, h);
    auto mu = ad::slice_rows(out, 0, depth);
    auto sigma = ad::clamp_min(ad::softplus(ad::slice_rows(out, depth, depth)), S(sigma_min));
    return {mu, sigma};
  }

  /// Per-token bits (1 x N) for quantised features y.
  ad::var<S> token_bits(ad::tape<S>& t, const ad::var<S>& y) {
    auto [mu, sigma] = predict(t, y);
    return ad::sum_rows(ad::gaussian_bits(y, mu, sigma));
  }

  void collect(nn::param_list<S>& out) {
    hidden.collect(out);
    head.collect(out);
  }
};

/// Rounds every element to its integer bin centre.
template <class S>
basic_feature_map<S> quantize(const basic_feature_map<S>& f) {
  return basic_feature_map<S>(f.grid_h, f.grid_w, f.values.array().round().matrix());
}

/// Inference-only parameter prediction; throws numeric_error on non-finite output.
template <class S>
gaussian_params<S> predict_params(const basic_feature_map<S>& f, entropy_model<S>& model) {
  if (!f.finite()) throw numeric_error("predict_params: non-finite feature map");
  if (f.depth() != model.depth) throw shape_error("predict_params: depth does not match model");
  ad::tape<S> t;
  auto [mu, sigma] = model.predict(t, t.constant(f.values));
  gaussian_params<S> gp{mu.value(), sigma.value()};
  if (!gp.mu.allFinite() || !gp.sigma.allFinite()) {
    throw numeric_error("predict_params: non-finite entropy parameters");
  }
  return gp;
}

/// Sum over depth of the element bits of the rounded features.
entropy_map_t entropy_map(const feature_map& f, const gaussian_params<double>& gp);

/// Nearest rate to eta*e per token (ties toward the lower index).
rate_index_map rate_preset_map(const entropy_map_t& e, const rate_set& rates, double eta);
int nearest_rate_index(double target, const rate_set& rates);

/// Global rate-index offset: clamp(idx + offset, 0, |rates|-1), except that
/// dropped tokens (index 0) stay dropped.
rate_index_map offset_rate_map(const rate_index_map& rm, int offset, const rate_set& rates);

/// Mean bits per token: the rate term of the training loss.
double rate_loss(const entropy_map_t& e);

/// Sum of rates over all tokens (payload complex symbols).
long payload_symbols(const rate_index_map& idx, const rate_set& rates);

}  // namespace akb::entropy
