#pragma once

// Central finite-difference oracle for tape gradients (test-only).

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "akb/autodiff.hpp"
#include "akb/rng.hpp"

namespace akb::test {

using loss_fn = std::function<ad::var<double>(ad::tape<double>&)>;

struct grad_check_result {
  double max_rel_error = 0.0;  // per-entry, with absolute floor
  double norm_rel_error = 0.0; // ||a - n|| / max(||a||, ||n||)
  std::size_t checked = 0;
};

inline double loss_value(const loss_fn& f) {
  ad::tape<double> t;
  return f(t).value()(0, 0);
}

/// Compares analytic gradients of `f` w.r.t. `params` against central
/// differences. At most `max_entries` entries per parameter are probed.
inline grad_check_result check_gradients(const loss_fn& f,
                                         const std::vector<ad::parameter<double>*>& params,
                                         double step, std::size_t max_entries = 64,
                                         double abs_floor = 1e-6, std::uint64_t seed = 5) {
  for (auto* p : params) p->zero_grad();
  {
    ad::tape<double> t;
    t.backward(f(t));
  }
  rng_stream rng(seed, {77});
  std::vector<double> analytic, numeric;
  grad_check_result res;
  for (auto* p : params) {
    const auto n = static_cast<std::size_t>(p->value.size());
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (n > max_entries) {
      for (std::size_t i = 0; i < max_entries; ++i) {
        std::swap(idx[i], idx[i + rng.below(n - i)]);
      }
      idx.resize(max_entries);
    }
    for (auto i : idx) {
      double& v = p->value.data()[i];
      const double orig = v;
      v = orig + step;
      const double up = loss_value(f);
      v = orig - step;
      const double down = loss_value(f);
      v = orig;
      const double num = (up - down) / (2 * step);
      const double ana = p->grad.data()[i];
      analytic.push_back(ana);
      numeric.push_back(num);
      const double denom = std::max({std::abs(ana), std::abs(num), abs_floor});
      res.max_rel_error = std::max(res.max_rel_error, std::abs(ana - num) / denom);
    }
  }
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  res.norm_rel_error = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-300});
  res.checked = analytic.size();
  return res;
}

inline ad::matrix<double> random_matrix(Eigen::Index r, Eigen::Index c, rng_stream& rng,
                                        double scale = 1.0) {
  ad::matrix<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

}  // namespace akb::test
