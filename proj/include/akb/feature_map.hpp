#pragma once

#include <Eigen/Core>

#include "akb/error.hpp"

namespace akb {

/// Latent token grid: `values` is depth x (grid_h*grid_w), token (y, x) in
/// column y*grid_w + x.
template <class S>
struct basic_feature_map {
  int grid_h = 0;
  int grid_w = 0;
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> values;

  basic_feature_map() = default;
  basic_feature_map(int h, int w, Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> v)
      : grid_h(h), grid_w(w), values(std::move(v)) {
    if (h < 1 || w < 1 || values.cols() != static_cast<Eigen::Index>(h) * w) {
      throw shape_error("feature map: values must have grid_h*grid_w columns");
    }
  }

  int depth() const { return static_cast<int>(values.rows()); }
  int tokens() const { return grid_h * grid_w; }
  bool finite() const { return values.allFinite(); }
};

using feature_map = basic_feature_map<double>;

}  // namespace akb
