#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "akb/autodiff.hpp"
#include "akb/rng.hpp"

namespace akb::nn {

using ad::matrix;
using ad::parameter;
using ad::tape;
using ad::var;

template <class S>
using param_list = std::vector<parameter<S>*>;

/// Gaussian init with standard deviation gain / sqrt(fan_in).
template <class S>
matrix<S> init_normal(Eigen::Index rows, Eigen::Index cols, double fan_in, double gain,
                      rng_stream& rng) {
  matrix<S> m(rows, cols);
  const double sd = gain / std::sqrt(fan_in);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      m(i, j) = static_cast<S>(sd * rng.normal());
    }
  }
  return m;
}

template <class S>
struct dense {
  parameter<S> w;
  parameter<S> b;

  dense() = default;
  /// `zero` initialises the weights to zero (identity-at-init heads).
  dense(const std::string& name, Eigen::Index in, Eigen::Index out, rng_stream& rng,
        bool zero = false, double gain = 1.0)
      : w(name + ".w", zero ? matrix<S>(matrix<S>::Zero(out, in))
                            : init_normal<S>(out, in, static_cast<double>(in), gain, rng)),
        b(name + ".b", matrix<S>::Zero(out, 1)) {}

  var<S> operator()(tape<S>& t, const var<S>& x) { return ad::affine(t.leaf(w), x, t.leaf(b)); }
  void collect(param_list<S>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

template <class S>
struct grid_conv {
  parameter<S> w;
  parameter<S> b;

  grid_conv() = default;
  grid_conv(const std::string& name, Eigen::Index in, Eigen::Index out, rng_stream& rng,
            double gain = 1.0)
      : w(name + ".w", init_normal<S>(out, 9 * in, 9.0 * static_cast<double>(in), gain, rng)),
        b(name + ".b", matrix<S>::Zero(out, 1)) {}

  var<S> operator()(tape<S>& t, const var<S>& x, const ad::grid_layout& g) {
    return ad::grid_conv3x3(x, t.leaf(w), t.leaf(b), g);
  }
  void collect(param_list<S>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

template <class S>
struct window_attention {
  parameter<S> wq, wk, wv, wo;
  Eigen::Index window = 4;

  window_attention() = default;
  window_attention(const std::string& name, Eigen::Index channels, Eigen::Index key_dim,
                   Eigen::Index window_size, rng_stream& rng)
      : wq(name + ".q", init_normal<S>(key_dim, channels, channels, 1.0, rng)),
        wk(name + ".k", init_normal<S>(key_dim, channels, channels, 1.0, rng)),
        wv(name + ".v", init_normal<S>(key_dim, channels, channels, 1.0, rng)),
        wo(name + ".o", init_normal<S>(channels, key_dim, key_dim, 1.0, rng)),
        window(window_size) {}

  var<S> operator()(tape<S>& t, const var<S>& x, const ad::grid_layout& g) {
    const Eigen::Index win = std::min({window, g.height, g.width});
    return ad::window_attention(x, t.leaf(wq), t.leaf(wk), t.leaf(wv), t.leaf(wo), g, win);
  }
  void collect(param_list<S>& out) {
    out.insert(out.end(), {&wq, &wk, &wv, &wo});
  }
};

/// Token-mixing residual block: x + silu(mix(x)), mixing by 3x3 grid
/// convolution or windowed self-attention.
template <class S>
struct mixing_block {
  bool attention = false;
  grid_conv<S> conv;
  window_attention<S> attn;

  mixing_block() = default;
  mixing_block(const std::string& name, Eigen::Index channels, bool use_attention,
               rng_stream& rng)
      : attention(use_attention) {
    if (attention) {
      attn = window_attention<S>(name + ".attn", channels, std::max<Eigen::Index>(8, channels / 2),
                                 4, rng);
    } else {
      conv = grid_conv<S>(name + ".conv", channels, channels, rng, 0.5);
    }
  }

  var<S> operator()(tape<S>& t, const var<S>& x, const ad::grid_layout& g) {
    auto mixed = attention ? attn(t, x, g) : conv(t, x, g);
    return ad::add(x, ad::silu(mixed));
  }
  void collect(param_list<S>& out) {
    if (attention) {
      attn.collect(out);
    } else {
      conv.collect(out);
    }
  }
};

/// Feature-wise affine modulation from a per-image conditioning vector:
/// y = x * (1 + gamma(c)) + beta(c). The projection is zero-initialised so
/// the block starts as the identity.
template <class S>
struct film {
  dense<S> proj;
  Eigen::Index channels = 0;

  film() = default;
  film(const std::string& name, Eigen::Index cond_dim, Eigen::Index ch, rng_stream& rng)
      : proj(name, cond_dim, 2 * ch, rng, /*zero=*/true), channels(ch) {}

  /// `x` is (channels x B*T); `cond` is (cond_dim x B).
  var<S> operator()(tape<S>& t, const var<S>& x, const var<S>& cond, Eigen::Index tokens_per_image) {
    auto gb = proj(t, cond);
    auto gamma = ad::repeat_cols(ad::slice_rows(gb, 0, channels), tokens_per_image);
    auto beta = ad::repeat_cols(ad::slice_rows(gb, channels, channels), tokens_per_image);
    return ad::add(ad::add(x, ad::mul(x, gamma)), beta);
  }
  void collect(param_list<S>& out) { proj.collect(out); }
};

template <class S>
struct adam_config {
  S learning_rate = S(1e-3);
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S epsilon = S(1e-8);
  /// Global gradient-norm clip; <= 0 disables.
  S clip_norm = S(0);
};

template <class S>
class adam {
 public:
  adam() = default;
  adam(param_list<S> params, adam_config<S> cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      m_.push_back(matrix<S>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(matrix<S>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  /// Global L2 norm of all gradients.
  S grad_norm() const {
    double acc = 0;
    for (auto* p : params_) acc += static_cast<double>(p->grad.squaredNorm());
    return static_cast<S>(std::sqrt(acc));
  }

  void step() {
    ++steps_;
    S scale = S(1);
    if (cfg_.clip_norm > S(0)) {
      const S n = grad_norm();
      if (n > cfg_.clip_norm) scale = cfg_.clip_norm / n;
    }
    const S bc1 = S(1) - std::pow(cfg_.beta1, static_cast<S>(steps_));
    const S bc2 = S(1) - std::pow(cfg_.beta2, static_cast<S>(steps_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      const matrix<S> g = p.grad * scale;
      m_[i] = cfg_.beta1 * m_[i] + (S(1) - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (S(1) - cfg_.beta2) * g.cwiseProduct(g);
      p.value.array() -= cfg_.learning_rate * (m_[i].array() / bc1) /
                         ((v_[i].array() / bc2).sqrt() + cfg_.epsilon);
    }
  }

  void set_learning_rate(S lr) { cfg_.learning_rate = lr; }
  const adam_config<S>& config() const { return cfg_; }
  std::uint64_t steps() const { return steps_; }

 private:
  param_list<S> params_;
  std::vector<matrix<S>> m_;
  std::vector<matrix<S>> v_;
  adam_config<S> cfg_;
  std::uint64_t steps_ = 0;
};

/// Binary parameter blob: u32 count, then per tensor (u32 name length,
/// name, u32 rows, u32 cols, rows*cols little-endian f32 column-major).
template <class S>
void write_params(std::ostream& out, const param_list<S>& params);
template <class S>
void read_params(std::istream& in, const param_list<S>& params);

/// Copies values between parameter lists of identical structure.
template <class To, class From>
void copy_params(const param_list<To>& to, const param_list<From>& from) {
  if (to.size() != from.size()) throw shape_error("copy_params: parameter count differs");
  for (std::size_t i = 0; i < to.size(); ++i) {
    to[i]->value = from[i]->value.template cast<To>();
    to[i]->zero_grad();
  }
}

}  // namespace akb::nn
