#pragma once

// Minimal reverse-mode differentiation over dense Eigen matrices.
//
// A `tape` records every operation of one forward pass; `backward` replays
// the recorded closures in reverse. Activations are laid out one token per
// column (features x tokens), so most layers are a single GEMM.

#include <cmath>
#include <functional>
#include <initializer_list>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "akb/error.hpp"

namespace akb::ad {

template <class S>
using matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
using Eigen::Index;

/// Trainable tensor with its gradient accumulator.
template <class S>
struct parameter {
  std::string name;
  matrix<S> value;
  matrix<S> grad;

  parameter() = default;
  parameter(std::string n, matrix<S> v) : name(std::move(n)), value(std::move(v)) { zero_grad(); }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Index size() const { return value.size(); }
};

template <class S>
class tape;

template <class S>
class var {
 public:
  var() = default;
  var(tape<S>* t, int id) : tape_(t), id_(id) {}

  const matrix<S>& value() const { return tape_->value(id_); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  int id() const { return id_; }
  tape<S>& owner() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  tape<S>* tape_ = nullptr;
  int id_ = -1;
};

template <class S>
class tape {
 public:
  using backward_fn = std::function<void(tape&, int self)>;

  var<S> constant(matrix<S> v) { return push(std::move(v), {}, nullptr, false); }

  /// Leaf bound to a parameter; backward accumulates into `p.grad`.
  var<S> leaf(parameter<S>& p) {
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
      p.zero_grad();
    }
    auto v = push(p.value, {}, nullptr, true);
    nodes_[v.id()].param = &p;
    return v;
  }

  /// Records an op node. `inputs` decides whether the node needs a gradient.
  var<S> push(matrix<S> value, std::initializer_list<var<S>> inputs, backward_fn back) {
    bool needs = false;
    for (const auto& in : inputs) {
      needs = needs || nodes_[in.id()].needs_grad;
    }
    return push(std::move(value), {}, needs ? std::move(back) : nullptr, needs);
  }

  /// Records an op node whose gradient requirement was computed by the caller.
  var<S> push_node(matrix<S> value, bool needs, backward_fn back) {
    return push(std::move(value), {}, needs ? std::move(back) : nullptr, needs);
  }

  const matrix<S>& value(int id) const { return nodes_[id].value; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  bool has_grad(int id) const { return nodes_[id].has_grad; }
  const matrix<S>& grad(int id) const { return nodes_[id].grad; }

  template <class Expr>
  void accumulate(int id, const Eigen::MatrixBase<Expr>& g) {
    auto& n = nodes_[id];
    if (!n.needs_grad) {
      return;
    }
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  /// Backpropagates from a scalar (1x1) root with seed gradient 1.
  void backward(const var<S>& root) {
    if (root.rows() != 1 || root.cols() != 1) {
      throw shape_error("backward: root must be a 1x1 scalar");
    }
    accumulate(root.id(), matrix<S>::Ones(1, 1));
    for (int id = root.id(); id >= 0; --id) {
      auto& n = nodes_[id];
      if (!n.has_grad) {
        continue;
      }
      if (n.back) {
        n.back(*this, id);
      } else if (n.param != nullptr) {
        n.param->grad += n.grad;
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct node {
    matrix<S> value;
    matrix<S> grad;
    backward_fn back;
    parameter<S>* param = nullptr;
    bool needs_grad = false;
    bool has_grad = false;
  };

  var<S> push(matrix<S> value, std::initializer_list<var<S>>, backward_fn back, bool needs) {
    node n;
    n.value = std::move(value);
    n.back = std::move(back);
    n.needs_grad = needs;
    nodes_.push_back(std::move(n));
    return var<S>(this, static_cast<int>(nodes_.size()) - 1);
  }

  std::vector<node> nodes_;
};

namespace detail {

inline void require(bool ok, const char* what) {
  if (!ok) {
    throw shape_error(what);
  }
}

template <class S>
void require_same(const var<S>& a, const var<S>& b, const char* what) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), what);
}

}  // namespace detail

// ---------------------------------------------------------------- linear algebra

template <class S>
var<S> matmul(const var<S>& a, const var<S>& b) {
  detail::require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  const int ia = a.id(), ib = b.id();
  return a.owner().push(a.value() * b.value(), {a, b}, [ia, ib](tape<S>& t, int self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.needs_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

/// W x + b, with bias `b` (rows x 1) broadcast across columns.
template <class S>
var<S> affine(const var<S>& w, const var<S>& x, const var<S>& b) {
  detail::require(w.cols() == x.rows(), "affine: weight/input mismatch");
  detail::require(b.rows() == w.rows() && b.cols() == 1, "affine: bias must be (out x 1)");
  matrix<S> y = w.value() * x.value();
  y.colwise() += b.value().col(0);
  const int iw = w.id(), ix = x.id(), ib = b.id();
  return w.owner().push(std::move(y), {w, x, b}, [iw, ix, ib](tape<S>& t, int self) {
    const auto& g = t.grad(self);
    if (t.needs_grad(iw)) t.accumulate(iw, g * t.value(ix).transpose());
    if (t.needs_grad(ix)) t.accumulate(ix, t.value(iw).transpose() * g);
    if (t.needs_grad(ib)) t.accumulate(ib, g.rowwise().sum());
  });
}

// ---------------------------------------------------------------- elementwise

template <class S>
var<S> add(const var<S>& a, const var<S>& b) {
  detail::require_same(a, b, "add: shape mismatch");
  const int ia = a.id(), ib = b.id();
  return a.owner().push(a.value() + b.value(), {a, b}, [ia, ib](tape<S>& t, int self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self));
  });
}

template <class S>
var<S> sub(const var<S>& a, const var<S>& b) {
  detail::require_same(a, b, "sub: shape mismatch");
  const int ia = a.id(), ib = b.id();
  return a.owner().push(a.value() - b.value(), {a, b}, [ia, ib](tape<S>& t, int self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, -t.grad(self));
  });
}

template <class S>
var<S> mul(const var<S>& a, const var<S>& b) {
  detail::require_same(a, b, "mul: shape mismatch");
  const int ia = a.id(), ib = b.id();
  return a.owner().push(a.value().cwiseProduct(b.value()), {a, b},
                        [ia, ib](tape<S>& t, int self) {
                          const auto& g = t.grad(self);
                          if (t.needs_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                          if (t.needs_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                        });
}

template <class S>
var<S> scale(const var<S>& a, S s) {
  const int ia = a.id();
  return a.owner().push(a.value() * s, {a},
                        [ia, s](tape<S>& t, int self) { t.accumulate(ia, t.grad(self) * s); });
}

template <class S>
var<S> add_scalar(const var<S>& a, S s) {
  const int ia = a.id();
  return a.owner().push((a.value().array() + s).matrix(), {a},
                        [ia](tape<S>& t, int self) { t.accumulate(ia, t.grad(self)); });
}

template <class S>
var<S> square(const var<S>& a) {
  const int ia = a.id();
  return a.owner().push(a.value().array().square().matrix(), {a}, [ia](tape<S>& t, int self) {
    t.accumulate(ia, (S(2) * t.grad(self).array() * t.value(ia).array()).matrix());
  });
}

template <class S>
var<S> exp(const var<S>& a) {
  const int ia = a.id();
  return a.owner().push(a.value().array().exp().matrix(), {a}, [ia](tape<S>& t, int self) {
    t.accumulate(ia, t.grad(self).cwiseProduct(t.value(self)));
  });
}

/// x * sigmoid(x)
template <class S>
var<S> silu(const var<S>& a) {
  const matrix<S> sig = (S(1) / (S(1) + (-a.value().array()).exp())).matrix();
  matrix<S> y = a.value().cwiseProduct(sig);
  const int ia = a.id();
  return a.owner().push(std::move(y), {a}, [ia, sig](tape<S>& t, int self) {
    const auto x = t.value(ia).array();
    const auto s = sig.array();
    t.accumulate(ia, (t.grad(self).array() * (s * (S(1) + x * (S(1) - s)))).matrix());
  });
}

template <class S>
var<S> tanh(const var<S>& a) {
  const int ia = a.id();
  return a.owner().push(a.value().array().tanh().matrix(), {a}, [ia](tape<S>& t, int self) {
    const auto y = t.value(self).array();
    t.accumulate(ia, (t.grad(self).array() * (S(1) - y.square())).matrix());
  });
}

/// log(1 + e^x), computed stably.
template <class S>
var<S> softplus(const var<S>& a) {
  const auto x = a.value().array();
  matrix<S> y = (x.max(S(0)) + (S(1) + (-x.abs()).exp()).log()).matrix();
  const int ia = a.id();
  return a.owner().push(std::move(y), {a}, [ia](tape<S>& t, int self) {
    const auto xv = t.value(ia).array();
    t.accumulate(ia, (t.grad(self).array() / (S(1) + (-xv).exp())).matrix());
  });
}

/// max(x, lo); zero gradient where clamped.
template <class S>
var<S> clamp_min(const var<S>& a, S lo) {
  const int ia = a.id();
  return a.owner().push(a.value().cwiseMax(lo), {a}, [ia, lo](tape<S>& t, int self) {
    t.accumulate(ia, (t.value(ia).array() >= lo).select(t.grad(self), S(0)).matrix());
  });
}

/// Rounds to the nearest integer; the gradient passes straight through.
template <class S>
var<S> round_ste(const var<S>& a) {
  const int ia = a.id();
  return a.owner().push(a.value().array().round().matrix(), {a},
                        [ia](tape<S>& t, int self) { t.accumulate(ia, t.grad(self)); });
}

// ---------------------------------------------------------------- shape ops

template <class S>
var<S> concat_rows(const std::vector<var<S>>& parts) {
  detail::require(!parts.empty(), "concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  bool needs = false;
  for (const auto& p : parts) {
    detail::require(p.cols() == cols, "concat_rows: column counts differ");
    rows += p.rows();
    needs = needs || p.owner().needs_grad(p.id());
  }
  matrix<S> y(rows, cols);
  std::vector<int> ids;
  std::vector<Index> offsets;
  Index r = 0;
  for (const auto& p : parts) {
    y.middleRows(r, p.rows()) = p.value();
    ids.push_back(p.id());
    offsets.push_back(r);
    r += p.rows();
  }
  auto& t = parts.front().owner();
  auto back = [ids, offsets](tape<S>& tp, int self) {
    const auto& g = tp.grad(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const Index n = tp.value(ids[i]).rows();
      tp.accumulate(ids[i], g.middleRows(offsets[i], n));
    }
  };
  return t.push_node(std::move(y), needs, std::move(back));
}

template <class S>
var<S> slice_rows(const var<S>& a, Index start, Index n) {
  detail::require(start >= 0 && start + n <= a.rows(), "slice_rows: out of range");
  const int ia = a.id();
  const Index total = a.rows();
  return a.owner().push(a.value().middleRows(start, n), {a},
                        [ia, start, n, total](tape<S>& t, int self) {
                          matrix<S> g = matrix<S>::Zero(total, t.grad(self).cols());
                          g.middleRows(start, n) = t.grad(self);
                          t.accumulate(ia, g);
                        });
}

/// (R x B) -> (R x B*k): each column repeated k times consecutively.
template <class S>
var<S> repeat_cols(const var<S>& a, Index k) {
  const Index groups = a.cols();
  matrix<S> y(a.rows(), groups * k);
  for (Index g = 0; g < groups; ++g) {
    y.middleCols(g * k, k) = a.value().col(g).replicate(1, k);
  }
  const int ia = a.id();
  return a.owner().push(std::move(y), {a}, [ia, groups, k](tape<S>& t, int self) {
    const auto& gr = t.grad(self);
    matrix<S> g(gr.rows(), groups);
    for (Index c = 0; c < groups; ++c) {
      g.col(c) = gr.middleCols(c * k, k).rowwise().sum();
    }
    t.accumulate(ia, g);
  });
}

/// (R x B*k) -> (R x B): mean over each run of k consecutive columns.
template <class S>
var<S> mean_pool_cols(const var<S>& a, Index k) {
  detail::require(k > 0 && a.cols() % k == 0, "mean_pool_cols: columns not divisible");
  const Index groups = a.cols() / k;
  matrix<S> y(a.rows(), groups);
  for (Index g = 0; g < groups; ++g) {
    y.col(g) = a.value().middleCols(g * k, k).rowwise().mean();
  }
  const int ia = a.id();
  return a.owner().push(std::move(y), {a}, [ia, groups, k](tape<S>& t, int self) {
    const auto& gr = t.grad(self);
    matrix<S> g(gr.rows(), groups * k);
    for (Index c = 0; c < groups; ++c) {
      g.middleCols(c * k, k) = (gr.col(c) / S(k)).replicate(1, k);
    }
    t.accumulate(ia, g);
  });
}

// ---------------------------------------------------------------- reductions

/// Column sums, (R x N) -> (1 x N).
template <class S>
var<S> sum_rows(const var<S>& a) {
  const int ia = a.id();
  const Index r = a.rows();
  return a.owner().push(a.value().colwise().sum(), {a}, [ia, r](tape<S>& t, int self) {
    t.accumulate(ia, t.grad(self).replicate(r, 1));
  });
}

template <class S>
var<S> mean_all(const var<S>& a) {
  matrix<S> y(1, 1);
  y(0, 0) = a.value().mean();
  const int ia = a.id();
  const Index r = a.rows(), c = a.cols();
  return a.owner().push(std::move(y), {a}, [ia, r, c](tape<S>& t, int self) {
    t.accumulate(ia, matrix<S>::Constant(r, c, t.grad(self)(0, 0) / S(r * c)));
  });
}

template <class S>
var<S> sum_all(const var<S>& a) {
  matrix<S> y(1, 1);
  y(0, 0) = a.value().sum();
  const int ia = a.id();
  const Index r = a.rows(), c = a.cols();
  return a.owner().push(std::move(y), {a}, [ia, r, c](tape<S>& t, int self) {
    t.accumulate(ia, matrix<S>::Constant(r, c, t.grad(self)(0, 0)));
  });
}

/// Mean squared difference, as a 1x1 scalar.
template <class S>
var<S> mse(const var<S>& a, const var<S>& b) {
  return mean_all(square(sub(a, b)));
}

// ---------------------------------------------------------------- token grids

/// Batch of token grids stored column-wise: column = b*h*w + y*w + x.
struct grid_layout {
  Index batch = 1;
  Index height = 1;
  Index width = 1;
  Index tokens_per_image() const { return height * width; }
  Index tokens() const { return batch * height * width; }
};

namespace detail {

/// Neighbourhood gather for a 3x3 same-padded convolution.
template <class S>
matrix<S> im2col3x3(const matrix<S>& x, const grid_layout& g) {
  const Index c = x.rows();
  matrix<S> cols = matrix<S>::Zero(9 * c, x.cols());
  for (Index b = 0; b < g.batch; ++b) {
    for (Index yy = 0; yy < g.height; ++yy) {
      for (Index xx = 0; xx < g.width; ++xx) {
        const Index dst = b * g.tokens_per_image() + yy * g.width + xx;
        for (int k = 0; k < 9; ++k) {
          const Index sy = yy + k / 3 - 1;
          const Index sx = xx + k % 3 - 1;
          if (sy < 0 || sy >= g.height || sx < 0 || sx >= g.width) continue;
          cols.block(k * c, dst, c, 1) = x.col(b * g.tokens_per_image() + sy * g.width + sx);
        }
      }
    }
  }
  return cols;
}

template <class S>
matrix<S> col2im3x3(const matrix<S>& cols, Index c, const grid_layout& g) {
  matrix<S> x = matrix<S>::Zero(c, cols.cols());
  for (Index b = 0; b < g.batch; ++b) {
    for (Index yy = 0; yy < g.height; ++yy) {
      for (Index xx = 0; xx < g.width; ++xx) {
        const Index src = b * g.tokens_per_image() + yy * g.width + xx;
        for (int k = 0; k < 9; ++k) {
          const Index sy = yy + k / 3 - 1;
          const Index sx = xx + k % 3 - 1;
          if (sy < 0 || sy >= g.height || sx < 0 || sx >= g.width) continue;
          x.col(b * g.tokens_per_image() + sy * g.width + sx) += cols.block(k * c, src, c, 1);
        }
      }
    }
  }
  return x;
}

}  // namespace detail

/// 3x3 zero-padded convolution over each image's token grid.
/// `w` is (out x 9*in), taps ordered row-major with input channels inner.
template <class S>
var<S> grid_conv3x3(const var<S>& x, const var<S>& w, const var<S>& b, const grid_layout& g) {
  detail::require(x.cols() == g.tokens(), "grid_conv3x3: token count does not match layout");
  detail::require(w.cols() == 9 * x.rows(), "grid_conv3x3: weight must be (out x 9*in)");
  detail::require(b.rows() == w.rows() && b.cols() == 1, "grid_conv3x3: bias shape");
  matrix<S> cols = detail::im2col3x3(x.value(), g);
  matrix<S> y = w.value() * cols;
  y.colwise() += b.value().col(0);
  const int ix = x.id(), iw = w.id(), ib = b.id();
  const Index cin = x.rows();
  return x.owner().push(std::move(y), {x, w, b},
                        [ix, iw, ib, cin, g, cols = std::move(cols)](tape<S>& t, int self) {
                          const auto& gr = t.grad(self);
                          if (t.needs_grad(iw)) t.accumulate(iw, gr * cols.transpose());
                          if (t.needs_grad(ib)) t.accumulate(ib, gr.rowwise().sum());
                          if (t.needs_grad(ix)) {
                            const matrix<S> dcols = t.value(iw).transpose() * gr;
                            t.accumulate(ix, detail::col2im3x3<S>(dcols, cin, g));
                          }
                        });
}

/// Single-head self-attention restricted to non-overlapping windows of
/// `window` x `window` tokens. Projections are (d x c); output is (c x N).
template <class S>
var<S> window_attention(const var<S>& x, const var<S>& wq, const var<S>& wk, const var<S>& wv,
                        const var<S>& wo, const grid_layout& g, Index window) {
  detail::require(x.cols() == g.tokens(), "window_attention: token count does not match layout");
  detail::require(window > 0 && g.height % window == 0 && g.width % window == 0,
                  "window_attention: window must divide the grid");
  const Index d = wq.rows();
  const S inv_sqrt = S(1) / std::sqrt(S(d));
  const matrix<S> q = wq.value() * x.value();
  const matrix<S> k = wk.value() * x.value();
  const matrix<S> v = wv.value() * x.value();
  matrix<S> ctx = matrix<S>::Zero(d, x.cols());

  // Window membership: list of token columns per window.
  std::vector<std::vector<Index>> windows;
  for (Index b = 0; b < g.batch; ++b) {
    for (Index wy = 0; wy < g.height; wy += window) {
      for (Index wx = 0; wx < g.width; wx += window) {
        std::vector<Index> members;
        for (Index yy = wy; yy < wy + window; ++yy) {
          for (Index xx = wx; xx < wx + window; ++xx) {
            members.push_back(b * g.tokens_per_image() + yy * g.width + xx);
          }
        }
        windows.push_back(std::move(members));
      }
    }
  }
  std::vector<matrix<S>> probs;
  probs.reserve(windows.size());
  for (const auto& m : windows) {
    const Index n = static_cast<Index>(m.size());
    matrix<S> qw(d, n), kw(d, n), vw(d, n);
    for (Index i = 0; i < n; ++i) {
      qw.col(i) = q.col(m[i]);
      kw.col(i) = k.col(m[i]);
      vw.col(i) = v.col(m[i]);
    }
    // scores(j, i): key j attended by query i; softmax over j.
    matrix<S> p = (kw.transpose() * qw) * inv_sqrt;
    for (Index i = 0; i < n; ++i) {
      const S mx = p.col(i).maxCoeff();
      p.col(i) = (p.col(i).array() - mx).exp().matrix();
      p.col(i) /= p.col(i).sum();
    }
    const matrix<S> out = vw * p;
    for (Index i = 0; i < n; ++i) ctx.col(m[i]) = out.col(i);
    probs.push_back(std::move(p));
  }
  matrix<S> y = wo.value() * ctx;
  const int ix = x.id(), iq = wq.id(), ik = wk.id(), iv = wv.id(), io = wo.id();
  auto back = [=, windows = std::move(windows), probs = std::move(probs)](tape<S>& t, int self) {
    const auto& gy = t.grad(self);
    if (t.needs_grad(io)) t.accumulate(io, gy * ctx.transpose());
    const matrix<S> gctx = t.value(io).transpose() * gy;
    matrix<S> gq = matrix<S>::Zero(d, gy.cols());
    matrix<S> gk = matrix<S>::Zero(d, gy.cols());
    matrix<S> gv = matrix<S>::Zero(d, gy.cols());
    for (std::size_t w = 0; w < windows.size(); ++w) {
      const auto& m = windows[w];
      const auto& p = probs[w];
      const Index n = static_cast<Index>(m.size());
      matrix<S> qw(d, n), kw(d, n), vw(d, n), go(d, n);
      for (Index i = 0; i < n; ++i) {
        qw.col(i) = q.col(m[i]);
        kw.col(i) = k.col(m[i]);
        vw.col(i) = v.col(m[i]);
        go.col(i) = gctx.col(m[i]);
      }
      const matrix<S> gvw = go * p.transpose();
      const matrix<S> gp = vw.transpose() * go;
      // softmax backward per query column
      matrix<S> gs(n, n);
      for (Index i = 0; i < n; ++i) {
        const S dot = p.col(i).dot(gp.col(i));
        gs.col(i) = p.col(i).cwiseProduct((gp.col(i).array() - dot).matrix());
      }
      gs *= inv_sqrt;
      const matrix<S> gqw = kw * gs;
      const matrix<S> gkw = qw * gs.transpose();
      for (Index i = 0; i < n; ++i) {
        gq.col(m[i]) = gqw.col(i);
        gk.col(m[i]) = gkw.col(i);
        gv.col(m[i]) = gvw.col(i);
      }
    }
    const auto& xv = t.value(ix);
    if (t.needs_grad(iq)) t.accumulate(iq, gq * xv.transpose());
    if (t.needs_grad(ik)) t.accumulate(ik, gk * xv.transpose());
    if (t.needs_grad(iv)) t.accumulate(iv, gv * xv.transpose());
    if (t.needs_grad(ix)) {
      t.accumulate(ix, t.value(iq).transpose() * gq + t.value(ik).transpose() * gk +
                           t.value(iv).transpose() * gv);
    }
  };
  return x.owner().push(std::move(y), {x, wq, wk, wv, wo}, std::move(back));
}

/// Scales each run of k columns so its non-zero entries carry unit mean
/// complex-symbol power: sum(x^2) over the run equals symbols[g]. Runs with
/// no symbols (or no energy) pass through unchanged.
template <class S>
var<S> normalize_power_groups(const var<S>& x, Index k, const std::vector<Index>& symbols) {
  detail::require(k > 0 && x.cols() % k == 0, "normalize_power_groups: columns not divisible");
  const Index groups = x.cols() / k;
  detail::require(static_cast<Index>(symbols.size()) == groups,
                  "normalize_power_groups: one symbol count per group required");
  matrix<S> y = x.value();
  std::vector<S> factor(groups, S(1));
  std::vector<S> energy(groups, S(0));
  for (Index g = 0; g < groups; ++g) {
    energy[g] = x.value().middleCols(g * k, k).squaredNorm();
    if (symbols[g] > 0 && energy[g] > S(0)) {
      factor[g] = std::sqrt(S(symbols[g]) / energy[g]);
      y.middleCols(g * k, k) *= factor[g];
    }
  }
  const int ix = x.id();
  return x.owner().push(std::move(y), {x}, [ix, k, groups, symbols, factor, energy](tape<S>& t, int self) {
    const auto& gy = t.grad(self);
    const auto& xv = t.value(ix);
    matrix<S> gx = gy;
    for (Index g = 0; g < groups; ++g) {
      if (!(symbols[g] > 0 && energy[g] > S(0))) continue;
      const auto xg = xv.middleCols(g * k, k);
      const auto gg = gy.middleCols(g * k, k);
      const S dot = (xg.array() * gg.array()).sum();
      gx.middleCols(g * k, k) = factor[g] * (gg - xg * (dot / energy[g]));
    }
    t.accumulate(ix, gx);
  });
}

// ---------------------------------------------------------------- probability

/// Standard normal CDF.
template <class S>
S normal_cdf(S x) {
  return S(0.5) * std::erfc(-x / std::numbers::sqrt2_v<S>);
}

template <class S>
S normal_pdf(S x) {
  return std::exp(S(-0.5) * x * x) / std::sqrt(S(2) * std::numbers::pi_v<S>);
}

/// Probability mass of the unit-width bin centred on y under N(mu, sigma^2).
/// Evaluated on the tail side with the smaller CDF values for accuracy.
template <class S>
S gaussian_bin_mass(S y, S mu, S sigma) {
  const S upper = (y + S(0.5) - mu) / sigma;
  const S lower = (y - S(0.5) - mu) / sigma;
  if (lower > S(0)) {
    return normal_cdf(-lower) - normal_cdf(-upper);
  }
  return normal_cdf(upper) - normal_cdf(lower);
}

inline constexpr double likelihood_floor = 1e-9;

/// Elementwise -log2 of the Gaussian bin mass, floored at `likelihood_floor`.
/// Gradients flow to y, mu and sigma; zero where the floor is active.
template <class S>
var<S> gaussian_bits(const var<S>& y, const var<S>& mu, const var<S>& sigma) {
  detail::require_same(y, mu, "gaussian_bits: y/mu shape mismatch");
  detail::require_same(y, sigma, "gaussian_bits: y/sigma shape mismatch");
  const Index r = y.rows(), c = y.cols();
  matrix<S> bits(r, c);
  matrix<S> dy(r, c), dmu(r, c), dsig(r, c);
  const S ln2 = std::numbers::ln2_v<S>;
  for (Index j = 0; j < c; ++j) {
    for (Index i = 0; i < r; ++i) {
      const S yv = y.value()(i, j), m = mu.value()(i, j), s = sigma.value()(i, j);
      const S p = gaussian_bin_mass(yv, m, s);
      if (!(p > S(likelihood_floor))) {
        bits(i, j) = -std::log2(S(likelihood_floor));
        dy(i, j) = dmu(i, j) = dsig(i, j) = S(0);
        continue;
      }
      bits(i, j) = -std::log2(p);
      const S u = (yv + S(0.5) - m) / s;
      const S l = (yv - S(0.5) - m) / s;
      const S pu = normal_pdf(u), pl = normal_pdf(l);
      const S dp_dy = (pu - pl) / s;
      const S dp_dsig = -(pu * u - pl * l) / s;
      const S k = S(-1) / (p * ln2);
      dy(i, j) = k * dp_dy;
      dmu(i, j) = -k * dp_dy;
      dsig(i, j) = k * dp_dsig;
    }
  }
  auto& tp = y.owner();
  const int iy = y.id(), im = mu.id(), is = sigma.id();
  return tp.push(std::move(bits), {y, mu, sigma},
                 [iy, im, is, dy = std::move(dy), dmu = std::move(dmu),
                  dsig = std::move(dsig)](tape<S>& t, int self) {
                   const auto& g = t.grad(self);
                   if (t.needs_grad(iy)) t.accumulate(iy, g.cwiseProduct(dy));
                   if (t.needs_grad(im)) t.accumulate(im, g.cwiseProduct(dmu));
                   if (t.needs_grad(is)) t.accumulate(is, g.cwiseProduct(dsig));
                 });
}

/// Column-wise log-softmax.
template <class S>
var<S> log_softmax_cols(const var<S>& a) {
  matrix<S> y = a.value();
  for (Index j = 0; j < y.cols(); ++j) {
    const S mx = y.col(j).maxCoeff();
    const S lse = mx + std::log((y.col(j).array() - mx).exp().sum());
    y.col(j).array() -= lse;
  }
  const int ia = a.id();
  return a.owner().push(std::move(y), {a}, [ia](tape<S>& t, int self) {
    const auto& g = t.grad(self);
    const matrix<S> p = t.value(self).array().exp().matrix();
    matrix<S> gx = g;
    for (Index j = 0; j < g.cols(); ++j) {
      gx.col(j) -= p.col(j) * g.col(j).sum();
    }
    t.accumulate(ia, gx);
  });
}

/// Picks a(index[j], j) for each column: (R x N) -> (1 x N).
template <class S>
var<S> pick_rows(const var<S>& a, const std::vector<int>& index) {
  detail::require(static_cast<Index>(index.size()) == a.cols(), "pick_rows: index length");
  matrix<S> y(1, a.cols());
  for (Index j = 0; j < a.cols(); ++j) {
    detail::require(index[j] >= 0 && index[j] < a.rows(), "pick_rows: index out of range");
    y(0, j) = a.value()(index[j], j);
  }
  const int ia = a.id();
  const Index r = a.rows();
  return a.owner().push(std::move(y), {a}, [ia, r, index](tape<S>& t, int self) {
    const auto& g = t.grad(self);
    matrix<S> gx = matrix<S>::Zero(r, g.cols());
    for (Index j = 0; j < g.cols(); ++j) gx(index[j], j) = g(0, j);
    t.accumulate(ia, gx);
  });
}

/// Entropy of each column's categorical distribution given log-probs.
template <class S>
var<S> categorical_entropy(const var<S>& logp) {
  const matrix<S> p = logp.value().array().exp().matrix();
  matrix<S> h = -(p.cwiseProduct(logp.value())).colwise().sum();
  const int ia = logp.id();
  return logp.owner().push(std::move(h), {logp}, [ia, p](tape<S>& t, int self) {
    const auto& g = t.grad(self);
    // dH/dlogp_i = -p_i (logp_i + 1)
    matrix<S> gx = -(p.array() * (t.value(ia).array() + S(1))).matrix();
    for (Index j = 0; j < gx.cols(); ++j) gx.col(j) *= g(0, j);
    t.accumulate(ia, gx);
  });
}

/// Clipped surrogate: mean_j min(rho_j A_j, clip(rho_j, 1-eps, 1+eps) A_j),
/// rho_j = exp(new_logp_j - old_logp_j). Returns the 1x1 objective.
template <class S>
var<S> ppo_clip_objective(const var<S>& new_logp, const matrix<S>& old_logp,
                          const matrix<S>& advantages, S eps) {
  const Index n = new_logp.cols();
  detail::require(new_logp.rows() == 1 && old_logp.cols() == n && advantages.cols() == n,
                  "ppo_clip_objective: shape mismatch");
  matrix<S> dobj(1, n);
  S total = 0;
  for (Index j = 0; j < n; ++j) {
    const S rho = std::exp(new_logp.value()(0, j) - old_logp(0, j));
    const S a = advantages(0, j);
    const S unclipped = rho * a;
    const S clipped = std::clamp(rho, S(1) - eps, S(1) + eps) * a;
    if (unclipped <= clipped) {
      total += unclipped;
      dobj(0, j) = rho * a;  // d(rho A)/d logp
    } else {
      total += clipped;
      dobj(0, j) = S(0);
    }
  }
  matrix<S> y(1, 1);
  y(0, 0) = total / S(n);
  const int ia = new_logp.id();
  return new_logp.owner().push(std::move(y), {new_logp},
                               [ia, dobj, n](tape<S>& t, int self) {
                                 t.accumulate(ia, dobj * (t.grad(self)(0, 0) / S(n)));
                               });
}

}  // namespace akb::ad
