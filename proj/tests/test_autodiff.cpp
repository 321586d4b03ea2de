#include <doctest.h>

#include "akb/autodiff.hpp"
#include "akb/nn.hpp"
#include "grad_check.hpp"

using namespace akb;
using ad::matrix;
using ad::parameter;
using ad::tape;
using ad::var;
using test::check_gradients;
using test::random_matrix;

namespace {

void expect_close(const test::grad_check_result& r, double tol = 1e-6) {
  INFO("max entry rel error " << r.max_rel_error << ", norm rel error " << r.norm_rel_error);
  CHECK(r.checked > 0);
  CHECK(r.norm_rel_error < tol);
}

}  // namespace

TEST_CASE("affine, silu, softplus, tanh chain") {
  rng_stream rng(1, {0});
  parameter<double> w("w", random_matrix(5, 4, rng)), b("b", random_matrix(5, 1, rng));
  parameter<double> x("x", random_matrix(4, 6, rng));
  auto f = [&](tape<double>& t) {
    auto h = ad::affine(t.leaf(w), t.leaf(x), t.leaf(b));
    auto y = ad::add(ad::silu(h), ad::mul(ad::softplus(h), ad::tanh(h)));
    return ad::mean_all(ad::square(y));
  };
  expect_close(check_gradients(f, {&w, &b, &x}, 1e-6));
}

TEST_CASE("matmul, sub, scale, exp, sum reductions") {
  rng_stream rng(2, {0});
  parameter<double> a("a", random_matrix(3, 4, rng, 0.5)), c("c", random_matrix(4, 2, rng, 0.5));
  parameter<double> d("d", random_matrix(3, 2, rng));
  auto f = [&](tape<double>& t) {
    auto m = ad::matmul(t.leaf(a), t.leaf(c));
    auto e = ad::exp(ad::scale(ad::sub(m, t.leaf(d)), 0.7));
    return ad::sum_all(ad::mul(ad::sum_rows(e), ad::sum_rows(ad::add_scalar(m, 0.3))));
  };
  expect_close(check_gradients(f, {&a, &c, &d}, 1e-6));
}

TEST_CASE("concat, slice, repeat, pool") {
  rng_stream rng(3, {0});
  parameter<double> p("p", random_matrix(3, 8, rng)), q("q", random_matrix(2, 8, rng));
  parameter<double> g("g", random_matrix(5, 2, rng));
  auto f = [&](tape<double>& t) {
    auto cat = ad::concat_rows<double>({t.leaf(p), t.leaf(q)});
    auto mod = ad::mul(cat, ad::repeat_cols(t.leaf(g), 4));
    auto pooled = ad::mean_pool_cols(ad::slice_rows(mod, 1, 3), 4);
    return ad::sum_all(ad::square(pooled));
  };
  expect_close(check_gradients(f, {&p, &q, &g}, 1e-6));
}

TEST_CASE("concat tracks gradients of middle inputs") {
  tape<double> t;
  parameter<double> mid("m", matrix<double>::Ones(1, 2));
  auto c = ad::concat_rows<double>({t.constant(matrix<double>::Zero(1, 2)), t.leaf(mid),
                                    t.constant(matrix<double>::Zero(1, 2))});
  t.backward(ad::sum_all(c));
  CHECK(mid.grad.sum() == doctest::Approx(2.0));
}

TEST_CASE("grid conv 3x3") {
  rng_stream rng(4, {0});
  const ad::grid_layout g{2, 3, 4};
  parameter<double> x("x", random_matrix(3, g.tokens(), rng));
  parameter<double> w("w", random_matrix(2, 27, rng, 0.3)), b("b", random_matrix(2, 1, rng));
  auto f = [&](tape<double>& t) {
    return ad::mean_all(ad::square(ad::grid_conv3x3(t.leaf(x), t.leaf(w), t.leaf(b), g)));
  };
  expect_close(check_gradients(f, {&x, &w, &b}, 1e-6));
}

TEST_CASE("grid conv matches a direct convolution") {
  rng_stream rng(5, {0});
  const ad::grid_layout g{1, 3, 3};
  const auto x = random_matrix(2, 9, rng);
  const auto w = random_matrix(1, 18, rng);
  tape<double> t;
  auto y = ad::grid_conv3x3(t.constant(x), t.constant(w), t.constant(matrix<double>::Zero(1, 1)), g);
  // centre token sees every neighbour
  double centre = 0;
  for (int k = 0; k < 9; ++k) {
    for (int c = 0; c < 2; ++c) centre += w(0, k * 2 + c) * x(c, k);
  }
  CHECK(y.value()(0, 4) == doctest::Approx(centre).epsilon(1e-12));
  // corner token (0,0): taps k = 4,5,7,8 map to tokens 0,1,3,4
  double corner = 0;
  const int taps[4][2] = {{4, 0}, {5, 1}, {7, 3}, {8, 4}};
  for (auto [k, tok] : taps) {
    for (int c = 0; c < 2; ++c) corner += w(0, k * 2 + c) * x(c, tok);
  }
  CHECK(y.value()(0, 0) == doctest::Approx(corner).epsilon(1e-12));
}

TEST_CASE("window attention") {
  rng_stream rng(6, {0});
  const ad::grid_layout g{2, 4, 4};
  parameter<double> x("x", random_matrix(6, g.tokens(), rng));
  parameter<double> q("q", random_matrix(4, 6, rng, 0.4)), k("k", random_matrix(4, 6, rng, 0.4));
  parameter<double> v("v", random_matrix(4, 6, rng, 0.4)), o("o", random_matrix(6, 4, rng, 0.4));
  for (Eigen::Index window : {2, 4}) {
    auto f = [&](tape<double>& t) {
      auto y = ad::window_attention(t.leaf(x), t.leaf(q), t.leaf(k), t.leaf(v), t.leaf(o), g, window);
      return ad::mean_all(ad::square(y));
    };
    expect_close(check_gradients(f, {&x, &q, &k, &v, &o}, 1e-6));
  }
}

TEST_CASE("window attention respects window boundaries") {
  rng_stream rng(7, {0});
  const ad::grid_layout g{1, 4, 4};
  auto x = random_matrix(3, 16, rng);
  const auto q = random_matrix(2, 3, rng), k = random_matrix(2, 3, rng);
  const auto v = random_matrix(2, 3, rng), o = random_matrix(3, 2, rng);
  auto run = [&](const matrix<double>& in) {
    tape<double> t;
    return ad::window_attention(t.constant(in), t.constant(q), t.constant(k), t.constant(v),
                                t.constant(o), g, 2)
        .value();
  };
  const auto base = run(x);
  x.col(15).setRandom();  // token (3,3) lives in the bottom-right window
  const auto moved = run(x);
  CHECK((base.col(0) - moved.col(0)).norm() == 0.0);
  CHECK((base.col(10) - moved.col(10)).norm() > 0.0);
}

TEST_CASE("power normalisation per group") {
  rng_stream rng(8, {0});
  parameter<double> x("x", random_matrix(4, 6, rng));
  const std::vector<Eigen::Index> symbols{5, 3};
  {
    tape<double> t;
    auto y = ad::normalize_power_groups(t.leaf(x), 3, symbols);
    CHECK(y.value().leftCols(3).squaredNorm() == doctest::Approx(5.0));
    CHECK(y.value().rightCols(3).squaredNorm() == doctest::Approx(3.0));
  }
  parameter<double> wgt("w", random_matrix(4, 6, rng));
  auto f = [&](tape<double>& t) {
    return ad::sum_all(ad::mul(ad::normalize_power_groups(t.leaf(x), 3, symbols), t.leaf(wgt)));
  };
  expect_close(check_gradients(f, {&x, &wgt}, 1e-6));
}

TEST_CASE("gaussian bits gradient") {
  rng_stream rng(9, {0});
  parameter<double> y("y", random_matrix(3, 5, rng, 1.5));
  parameter<double> mu("mu", random_matrix(3, 5, rng, 0.5));
  ad::matrix<double> s0(3, 5);
  for (Eigen::Index i = 0; i < s0.size(); ++i) s0.data()[i] = 0.3 + rng.uniform();
  parameter<double> sigma("sigma", s0);
  auto f = [&](tape<double>& t) {
    return ad::sum_all(ad::gaussian_bits(t.leaf(y), t.leaf(mu), t.leaf(sigma)));
  };
  expect_close(check_gradients(f, {&y, &mu, &sigma}, 1e-6), 1e-6);
}

TEST_CASE("log-softmax, pick, entropy, clip objective") {
  rng_stream rng(10, {0});
  parameter<double> logits("l", random_matrix(5, 8, rng));
  const std::vector<int> actions{0, 1, 2, 3, 4, 0, 1, 2};
  ad::matrix<double> old = ad::matrix<double>::Zero(1, 8), adv(1, 8);
  {
    tape<double> t;
    auto lp = ad::pick_rows(ad::log_softmax_cols(t.constant(logits.value)), actions);
    for (int j = 0; j < 8; ++j) {
      // ratios spread across and beyond the clip band, away from its edges
      old(0, j) = lp.value()(0, j) - 0.45 + 0.12 * j;
      adv(0, j) = (j % 2 == 0 ? 1.0 : -1.0) * (0.5 + 0.1 * j);
    }
  }
  auto f = [&](tape<double>& t) {
    auto lp = ad::log_softmax_cols(t.leaf(logits));
    auto obj = ad::ppo_clip_objective(ad::pick_rows(lp, actions), old, adv, 0.2);
    return ad::add(obj, ad::scale(ad::mean_all(ad::categorical_entropy(lp)), 0.1));
  };
  expect_close(check_gradients(f, {&logits}, 1e-6));
}

TEST_CASE("clamp_min and round_ste semantics") {
  tape<double> t;
  parameter<double> p("p", (ad::matrix<double>(1, 3) << -1.0, 0.2, 1.7).finished());
  auto x = t.leaf(p);
  auto y = ad::add(ad::clamp_min(x, 0.0), ad::round_ste(x));
  CHECK(y.value()(0, 0) == -1.0);
  CHECK(y.value()(0, 1) == doctest::Approx(0.2));
  CHECK(y.value()(0, 2) == doctest::Approx(3.7));
  t.backward(ad::sum_all(y));
  CHECK(p.grad(0, 0) == 1.0);  // clamped: only the straight-through path
  CHECK(p.grad(0, 1) == 2.0);
  CHECK(p.grad(0, 2) == 2.0);
}

TEST_CASE("backward requires a scalar root") {
  tape<double> t;
  auto x = t.constant(ad::matrix<double>::Ones(2, 2));
  CHECK_THROWS_AS(t.backward(x), shape_error);
}

TEST_CASE("film starts as identity") {
  rng_stream rng(11, {0});
  nn::film<double> film("f", 7, 3, rng);
  tape<double> t;
  const auto x = random_matrix(3, 8, rng);
  auto y = film(t, t.constant(x), t.constant(random_matrix(7, 2, rng)), 4);
  CHECK((y.value() - x).norm() == 0.0);
}

TEST_CASE("adam decreases a quadratic") {
  parameter<double> p("p", ad::matrix<double>::Constant(3, 1, 5.0));
  nn::adam_config<double> cfg;
  cfg.learning_rate = 0.1;
  nn::adam<double> opt({&p}, cfg);
  double first = 0, last = 0;
  for (int i = 0; i < 200; ++i) {
    tape<double> t;
    auto loss = ad::sum_all(ad::square(t.leaf(p)));
    if (i == 0) first = loss.value()(0, 0);
    last = loss.value()(0, 0);
    opt.zero_grad();
    t.backward(loss);
    opt.step();
  }
  CHECK(last < 1e-2 * first);
}
