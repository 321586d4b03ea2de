#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "akb/binary_io.hpp"
#include "akb/codec.hpp"
#include "akb/metrics.hpp"
#include "grad_check.hpp"

using namespace akb;
using namespace akb::codec;

namespace {

codec_config small_config() {
  codec_config c;
  c.patch = 4;
  c.token_dim = 8;
  c.hidden = 12;
  c.entropy_hidden = 4;
  c.cond_dim = 5;
  c.rates = entropy::rate_set(std::vector<int>{0, 1, 2, 4});
  return c;
}

image pattern_image(int h, int w, std::uint64_t seed) {
  rng_stream rng(seed, {1});
  image img(h, w);
  const double fx = 0.2 + rng.uniform(), fy = 0.2 + rng.uniform();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = 128 + 90 * std::sin(fx * x + c) * std::cos(fy * y) + 10 * rng.normal();
        img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  }
  return img;
}

Eigen::VectorXd random_cond(int dim, std::uint64_t seed) {
  rng_stream rng(seed, {2});
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = rng.normal();
  return v / v.norm();
}

}  // namespace

TEST_CASE("shape contracts") {
  codec_model<float> m(codec_config{}, 1);
  const auto f256 = analysis(image(256, 256, 100), m);
  CHECK(f256.grid_h == 16);
  CHECK(f256.grid_w == 16);
  CHECK(f256.depth() == 64);
  const auto f64 = analysis(image(64, 64, 100), m);
  CHECK(f64.grid_h == 4);
  CHECK(f64.grid_w == 4);
  CHECK_THROWS_AS(analysis(image(250, 250, 0), m), shape_error);
  const auto e = compute_entropy_map(f64, m);
  CHECK(e.rows() == 4);
  CHECK(e.cols() == 4);
}

TEST_CASE("config validation") {
  codec_config c;
  c.token_dim = 32;  // 2 * 32 reals needed
  CHECK_THROWS_AS(c.validate(), config_error);
  c = codec_config{};
  c.eta = 0;
  CHECK_THROWS_AS(c.validate(), config_error);
  CHECK_THROWS_AS(backbone_from_string("mlp"), config_error);
  nlohmann::json j = small_config();
  const auto back = j.get<codec_config>();
  CHECK(back.rates == small_config().rates);
  CHECK(back.token_dim == 8);
}

TEST_CASE("payload size follows the rate map") {
  auto cfg = small_config();
  codec_model<double> m(cfg, 2);
  rng_stream rng(9, {0});
  const feature_map f(4, 6, test::random_matrix(cfg.token_dim, 24, rng, 3.0));
  const auto cond = random_cond(cfg.cond_dim, 1);
  for (int trial = 0; trial < 20; ++trial) {
    entropy::rate_index_map rm(f.grid_h, f.grid_w);
    for (Eigen::Index i = 0; i < rm.size(); ++i) rm.data()[i] = static_cast<int>(rng.below(4));
    const auto frame = jscc_encode(f, rm, cond, m, side_info{{1, 0}, 1}, true);
    CHECK(static_cast<long>(frame.payload.size()) == entropy::payload_symbols(rm, cfg.rates));
    CHECK(frame.kb_side_symbols == 1);
    CHECK(frame.rate_map_side_symbols == rate_map_side_symbols(cfg.rates, rm.size()));
    if (!frame.payload.empty()) {
      CHECK(channel::mean_power(frame.payload) == doctest::Approx(1.0));
    }
  }
}

TEST_CASE("all-zero rate map sends nothing and decodes to the prior") {
  auto cfg = small_config();
  codec_model<double> m(cfg, 2);
  const auto f = analysis(pattern_image(16, 16, 4), m);
  const auto cond = random_cond(cfg.cond_dim, 1);
  const entropy::rate_index_map zero = entropy::rate_index_map::Zero(4, 4);
  const auto frame = jscc_encode(f, zero, cond, m, side_info{}, false);
  CHECK(frame.payload.empty());
  CHECK(frame.total_symbols() == 0);
  const auto out = jscc_decode(frame, channel::channel_spec{}, cond, m);
  CHECK(out.grid_h == 4);
  CHECK(out.finite());
}

TEST_CASE("uniform rate 8 on a 16x16 grid carries 2048 symbols") {
  codec_config cfg;
  cfg.hidden = 16;
  codec_model<float> m(cfg, 3);
  const auto f = analysis(pattern_image(256, 256, 5), m);
  const auto rm = entropy::rate_index_map::Constant(16, 16, 3);  // rate 8
  const auto frame = jscc_encode(f, rm, Eigen::VectorXd::Zero(cfg.cond_dim), m, side_info{}, true);
  CHECK(frame.payload.size() == 2048);
  CHECK(frame.rate_map_side_symbols == 384);  // 3 bits x 256 tokens / 2
}

TEST_CASE("rate map side charge") {
  CHECK(rate_map_side_symbols(entropy::rate_set{}, 16) == 24);
  CHECK(rate_map_side_symbols(entropy::rate_set(std::vector<int>{0, 1, 2}), 3) == 3);
  CHECK(rate_map_side_symbols(entropy::rate_set(std::vector<int>{4}), 100) == 0);
}

TEST_CASE("conditioning has no effect at initialisation") {
  auto cfg = small_config();
  codec_model<double> m(cfg, 4);
  rng_stream rng(10, {0});
  const feature_map f(4, 4, test::random_matrix(cfg.token_dim, 16, rng, 3.0));
  const auto rm = entropy::rate_index_map::Constant(4, 4, 2);
  const auto a = jscc_encode(f, rm, random_cond(cfg.cond_dim, 1), m, side_info{}, true);
  const auto b = jscc_encode(f, rm, random_cond(cfg.cond_dim, 2), m, side_info{}, true);
  CHECK(a.payload == b.payload);
  const auto da = jscc_decode(a, channel::channel_spec{}, random_cond(cfg.cond_dim, 1), m);
  const auto db = jscc_decode(a, channel::channel_spec{}, random_cond(cfg.cond_dim, 3), m);
  CHECK(da.values == db.values);
}

TEST_CASE("decode rejects inconsistent frames") {
  auto cfg = small_config();
  codec_model<double> m(cfg, 4);
  const auto f = analysis(pattern_image(16, 16, 6), m);
  const auto cond = random_cond(cfg.cond_dim, 1);
  auto frame = jscc_encode(f, entropy::rate_index_map::Constant(4, 4, 3), cond, m, side_info{}, true);
  frame.payload.pop_back();
  CHECK_THROWS_AS(jscc_decode(frame, channel::channel_spec{}, cond, m), shape_error);
  CHECK_THROWS_AS(jscc_encode(f, entropy::rate_index_map::Constant(3, 4, 1), cond, m, side_info{}, true),
                  shape_error);
  CHECK_THROWS_AS(jscc_encode(f, entropy::rate_index_map::Constant(4, 4, 9), cond, m, side_info{}, true),
                  std::exception);
  CHECK_THROWS_AS(jscc_encode(f, entropy::rate_index_map::Constant(4, 4, 1), Eigen::VectorXd::Zero(3), m,
                              side_info{}, true),
                  shape_error);
}

TEST_CASE("synthesis clamps to the pixel range and is deterministic") {
  auto cfg = small_config();
  codec_model<double> m(cfg, 5);
  Eigen::MatrixXd big = Eigen::MatrixXd::Constant(8, 16, 1e4);
  big.rightCols(8).setConstant(-1e4);
  const feature_map f(4, 4, big);
  const auto a = synthesis(f, m);
  const auto b = synthesis(f, m);
  CHECK(a == b);
  CHECK(a.height() == 16);
  bool saw_extreme = false;
  for (auto v : a.data()) saw_extreme |= (v == 0 || v == 255);
  CHECK(saw_extreme);
}

TEST_CASE("patch round trip") {
  const auto img = pattern_image(16, 20, 7);
  const image batch[1] = {img};
  const auto p = images_to_patches<double>(batch, 4);
  CHECK(p.rows() == 48);
  CHECK(p.cols() == 20);
  CHECK(patches_to_image<double>(p, 0, 4, 5, 4) == img);
}

TEST_CASE("rate mask and side rows") {
  const entropy::rate_set rates(std::vector<int>{0, 1, 2, 4});
  entropy::rate_index_map a(1, 2), b(1, 1);
  a << 0, 3;
  b << 1;
  const auto mask = rate_mask<double>({a, b}, rates, 8);
  CHECK(mask.cols() == 3);
  CHECK(mask.col(0).sum() == 0.0);
  CHECK(mask.col(1).sum() == 8.0);
  CHECK(mask.col(2).sum() == 2.0);
  CHECK(mask(1, 2) == 1.0);
  CHECK(mask(2, 2) == 0.0);
  const auto side = decoder_side_rows<double>({a, b}, rates, 13.0, 10.0);
  CHECK(side(0, 1) == doctest::Approx(1.0));
  CHECK(side(0, 2) == doctest::Approx(0.25));
  CHECK(side(1, 0) == doctest::Approx(0.3));
}

TEST_CASE("end-to-end gradient check") {
  auto cfg = small_config();
  cfg.hidden = 6;
  cfg.cond_dim = 3;
  codec_model<double> m(cfg, 6);
  rng_stream rng(12, {0});
  // Give the zero-initialised heads non-trivial values.
  for (auto* p : {&m.entropy.head.w, &m.enc_film.proj.w, &m.dec_film.proj.w}) {
    p->value = test::random_matrix(p->value.rows(), p->value.cols(), rng, 0.2);
  }
  const image imgs[2] = {pattern_image(16, 16, 8), pattern_image(16, 16, 9)};
  pass_input<double> in;
  in.layout = layout_for(imgs[0], cfg.patch, 2);
  in.patches = images_to_patches<double>(imgs, cfg.patch);
  in.cond = test::random_matrix(cfg.cond_dim, 2, rng);
  entropy::rate_index_map r0(4, 4), r1(4, 4);
  for (Eigen::Index i = 0; i < 16; ++i) {
    r0.data()[i] = static_cast<int>(i % 4);
    r1.data()[i] = static_cast<int>((i / 3) % 4);
  }
  in.rate_maps = {r0, r1};
  in.lambda_rd = 0.01;
  in.quantize = false;
  auto loss = [&](ad::tape<double>& t) { return forward_pass(t, m, in).total; };
  const auto r = test::check_gradients(loss, m.params(), 1e-5, 12, 1e-7);
  INFO("max rel " << r.max_rel_error << " norm rel " << r.norm_rel_error);
  CHECK(r.checked > 100);
  CHECK(r.norm_rel_error < 1e-3);
}

TEST_CASE("zero lambda makes the loss pure distortion") {
  auto cfg = small_config();
  codec_model<double> m(cfg, 7);
  const image imgs[1] = {pattern_image(16, 16, 10)};
  pass_input<double> in;
  in.layout = layout_for(imgs[0], cfg.patch, 1);
  in.patches = images_to_patches<double>(imgs, cfg.patch);
  in.cond = Eigen::MatrixXd::Zero(cfg.cond_dim, 1);
  in.rate_maps = {entropy::rate_index_map::Constant(4, 4, 2)};
  in.lambda_rd = 0.0;
  ad::tape<double> t;
  const auto out = forward_pass(t, m, in);
  CHECK(out.total.value()(0, 0) == out.distortion.value()(0, 0));
  CHECK(out.rate.value()(0, 0) > 0.0);
  in.lambda_rd = 0.5;
  ad::tape<double> t2;
  const auto out2 = forward_pass(t2, m, in);
  CHECK(out2.total.value()(0, 0) ==
        doctest::Approx(out.distortion.value()(0, 0) + 0.5 * out.rate.value()(0, 0)));
}

TEST_CASE("rate_map_for_mean hits reachable targets") {
  const entropy::rate_set rates;
  Eigen::MatrixXd e(2, 2);
  e << 4, 8, 16, 32;
  const auto mp = rate_map_for_mean(e, rates, 8.5);
  const double mean = static_cast<double>(entropy::payload_symbols(mp, rates)) / 4.0;
  CHECK(std::abs(mean - 8.5) <= 2.0);
  const auto low = rate_map_for_mean(e, rates, 0.0);
  CHECK(entropy::payload_symbols(low, rates) == 0);
}

TEST_CASE("training is deterministic and learns to reconstruct") {
  auto cfg = small_config();
  cfg.hidden = 24;
  std::vector<image> data;
  for (int i = 0; i < 16; ++i) data.push_back(pattern_image(16, 16, 100 + i));
  train_config tc;
  tc.total_steps = 500;
  tc.batch_size = 8;
  tc.learning_rate = 3e-3;
  tc.final_learning_rate = 1e-3;
  tc.lambda_rd = 1e-3;
  tc.seed = 11;

  const Eigen::MatrixXf cond = Eigen::MatrixXf::Zero(cfg.cond_dim, tc.batch_size);
  auto run = [&](long steps, std::vector<double>* trace) {
    codec_model<float> m(cfg, 13);
    codec_trainer<float> tr(m, tc);
    for (long s = 0; s < steps; ++s) {
      const std::size_t first = static_cast<std::size_t>(s % 2) * 8;
      const auto st = tr.train_step(std::span<const image>(data).subspan(first, 8), cond);
      if (trace) trace->push_back(st.distortion);
    }
    return m;
  };
  std::vector<double> trace;
  run(tc.total_steps, &trace);
  const auto window_mean = [&](std::size_t from) {
    double s = 0;
    for (std::size_t i = from; i < from + 20; ++i) s += trace[i];
    return s / 20;
  };
  const double initial = window_mean(0), final = window_mean(trace.size() - 20);
  INFO("initial " << initial << " final " << final);
  CHECK(final < 0.5 * initial);

  auto a = run(3, nullptr);
  auto b = run(3, nullptr);
  const auto pa = a.params(), pb = b.params();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
}

TEST_CASE("checkpoint round trip") {
  auto cfg = small_config();
  cfg.backbone = backbone_kind::window_attention;
  codec_model<float> m(cfg, 21);
  const auto dir = std::filesystem::temp_directory_path() / "akb_codec_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "ckpt.bin").string();
  checkpoint_meta meta;
  meta.root_seed = 21;
  meta.steps = 17;
  meta.lambda_rd = 1e-4;
  save_checkpoint(path, m, meta);
  checkpoint_meta back;
  auto loaded = load_checkpoint(path, &back);
  CHECK(back.steps == 17);
  CHECK(back.root_seed == 21);
  CHECK(loaded.cfg.backbone == backbone_kind::window_attention);
  const auto img = pattern_image(16, 16, 30);
  CHECK(analysis(img, loaded).values == analysis(img, m).values);
  CHECK(checkpoint_hash(path).size() == 16);

  auto bytes = io::read_file(path);
  bytes.resize(bytes.size() - 3);
  io::write_file(path, bytes);
  CHECK_THROWS_AS(load_checkpoint(path), corrupt_file_error);
  std::filesystem::remove_all(dir);
}
