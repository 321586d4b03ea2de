#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <unistd.h>

#include "akb/binary_io.hpp"
#include "akb/config.hpp"
#include "akb/harness.hpp"
#include "akb/image_io.hpp"
#include "akb/synth.hpp"

using namespace akb;
using namespace akb::harness;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct temp_dir {
  fs::path path;
  explicit temp_dir(const std::string& tag) {
    path = fs::temp_directory_path() / ("akb_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~temp_dir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

void quiet(const std::string&) {}

void write_images(const std::string& dir, int count, int size) {
  fs::create_directories(dir);
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%03d.png", i);
    io::write_png((fs::path(dir) / name).string(), synth::dataset_image(3, static_cast<std::uint64_t>(i), size));
  }
}

experiment_config tiny_config() {
  auto cfg = parse_config(json{{"dataset", {{"path", "unused"}, {"crop", 16}}},
                               {"codec",
                                {{"patch", 4},
                                 {"token_dim", 8},
                                 {"hidden", 8},
                                 {"entropy_hidden", 4},
                                 {"cond_dim", 4},
                                 {"rate_set", {0, 1, 2, 3, 4}}}},
                               {"kb", {{"kb_dim", 4}}},
                               {"eval", {{"cbr_target", 0.03}}}});
  cfg.eval.schemes = {scheme::akb_jscc_no_ckb, scheme::fixed_rate_jscc};
  return cfg;
}

std::vector<image> tiny_images(int n) {
  std::vector<image> out;
  for (int i = 0; i < n; ++i) out.push_back(square_resize(synth::dataset_image(9, static_cast<std::uint64_t>(i), 32), 16));
  return out;
}

evaluator tiny_evaluator(const experiment_config& cfg, std::shared_ptr<ckb::agent_network<double>> agent = nullptr) {
  auto codec = std::make_shared<codec::codec_model<float>>(cfg.codec, 4);
  return evaluator(cfg, tiny_images(5), codec, nullptr, std::move(agent));
}

// Agent whose policy is the neutral action whatever the state.
std::shared_ptr<ckb::agent_network<double>> neutral_agent() {
  auto net = std::make_shared<ckb::agent_network<double>>(4, ckb::action_mode::global, 3);
  net->actor.w.value.setZero();
  net->actor.b.value.setZero();
  net->actor.b.value(ckb::neutral_action, 0) = 50.0;
  return net;
}

}  // namespace

// ------------------------------------------------------------------ config

TEST_CASE("config: empty document takes the defaults but needs a dataset path") {
  CHECK_THROWS_AS(parse_config(json::object()), config_error);
  const auto cfg = parse_config(json{{"dataset", {{"path", "imgs"}}}});
  CHECK(cfg.codec.patch == 16);
  CHECK(cfg.eval.cbr_target == doctest::Approx(0.03));
  CHECK(cfg.eval.jpeg_cbr_target == doctest::Approx(0.035));
  CHECK(cfg.eval.snr_list.size() == 8);
  CHECK(cfg.eval.schemes.size() == 4);
}

TEST_CASE("config: unknown keys are rejected at every level") {
  const json base{{"dataset", {{"path", "imgs"}}}};
  for (const auto& [where, patch] : std::vector<std::pair<std::string, json>>{
           {"config.lamda", {{"lamda", 1}}},
           {"codec.patchh", {{"codec", {{"patchh", 8}}}}},
           {"agent.ppo.clip", {{"agent", {{"ppo", {{"clip", 0.1}}}}}}},
           {"dataset.synthetic.n", {{"dataset", {{"path", "x"}, {"synthetic", {{"n", 3}}}}}}}}) {
    json j = base;
    j.merge_patch(patch);
    try {
      parse_config(j);
      FAIL("accepted " << where);
    } catch (const config_error& e) {
      CHECK(std::string(e.what()).find(where.substr(where.rfind('.') + 1)) != std::string::npos);
    }
  }
}

TEST_CASE("config: type errors and cross-field checks") {
  CHECK_THROWS_AS(parse_config(json{{"dataset", {{"path", "x"}}}, {"seed", "one"}}), config_error);
  CHECK_THROWS_AS(parse_config(json{{"dataset", {{"path", "x"}}}, {"kb", {{"kb_dim", 32}}}}), config_error);
  CHECK_THROWS_AS(parse_config(json{{"dataset", {{"path", "x"}, {"crop", 40}}}}), config_error);
  CHECK_THROWS_AS(parse_config(json{{"dataset", {{"path", "x"}}}, {"eval", {{"schemes", {"ntscc"}}}}}), config_error);
  CHECK_THROWS_AS(parse_config(json{{"dataset", {{"path", "x"}, {"train_count", 10}}}}), config_error);
}

TEST_CASE("config: paths resolve against the config file's directory") {
  temp_dir t("cfg");
  io::write_text(t / "exp.json", json{{"dataset", {{"path", "imgs"}}}, {"output_dir", "out"}}.dump());
  const auto cfg = load_config(t / "exp.json");
  CHECK(fs::path(cfg.resolve(cfg.dataset.path)) == t.path / "imgs");
  CHECK(fs::path(cfg.codec_path()) == t.path / "out" / "codec.ckpt");
  CHECK(cfg.resolve("/abs/x") == "/abs/x");
  CHECK(fs::exists(cfg.ldpc_path()));
}

TEST_CASE("config: hash is stable under a JSON round trip and sensitive to values") {
  const auto a = parse_config(json{{"dataset", {{"path", "x"}}}});
  const auto b = parse_config(to_json(a));
  CHECK(config_hash(a) == config_hash(b));
  auto c = a;
  c.train.lambda_rd *= 2;
  CHECK(config_hash(a) != config_hash(c));
  CHECK(config_hash(a).size() == 16);
}

TEST_CASE("config: fixed-rate index defaults to the median index") {
  auto cfg = parse_config(json{{"dataset", {{"path", "x"}}}});
  CHECK(cfg.fixed_rate_index() == 4);
  CHECK(cfg.codec.rates[4] == 12);
  cfg.eval.fixed_rate_index = 2;
  CHECK(cfg.fixed_rate_index() == 2);
}

// ----------------------------------------------------------------- dataset

TEST_CASE("split sizes: fractions, explicit counts and bounds") {
  CHECK(split_sizes(100, {0.8, {}, {}}) == std::pair<long, long>{80, 20});
  CHECK(split_sizes(40504, {0.8, 40000L, 504L}) == std::pair<long, long>{40000, 504});
  CHECK(split_sizes(2, {0.99, {}, {}}) == std::pair<long, long>{1, 1});
  CHECK_THROWS_AS(split_sizes(1, {}), invalid_argument);
  CHECK_THROWS_AS(split_sizes(100, {0.8, 90L, 20L}), config_error);
}

TEST_CASE("ingest: 100 images, 0.8 split, seed 7 is deterministic and disjoint") {
  temp_dir t("ingest");
  write_images(t / "imgs", 100, 24);
  const auto a = ingest(t / "imgs", 16, 7, {}, quiet);
  const auto b = ingest(t / "imgs", 16, 7, {}, quiet);
  CHECK(a.of(split_kind::train).size() == 80);
  CHECK(a.of(split_kind::test).size() == 20);
  CHECK(to_json(a) == to_json(b));
  std::set<std::string> ids;
  for (const auto& e : a.entries) ids.insert(e.id);
  CHECK(ids.size() == 100);
  const auto c = ingest(t / "imgs", 16, 8, {}, quiet);
  CHECK(to_json(a) != to_json(c));

  save_manifest(a, t / "m.json");
  CHECK(to_json(load_manifest(t / "m.json")) == to_json(a));
  const auto test = load_split(a, split_kind::test);
  REQUIRE(test.size() == 20);
  CHECK(test[0].height() == 16);
  CHECK(test[0].width() == 16);
}

TEST_CASE("ingest: undecodable files are skipped and recorded; one image is an error") {
  temp_dir t("skip");
  write_images(t / "imgs", 3, 16);
  io::write_text(t / "imgs/broken.png", "not an image");
  io::write_text(t / "imgs/notes.txt", "ignored");
  std::vector<std::string> warnings;
  const auto m = ingest(t / "imgs", 16, 1, {}, [&](const std::string& w) { warnings.push_back(w); });
  const auto skipped = m.of(split_kind::skipped);
  REQUIRE(skipped.size() == 1);
  CHECK(skipped[0]->id == "broken.png");
  CHECK(!skipped[0]->reason.empty());
  CHECK(warnings.size() == 1);
  CHECK(m.entries.size() == 4);

  write_images(t / "one", 1, 16);
  CHECK_THROWS_AS(ingest(t / "one", 16, 1, {}, quiet), invalid_argument);
}

TEST_CASE("square_resize: center crop and box filter") {
  image img(6, 8);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 8; ++x) {
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<std::uint8_t>(10 * y + x + c);
    }
  }
  const auto same = square_resize(img, 6);
  CHECK(same == io::center_crop(img, 6, 6));
  const auto half = square_resize(img, 3);
  // Output (0,0) averages crop rows 0..1, cols 1..2 of the original.
  CHECK(half.at(0, 0, 0) == static_cast<std::uint8_t>(std::lround((1 + 2 + 11 + 12) / 4.0)));
  image flat(30, 30, 77);
  const auto r = square_resize(flat, 16);
  for (auto v : r.data()) CHECK(v == 77);
}

TEST_CASE("synthetic dataset is written once per spec") {
  temp_dir t("synth");
  ensure_synthetic(t / "s", {5, 4, 16}, quiet);
  const auto first = fs::last_write_time(t / "s/synth_00000.png");
  ensure_synthetic(t / "s", {5, 4, 16}, quiet);
  CHECK(fs::last_write_time(t / "s/synth_00000.png") == first);
  ensure_synthetic(t / "s", {5, 2, 16}, quiet);
  CHECK(!fs::exists(t / "s/synth_00003.png"));
  CHECK(io::read_image(t / "s/synth_00001.png") == synth::dataset_image(5, 1, 16));
}

// -------------------------------------------------------------- evaluation

TEST_CASE("eval: one row per (scheme, snr) with the exact header") {
  const auto cfg = tiny_config();
  const auto ev = tiny_evaluator(cfg);
  const auto cells = run_eval(ev, quiet);
  CHECK(cells.size() == 16);
  const auto csv = eval_csv(cells);
  CHECK(csv.substr(0, csv.find('\n')) == "scheme,snr_db,cbr_mean,psnr_mean,psnr_std,n_images,seed");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 17);
  CHECK(cells[0].scheme == "akb_jscc_no_ckb");
  CHECK(cells[0].snr == "0");
  CHECK(cells[8].scheme == "fixed_rate_jscc");
  CHECK(cells[0].n_images == 5);
}

TEST_CASE("eval: reruns and worker counts give identical bytes") {
  const auto cfg = tiny_config();
  auto ev = tiny_evaluator(cfg);
  const auto a = eval_csv(run_eval(ev, quiet));
  const auto b = eval_csv(run_eval(tiny_evaluator(cfg), quiet));
  ev.set_workers(3);
  const auto c = eval_csv(run_eval(ev, quiet));
  CHECK(a == b);
  CHECK(a == c);
}

TEST_CASE("eval: CBR comes from symbol counts") {
  const auto cfg = tiny_config();
  const auto ev = tiny_evaluator(cfg);
  knob k;
  k.fixed_index = 2;
  const auto r = ev.run(scheme::fixed_rate_jscc, k, 10.0);
  for (const auto& x : r) {
    CHECK(x.symbols == 16 * 2);
    CHECK(x.source_symbols == 16 * 16 * 3);
  }
  const auto c = summarize("fixed_rate_jscc", "10", r, 1);
  CHECK(c.cbr_mean == static_cast<double>(5 * 32) / (5 * 768));
  CHECK(ev.mean_cbr(scheme::fixed_rate_jscc, k, 10.0) == c.cbr_mean);

  k.eta = 0.7;
  long sym = 0;
  for (const auto& x : ev.run(scheme::akb_jscc_no_ckb, k, 10.0)) sym += x.symbols;
  CHECK(ev.mean_cbr(scheme::akb_jscc_no_ckb, k, 10.0) == static_cast<double>(sym) / (5 * 768));
}

TEST_CASE("summarize: mean and population standard deviation") {
  const std::vector<evaluator::per_image> r{{20, 10, 100, 0}, {24, 30, 100, 0}};
  const auto c = summarize("x", "2", r, 9);
  CHECK(c.psnr_mean == doctest::Approx(22));
  CHECK(c.psnr_std == doctest::Approx(2));
  CHECK(c.cbr_mean == doctest::Approx(0.2));
  CHECK(eval_row(c) == "x,2,0.200000,22.0000,2.0000,2,9");
}

TEST_CASE("ablation: a constant-neutral agent reproduces the no-ckb rows") {
  auto cfg = tiny_config();
  const auto ev = tiny_evaluator(cfg, neutral_agent());
  const auto rows = run_ablate(ev, quiet);
  CHECK(rows.size() == 3 * 9);
  for (std::size_t i = 0; i < rows.size(); i += 3) {
    CHECK(rows[i].c.scheme == "akb_jscc");
    CHECK(rows[i + 1].c.scheme == "akb_jscc_no_ckb");
    CHECK(std::abs(rows[i].c.psnr_mean - rows[i + 1].c.psnr_mean) < 1e-9);
    CHECK(rows[i].c.cbr_mean == rows[i + 1].c.cbr_mean);
    CHECK(rows[i].delta_vs_no_ckb == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(rows[i + 2].delta_vs_no_ckb ==
          doctest::Approx(rows[i + 2].c.psnr_mean - rows[i + 1].c.psnr_mean));
  }
  CHECK(rows.back().c.snr == "random");
  const auto csv = ablate_csv(rows);
  CHECK(csv.substr(0, csv.find('\n')) ==
        "scheme,snr_db,cbr_mean,psnr_mean,psnr_std,n_images,seed,delta_psnr_vs_no_ckb");
}

TEST_CASE("ablation: the randomized SNR draw is per image and reproducible") {
  const auto cfg = tiny_config();
  const auto ev = tiny_evaluator(cfg);
  knob k;
  const auto a = ev.run(scheme::akb_jscc_no_ckb, k, 0.0, true);
  const auto b = ev.run(scheme::akb_jscc_no_ckb, k, 0.0, true);
  std::set<double> seen;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].snr_db == b[i].snr_db);
    CHECK(a[i].psnr_db == b[i].psnr_db);
    seen.insert(a[i].snr_db);
  }
  CHECK(seen.size() > 1);
}

TEST_CASE("akb_jscc without an agent is refused") {
  const auto cfg = tiny_config();
  const auto ev = tiny_evaluator(cfg);
  CHECK_THROWS_AS(ev.run(scheme::akb_jscc, {}, 10.0), config_error);
}

TEST_CASE("missing checkpoints name the scheme") {
  auto cfg = tiny_config();
  cfg.codec_checkpoint = "/nonexistent/codec.ckpt";
  try {
    evaluator ev(cfg, tiny_images(2), {scheme::fixed_rate_jscc}, quiet);
    FAIL("no error");
  } catch (const config_error& e) {
    CHECK(std::string(e.what()).find("fixed_rate_jscc") != std::string::npos);
  }
}

TEST_CASE("sweep: learned rows land within tolerance, JPEG target 0 is unreachable") {
  auto cfg = tiny_config();
  cfg.sweep.cbr_targets = {0.05, 0.1};
  const auto ev = tiny_evaluator(cfg);
  cfg.eval.schemes = {scheme::akb_jscc_no_ckb};
  const auto rows = run_sweep(ev, quiet);
  for (const auto& r : rows) {
    if (r.c.scheme != "akb_jscc_no_ckb") continue;
    CHECK(r.reachable);
    CHECK(r.probes <= 12);
    CHECK(std::abs(r.c.cbr_mean - r.cbr_target) <= 0.05 * r.cbr_target);
  }

  auto jcfg = parse_config(json{{"dataset", {{"path", "x"}}}});
  jcfg.eval.schemes = {scheme::jpeg_ldpc};
  jcfg.sweep.cbr_targets = {0.0};
  std::vector<image> imgs;
  for (int i = 0; i < 3; ++i) imgs.push_back(synth::dataset_image(2, static_cast<std::uint64_t>(i), 64));
  const evaluator jev(jcfg, imgs, nullptr, nullptr, nullptr);
  const auto jr = run_sweep(jev, quiet);
  REQUIRE(jr.size() == 1);
  CHECK(!jr[0].reachable);
  CHECK(sweep_csv(jr).find(",unreachable\n") != std::string::npos);
}

// --------------------------------------------------------------- plot data

TEST_CASE("plot data: one sorted x,y series per scheme and axis") {
  temp_dir t("plot");
  io::write_text(t / "eval.csv", std::string(eval_header) +
                                     "\na,10,0.03,25,1,5,1\na,0,0.03,20,1,5,1\nb,5,0.03,22,1,5,1\na,random,0.03,21,1,5,1\n");
  io::write_text(t / "sweep.csv", std::string(sweep_header) +
                                      "\na,10,0.02,0.021,24,1,5,1,3,ok\na,10,0.01,0.011,21,1,5,1,3,ok\n"
                                      "a,10,0.0,0.005,19,1,5,1,12,unreachable\n");
  const auto paths = emit_plotdata({t / "eval.csv", t / "sweep.csv"}, t / "plots");
  CHECK(paths.size() == 3);
  CHECK(io::read_text(t / "plots/a_snr.csv") == "x,y\n0,20\n10,25\n");
  CHECK(io::read_text(t / "plots/b_snr.csv") == "x,y\n5,22\n");
  CHECK(io::read_text(t / "plots/a_cbr.csv") == "x,y\n0.011,21\n0.021,24\n");
}

TEST_CASE("plot data: eight SNR rows give eight points") {
  const auto cfg = tiny_config();
  temp_dir t("plot8");
  io::write_text(t / "eval.csv", eval_csv(run_eval(tiny_evaluator(cfg), quiet)));
  const auto s = plot_series({t / "eval.csv"});
  REQUIRE(s.size() == 2);
  CHECK(s[0].points.size() == 8);
  CHECK(s[1].points.size() == 8);
}

TEST_CASE("plot data: malformed input reports the line or the column") {
  temp_dir t("plotbad");
  io::write_text(t / "short.csv", std::string(eval_header) + "\na,0,0.03,20,1,5,1\na,2,0.03\n");
  io::write_text(t / "nan.csv", std::string(eval_header) + "\na,zero,0.03,20,1,5,1\n");
  io::write_text(t / "nocol.csv", "scheme,snr_db,cbr_mean\na,0,0.03\n");
  auto message = [](const std::string& p) {
    try {
      plot_series({p});
    } catch (const error& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message(t / "short.csv").find(":3:") != std::string::npos);
  CHECK(message(t / "nan.csv").find(":2:") != std::string::npos);
  CHECK(message(t / "nocol.csv").find("psnr_mean") != std::string::npos);
}

TEST_CASE("run metadata records the JPEG encoder and config hash") {
  const auto cfg = tiny_config();
  const auto m = run_meta(cfg, "eval");
  CHECK(m.at("jpeg_encoder").get<std::string>().find("libjpeg") != std::string::npos);
  CHECK(m.at("config_hash") == config_hash(cfg));
  CHECK(m.contains("ldpc_fixture_hash"));
}
