#include "akb/harness.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "akb/binary_io.hpp"
#include "akb/error.hpp"
#include "akb/image_io.hpp"
#include "akb/metrics.hpp"
#include "akb/rng.hpp"
#include "akb/synth.hpp"

namespace akb::harness {

using nlohmann::json;
namespace fs = std::filesystem;

void log_to_stderr(const std::string& msg) { std::cerr << msg << '\n'; }

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string lower(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

}  // namespace

// ---------------------------------------------------------------- dataset

std::string to_string(split_kind s) {
  switch (s) {
    case split_kind::train: return "train";
    case split_kind::test: return "test";
    case split_kind::unused: return "unused";
    case split_kind::skipped: return "skipped";
  }
  return "?";
}

split_kind split_from_string(const std::string& s) {
  for (auto k : {split_kind::train, split_kind::test, split_kind::unused, split_kind::skipped}) {
    if (to_string(k) == s) return k;
  }
  throw corrupt_file_error("unknown split '" + s + "' in manifest", 0);
}

std::vector<const manifest_entry*> split_manifest::of(split_kind s) const {
  std::vector<const manifest_entry*> out;
  for (const auto& e : entries) {
    if (e.split == s) out.push_back(&e);
  }
  return out;
}

image square_resize(const image& img, int size) {
  if (size <= 0) throw invalid_argument("square_resize: size must be positive");
  const int s = std::min(img.height(), img.width());
  if (s <= 0) throw shape_error("square_resize: empty image");
  const image sq = io::center_crop(img, s, s);
  if (s == size) return sq;
  image out(size, size);
  if (s < size) {
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        for (int c = 0; c < image::channels; ++c) out.at(y, x, c) = sq.at(y * s / size, x * s / size, c);
      }
    }
    return out;
  }
  // Box filter: output pixel i covers source [i*s/size, (i+1)*s/size).
  const double scale = static_cast<double>(s) / size;
  auto weights = [&](int i) {
    std::vector<std::pair<int, double>> w;
    const double a = i * scale, b = (i + 1) * scale;
    for (int p = static_cast<int>(a); p < s && p < b; ++p) {
      const double cover = std::min<double>(p + 1, b) - std::max<double>(p, a);
      if (cover > 0) w.emplace_back(p, cover / scale);
    }
    return w;
  };
  std::vector<std::vector<std::pair<int, double>>> wy(size), wx(size);
  for (int i = 0; i < size; ++i) wy[i] = wx[i] = weights(i);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      for (int c = 0; c < image::channels; ++c) {
        double acc = 0;
        for (auto [py, fy] : wy[y]) {
          for (auto [px, fx] : wx[x]) acc += fy * fx * sq.at(py, px, c);
        }
        out.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(acc), 0L, 255L));
      }
    }
  }
  return out;
}

std::pair<long, long> split_sizes(long n, const split_rule& rule) {
  if (n < 2) throw invalid_argument("at least 2 images are needed for a split");
  if (rule.train_count || rule.test_count) {
    const long tr = rule.train_count.value_or(0), te = rule.test_count.value_or(0);
    if (tr < 1 || te < 1 || tr + te > n) {
      throw config_error("split of " + std::to_string(tr) + " train + " + std::to_string(te) + " test does not fit " +
                         std::to_string(n) + " images");
    }
    return {tr, te};
  }
  const long tr = std::clamp(std::lround(rule.train_fraction * static_cast<double>(n)), 1L, n - 1);
  return {tr, n - tr};
}

split_manifest ingest(const std::string& dir, int crop, std::uint64_t seed, const split_rule& rule,
                      const log_fn& log) {
  if (!fs::is_directory(dir)) throw config_error("dataset directory '" + dir + "' does not exist");
  std::vector<manifest_entry> found;
  for (const auto& de : fs::directory_iterator(dir)) {
    if (!de.is_regular_file()) continue;
    const auto ext = lower(de.path().extension().string());
    if (ext != ".png" && ext != ".jpg" && ext != ".jpeg") continue;
    found.push_back({de.path().filename().string(), de.path().string(), split_kind::unused, {}});
  }
  std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a.id < b.id; });

  std::vector<manifest_entry> ok, skipped;
  for (auto& e : found) {
    try {
      const auto img = io::read_image(e.path);
      if (img.empty()) throw shape_error("empty image");
      ok.push_back(std::move(e));
    } catch (const std::exception& ex) {
      e.split = split_kind::skipped;
      e.reason = ex.what();
      if (log) log("warning: skipping " + e.path + ": " + e.reason);
      skipped.push_back(std::move(e));
    }
  }
  const long n = static_cast<long>(ok.size());
  if (n < 2) {
    throw invalid_argument("dataset '" + dir + "' has " + std::to_string(n) + " decodable images; at least 2 needed");
  }

  rng_stream rng(seed, {0x5B11});
  for (long i = n - 1; i > 0; --i) {
    std::swap(ok[static_cast<std::size_t>(i)], ok[rng.below(static_cast<std::uint64_t>(i) + 1)]);
  }

  const auto [n_train, n_test] = split_sizes(n, rule);
  for (long i = 0; i < n; ++i) {
    ok[static_cast<std::size_t>(i)].split =
        i < n_train ? split_kind::train : (i < n_train + n_test ? split_kind::test : split_kind::unused);
  }

  split_manifest m;
  m.dataset_dir = dir;
  m.crop = crop;
  m.seed = seed;
  m.entries = std::move(ok);
  for (auto& e : skipped) m.entries.push_back(std::move(e));
  return m;
}

json to_json(const split_manifest& m) {
  json entries = json::array();
  for (const auto& e : m.entries) {
    json j{{"id", e.id}, {"path", e.path}, {"split", to_string(e.split)}};
    if (!e.reason.empty()) j["reason"] = e.reason;
    entries.push_back(std::move(j));
  }
  return {{"dataset_dir", m.dataset_dir}, {"crop", m.crop}, {"seed", m.seed}, {"entries", entries}};
}

split_manifest manifest_from_json(const json& j) {
  split_manifest m;
  try {
    m.dataset_dir = j.at("dataset_dir").get<std::string>();
    m.crop = j.at("crop").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& e : j.at("entries")) {
      m.entries.push_back({e.at("id").get<std::string>(), e.at("path").get<std::string>(),
                           split_from_string(e.at("split").get<std::string>()), e.value("reason", "")});
    }
  } catch (const json::exception& ex) {
    throw corrupt_file_error(std::string("manifest: ") + ex.what(), 0);
  }
  return m;
}

void save_manifest(const split_manifest& m, const std::string& path) {
  ensure_parent(path);
  io::write_text(path, to_json(m).dump(2) + "\n");
}

split_manifest load_manifest(const std::string& path) {
  try {
    return manifest_from_json(json::parse(io::read_text(path)));
  } catch (const json::parse_error& ex) {
    throw corrupt_file_error(path + ": " + ex.what(), ex.byte);
  }
}

std::vector<image> load_split(const split_manifest& m, split_kind s) {
  std::vector<image> out;
  for (const auto* e : m.of(s)) out.push_back(square_resize(io::read_image(e->path), m.crop));
  return out;
}

void ensure_synthetic(const std::string& dir, const synthetic_spec& spec, const log_fn& log) {
  const json want{{"seed", spec.seed}, {"count", spec.count}, {"size", spec.size}};
  const auto marker = (fs::path(dir) / ".synthetic.json").string();
  if (fs::exists(marker)) {
    try {
      if (json::parse(io::read_text(marker)) == want) return;
    } catch (const json::exception&) {
    }
  }
  fs::create_directories(dir);
  for (const auto& de : fs::directory_iterator(dir)) {
    if (de.path().filename().string().rfind("synth_", 0) == 0) fs::remove(de.path());
  }
  if (log) log("writing " + std::to_string(spec.count) + " synthetic images to " + dir);
  for (long i = 0; i < spec.count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "synth_%05ld.png", i);
    io::write_png((fs::path(dir) / name).string(),
                  synth::dataset_image(spec.seed, static_cast<std::uint64_t>(i), spec.size));
  }
  io::write_text(marker, want.dump() + "\n");
}

split_manifest prepare_dataset(const experiment_config& cfg, const log_fn& log) {
  const auto dir = cfg.resolve(cfg.dataset.path);
  if (cfg.dataset.synthetic) ensure_synthetic(dir, *cfg.dataset.synthetic, log);
  const split_rule rule{cfg.dataset.train_fraction, cfg.dataset.train_count, cfg.dataset.test_count};
  auto m = ingest(dir, cfg.dataset.crop, cfg.dataset.split_seed, rule, log);
  save_manifest(m, cfg.out("manifest.json"));
  return m;
}

// --------------------------------------------------------------- training

std::unique_ptr<kb::provider> make_provider(const kb_config& k) {
  const kb::http_options opts{k.provider_url, k.timeout_ms, k.retries, k.backoff_ms, k.fallback_to_stub};
  return kb::make_provider(k.provider, opts, k.kb_dim);
}

kb::kb_store build_kb(const experiment_config& cfg, const std::vector<image>& train, const split_manifest& m,
                      kb::provider& p, const log_fn& log) {
  std::vector<std::string> ids;
  for (const auto* e : m.of(split_kind::train)) ids.push_back(e->id);
  auto rep = kb::kb_build(train, ids, p, cfg.kb.prompt, p.name() + " over " + std::to_string(train.size()) + " training captions");
  if (rep.fallbacks > 0 && log) log("warning: " + std::to_string(rep.fallbacks) + " provider calls fell back to the stub");
  return std::move(rep.store);
}

Eigen::MatrixXf conditioning_matrix(const std::vector<image>& imgs, const kb::kb_store& store, kb::provider& p,
                                    const std::string& prompt) {
  Eigen::MatrixXf out(store.dim(), static_cast<Eigen::Index>(imgs.size()));
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    out.col(static_cast<Eigen::Index>(i)) = kb::condition_image(imgs[i], store, p, prompt).match.vector;
  }
  return out;
}

codec::codec_model<float> train_codec(const experiment_config& cfg, const std::vector<image>& train,
                                      const Eigen::MatrixXf& cond, const log_fn& log) {
  if (train.empty()) throw invalid_argument("train_codec: empty training set");
  if (cond.cols() != static_cast<Eigen::Index>(train.size()) || cond.rows() != cfg.codec.cond_dim) {
    throw shape_error("train_codec: conditioning matrix must be cond_dim x images");
  }
  auto cc = cfg.codec;
  cc.train_snr_db = cfg.train.train_snr_db;
  codec::codec_model<float> model(cc, cfg.seed);
  auto tc = cfg.train;
  tc.seed = cfg.seed;
  codec::codec_trainer<float> trainer(model, tc);
  rng_stream pick(cfg.seed, {0xBA7C});
  const int b = tc.batch_size;
  std::vector<image> batch(static_cast<std::size_t>(b));
  codec::matrix<float> cb(cond.rows(), b);
  double d_acc = 0, r_acc = 0;
  long n_acc = 0;
  for (long step = 0; step < tc.total_steps; ++step) {
    for (int j = 0; j < b; ++j) {
      const auto i = pick.below(train.size());
      batch[static_cast<std::size_t>(j)] = train[i];
      cb.col(j) = cond.col(static_cast<Eigen::Index>(i));
    }
    const auto st = trainer.train_step(batch, cb);
    d_acc += st.distortion;
    r_acc += st.rate;
    ++n_acc;
    if (log && ((step + 1) % 1000 == 0 || step + 1 == tc.total_steps)) {
      log("codec step " + std::to_string(step + 1) + "/" + std::to_string(tc.total_steps) + "  mse " +
          fmt("%.5f", d_acc / n_acc) + "  rate " + fmt("%.2f", r_acc / n_acc) + " bits/token");
      d_acc = r_acc = 0;
      n_acc = 0;
    }
  }
  return model;
}

void train_codec_command(const experiment_config& cfg, const log_fn& log) {
  const auto m = prepare_dataset(cfg, log);
  const auto train = load_split(m, split_kind::train);
  auto provider = make_provider(cfg.kb);
  const auto store = build_kb(cfg, train, m, *provider, log);
  ensure_parent(cfg.kb_path());
  kb::kb_save(store, cfg.kb_path());
  if (log) log("knowledge base: " + std::to_string(store.size()) + " entries -> " + cfg.kb_path());
  const auto cond = conditioning_matrix(train, store, *provider, cfg.kb.prompt);
  auto model = train_codec(cfg, train, cond, log);
  codec::checkpoint_meta meta;
  meta.root_seed = cfg.seed;
  meta.steps = cfg.train.total_steps;
  meta.lambda_rd = cfg.train.lambda_rd;
  meta.extra = {{"config_hash", config_hash(cfg)}, {"train_images", train.size()}};
  ensure_parent(cfg.codec_path());
  codec::save_checkpoint(cfg.codec_path(), model, meta);
  if (log) log("codec checkpoint -> " + cfg.codec_path());
}

ckb::training_log train_agent_command(const experiment_config& cfg, const log_fn& log) {
  const auto m = prepare_dataset(cfg, log);
  auto train = load_split(m, split_kind::train);
  for (const auto& [what, path] : {std::pair{"codec checkpoint", cfg.codec_path()}, {"knowledge base", cfg.kb_path()}}) {
    if (!fs::exists(path)) throw config_error(std::string("train-agent needs the ") + what + " '" + path + "' (run akb train-codec)");
  }
  auto codec = std::make_shared<codec::codec_model<float>>(codec::load_checkpoint(cfg.codec_path()));
  auto store = std::make_shared<kb::kb_store>(kb::kb_load(cfg.kb_path()));

  evaluator cal(cfg, train, codec, store, nullptr);
  const double eta = cal.calibrate(scheme::akb_jscc_no_ckb, cfg.eval.cbr_target, codec->cfg.train_snr_db).eta;
  if (log) log("agent environment eta " + fmt("%.6g", eta) + " for CBR " + fmt("%g", cfg.eval.cbr_target));

  auto provider = make_provider(cfg.kb);
  link::source_context ctx{store.get(), provider.get(), cfg.kb.prompt};
  ckb::link_env env(*codec, ctx, std::move(train), eta, cfg.agent.snr_choices_db);
  ckb::agent_network<double> net(cfg.agent.ppo.trunk_channels, cfg.agent.ppo.mode, cfg.seed);
  auto tl = ckb::train_agent(env, net, cfg.agent.ppo, cfg.agent.episodes, cfg.seed);
  if (log) {
    for (std::size_t u = 0; u < tl.mean_reward.size(); ++u) {
      if ((u + 1) % 4 == 0 || u + 1 == tl.mean_reward.size()) {
        log("agent update " + std::to_string(u + 1) + "  reward " + fmt("%.4f", tl.mean_reward[u]) + "  offset " +
            fmt("%+.3f", tl.mean_offset[u]));
      }
    }
  }
  ensure_parent(cfg.agent_path());
  ckb::save_agent(cfg.agent_path(), net, cfg.agent.ppo, codec::checkpoint_hash(cfg.codec_path()));
  if (log) log("agent checkpoint -> " + cfg.agent_path());
  return tl;
}

// ------------------------------------------------------------- evaluation

evaluator::evaluator(const experiment_config& cfg, std::vector<image> test, const std::vector<scheme>& schemes,
                     const log_fn& log)
    : cfg_(cfg), test_(std::move(test)) {
  const bool learned = std::any_of(schemes.begin(), schemes.end(), is_learned);
  const bool agent = std::find(schemes.begin(), schemes.end(), scheme::akb_jscc) != schemes.end();
  const bool jpeg = std::find(schemes.begin(), schemes.end(), scheme::jpeg_ldpc) != schemes.end();
  auto need = [&](scheme s, const char* what, const std::string& path) {
    if (!fs::exists(path)) {
      throw config_error("scheme " + to_string(s) + " needs the " + what + " '" + path + "'");
    }
  };
  if (learned) {
    const scheme s = *std::find_if(schemes.begin(), schemes.end(), is_learned);
    need(s, "codec checkpoint", cfg_.codec_path());
    need(s, "knowledge base", cfg_.kb_path());
    codec_ = std::make_shared<codec::codec_model<float>>(codec::load_checkpoint(cfg_.codec_path()));
    store_ = std::make_shared<kb::kb_store>(kb::kb_load(cfg_.kb_path()));
  }
  if (agent) {
    need(scheme::akb_jscc, "agent checkpoint", cfg_.agent_path());
    auto loaded = ckb::load_agent(cfg_.agent_path(), codec::checkpoint_hash(cfg_.codec_path()));
    if (loaded.warning && log) log("warning: " + *loaded.warning);
    cfg_.agent.ppo = loaded.cfg;
    agent_ = std::make_shared<ckb::agent_network<double>>(std::move(loaded.net));
  }
  if (jpeg) {
    need(scheme::jpeg_ldpc, "LDPC fixture", cfg_.ldpc_path());
    ldpc_ = std::make_shared<classic::ldpc_code>(classic::load_alist(cfg_.ldpc_path()));
  }
  prepare_all();
}

evaluator::evaluator(const experiment_config& cfg, std::vector<image> test,
                     std::shared_ptr<codec::codec_model<float>> codec, std::shared_ptr<kb::kb_store> store,
                     std::shared_ptr<ckb::agent_network<double>> agent)
    : cfg_(cfg), test_(std::move(test)), codec_(std::move(codec)), store_(std::move(store)), agent_(std::move(agent)) {
  if (fs::exists(cfg_.ldpc_path())) ldpc_ = std::make_shared<classic::ldpc_code>(classic::load_alist(cfg_.ldpc_path()));
  prepare_all();
}

void evaluator::prepare_all() {
  if (!codec_) return;
  if (store_) {
    provider_ = make_provider(cfg_.kb);
    ctx_ = {store_.get(), provider_.get(), cfg_.kb.prompt};
  }
  prepared_.reserve(test_.size());
  for (const auto& img : test_) prepared_.push_back(link::prepare(img, *codec_, ctx_));
}

void evaluator::require(scheme s) const {
  if (is_learned(s) && !codec_) throw config_error("scheme " + to_string(s) + " needs a codec checkpoint");
  if (s == scheme::akb_jscc && !agent_) throw config_error("scheme akb_jscc needs an agent checkpoint");
  if (s == scheme::jpeg_ldpc && !ldpc_) throw config_error("scheme jpeg_ldpc needs the LDPC fixture");
}

double evaluator::snr_for(std::size_t i, double snr_db, bool random_snr) const {
  if (!random_snr) return snr_db;
  rng_stream r(cfg_.seed, {0x5A4D, i});
  return cfg_.eval.snr_list[r.below(cfg_.eval.snr_list.size())];
}

entropy::rate_index_map evaluator::rate_map(scheme s, std::size_t i, const knob& k, double snr_db) const {
  const auto& p = prepared_[i];
  const auto& rates = codec_->cfg.rates;
  if (s == scheme::fixed_rate_jscc) {
    if (k.fixed_index < 0 || k.fixed_index >= static_cast<int>(rates.size())) {
      throw invalid_argument("fixed rate index out of range");
    }
    return entropy::rate_index_map::Constant(p.entropy.rows(), p.entropy.cols(), k.fixed_index);
  }
  auto rm = entropy::rate_preset_map(p.entropy, rates, k.eta);
  if (s == scheme::akb_jscc) {
    const channel::channel_spec spec{channel::channel_kind::awgn, snr_db};
    const auto& pc = cfg_.agent.ppo;
    const auto state = ckb::build_state(p.entropy, spec, ckb::neutral(agent_->mode), agent_->mode, pc);
    const auto pol = ckb::policy_step(state, *agent_, nullptr);
    rm = ckb::apply_action(rm, pol.a, agent_->mode, rates);
  }
  return rm;
}

long evaluator::jpeg_symbols(std::size_t i, int quality) const {
  const auto scan = classic::jpeg_encode(test_[i], quality);
  return classic::chain_symbols(static_cast<long>(scan.size()) * 8, *ldpc_);
}

evaluator::per_image evaluator::run_one(scheme s, std::size_t i, const knob& k, double snr_db) const {
  rng_stream noise(cfg_.seed, {0xE7A1, i});
  const channel::channel_spec spec{channel::channel_kind::awgn, snr_db};
  per_image r;
  r.snr_db = snr_db;
  r.source_symbols = static_cast<long>(test_[i].size());
  if (s == scheme::jpeg_ldpc) {
    const auto c = classic::classic_chain(test_[i], k.jpeg_quality, spec, *ldpc_, noise, cfg_.baseline.max_iters);
    r.psnr_db = c.report.psnr_db;
    r.symbols = c.report.symbols;
    return r;
  }
  const auto rm = rate_map(s, i, k, snr_db);
  const auto t = link::transmit(prepared_[i], rm, *codec_, ctx_, spec, noise, s != scheme::fixed_rate_jscc);
  r.psnr_db = t.psnr_db;
  r.symbols = t.payload_symbols + t.side_symbols;
  return r;
}

std::vector<evaluator::per_image> evaluator::run(scheme s, const knob& k, double snr_db, bool random_snr) const {
  require(s);
  std::vector<per_image> out(test_.size());
  const auto n = test_.size();
  const auto workers = static_cast<std::size_t>(std::max(1, std::min<int>(workers_, static_cast<int>(n))));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = run_one(s, i, k, snr_for(i, snr_db, random_snr));
    return out;
  }
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) out[i] = run_one(s, i, k, snr_for(i, snr_db, random_snr));
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

double evaluator::mean_cbr(scheme s, const knob& k, double snr_db) const {
  require(s);
  long symbols = 0, source = 0;
  for (std::size_t i = 0; i < test_.size(); ++i) {
    source += static_cast<long>(test_[i].size());
    if (s == scheme::jpeg_ldpc) {
      symbols += jpeg_symbols(i, k.jpeg_quality);
      continue;
    }
    const auto rm = rate_map(s, i, k, snr_db);
    symbols += entropy::payload_symbols(rm, codec_->cfg.rates) + prepared_[i].side.symbols;
    if (s != scheme::fixed_rate_jscc) symbols += codec::rate_map_side_symbols(codec_->cfg.rates, rm.size());
  }
  return static_cast<double>(symbols) / static_cast<double>(source);
}

knob evaluator::calibrate(scheme s, double cbr_target, double snr_db, int max_probes, double tolerance,
                          bool* reached, int* probes) const {
  require(s);
  knob best;
  best.fixed_index = cfg_.fixed_rate_index();
  double best_err = INFINITY;
  int used = 0;
  auto probe = [&](const knob& k) {
    ++used;
    const double c = mean_cbr(s, k, snr_db);
    const double err = std::abs(c - cbr_target);
    if (err < best_err) {
      best_err = err;
      best = k;
    }
    return c;
  };
  auto done = [&] { return tolerance > 0 && best_err <= tolerance * cbr_target; };

  if (s == scheme::fixed_rate_jscc) {
    for (int i = 0; i < static_cast<int>(codec_->cfg.rates.size()); ++i) {
      knob k = best;
      k.fixed_index = i;
      probe(k);
    }
  } else if (s == scheme::jpeg_ldpc) {
    int lo = 1, hi = 100;
    while (lo <= hi && used < max_probes && !done()) {
      knob k = best;
      k.jpeg_quality = (lo + hi) / 2;
      if (probe(k) < cbr_target) {
        lo = k.jpeg_quality + 1;
      } else {
        hi = k.jpeg_quality - 1;
      }
    }
  } else {
    double lo = std::log(1e-3), hi = std::log(1e3);
    while (used < max_probes && !done()) {
      knob k = best;
      k.eta = std::exp(0.5 * (lo + hi));
      if (probe(k) < cbr_target) {
        lo = std::log(k.eta);
      } else {
        hi = std::log(k.eta);
      }
    }
  }
  if (probes) *probes = used;
  if (reached) *reached = tolerance <= 0 || best_err <= tolerance * cbr_target;
  return best;
}

cell summarize(const std::string& scheme_name, const std::string& snr, const std::vector<evaluator::per_image>& r,
               std::uint64_t seed) {
  cell c;
  c.scheme = scheme_name;
  c.snr = snr;
  c.seed = seed;
  c.n_images = static_cast<long>(r.size());
  if (r.empty()) return c;
  long sym = 0, src = 0;
  double sum = 0;
  for (const auto& x : r) {
    sym += x.symbols;
    src += x.source_symbols;
    sum += x.psnr_db;
  }
  c.cbr_mean = static_cast<double>(sym) / static_cast<double>(src);
  c.psnr_mean = sum / static_cast<double>(r.size());
  double var = 0;
  for (const auto& x : r) var += (x.psnr_db - c.psnr_mean) * (x.psnr_db - c.psnr_mean);
  c.psnr_std = std::sqrt(var / static_cast<double>(r.size()));
  return c;
}

std::string format_snr(double snr_db) { return fmt("%g", snr_db); }

std::string eval_row(const cell& c) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.4f,%.4f,%ld,%llu", c.scheme.c_str(), c.snr.c_str(), c.cbr_mean,
                c.psnr_mean, c.psnr_std, c.n_images, static_cast<unsigned long long>(c.seed));
  return buf;
}

knob default_knob(const evaluator& ev, scheme s) {
  const auto& cfg = ev.config();
  knob k;
  k.fixed_index = cfg.fixed_rate_index();
  switch (s) {
    case scheme::akb_jscc:
    case scheme::akb_jscc_no_ckb:
      // akb_jscc shares the no-ckb operating point; the agent then moves it.
      k.eta = ev.calibrate(scheme::akb_jscc_no_ckb, cfg.eval.cbr_target, ev.codec().cfg.train_snr_db).eta;
      break;
    case scheme::fixed_rate_jscc:
      break;
    case scheme::jpeg_ldpc:
      k.jpeg_quality = cfg.eval.jpeg_quality ? *cfg.eval.jpeg_quality
                                             : ev.calibrate(s, cfg.eval.jpeg_cbr_target, 0.0).jpeg_quality;
      break;
  }
  return k;
}

std::vector<cell> run_eval(const evaluator& ev, const log_fn& log) {
  const auto& cfg = ev.config();
  std::vector<cell> out;
  for (auto s : cfg.eval.schemes) {
    const auto k = default_knob(ev, s);
    for (double snr : cfg.eval.snr_list) {
      out.push_back(summarize(to_string(s), format_snr(snr), ev.run(s, k, snr), cfg.seed));
      if (log) log("eval " + eval_row(out.back()));
    }
  }
  return out;
}

std::string eval_csv(const std::vector<cell>& cells) {
  std::string s = std::string(eval_header) + "\n";
  for (const auto& c : cells) s += eval_row(c) + "\n";
  return s;
}

std::vector<sweep_row> run_sweep(const evaluator& ev, const log_fn& log) {
  const auto& cfg = ev.config();
  std::vector<sweep_row> out;
  for (auto s : cfg.eval.schemes) {
    for (double target : cfg.sweep.cbr_targets) {
      sweep_row row;
      row.cbr_target = target;
      const auto k = ev.calibrate(s, target, cfg.sweep.snr_db, cfg.sweep.max_probes, cfg.sweep.tolerance,
                                  &row.reachable, &row.probes);
      row.c = summarize(to_string(s), format_snr(cfg.sweep.snr_db), ev.run(s, k, cfg.sweep.snr_db), cfg.seed);
      if (log) log("sweep " + eval_row(row.c) + (row.reachable ? "" : " (unreachable)"));
      out.push_back(row);
    }
  }
  return out;
}

std::string sweep_csv(const std::vector<sweep_row>& rows) {
  std::string s = std::string(sweep_header) + "\n";
  for (const auto& r : rows) {
    char buf[320];
    std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f,%.4f,%.4f,%ld,%llu,%d,%s", r.c.scheme.c_str(), r.c.snr.c_str(),
                  r.cbr_target, r.c.cbr_mean, r.c.psnr_mean, r.c.psnr_std, r.c.n_images,
                  static_cast<unsigned long long>(r.c.seed), r.probes, r.reachable ? "ok" : "unreachable");
    s += std::string(buf) + "\n";
  }
  return s;
}

std::vector<ablate_row> run_ablate(const evaluator& ev, const log_fn& log) {
  const auto& cfg = ev.config();
  const std::vector<scheme> schemes{scheme::akb_jscc, scheme::akb_jscc_no_ckb, scheme::fixed_rate_jscc};
  std::map<scheme, knob> knobs;
  for (auto s : schemes) knobs[s] = default_knob(ev, s);

  std::vector<std::pair<std::string, double>> conditions;
  for (double snr : cfg.eval.snr_list) conditions.emplace_back(format_snr(snr), snr);
  conditions.emplace_back("random", 0.0);

  std::vector<ablate_row> out;
  for (const auto& [label, snr] : conditions) {
    const bool random = label == "random";
    std::map<scheme, cell> cells;
    for (auto s : schemes) cells[s] = summarize(to_string(s), label, ev.run(s, knobs[s], snr, random), cfg.seed);
    for (auto s : schemes) {
      out.push_back({cells[s], cells[s].psnr_mean - cells[scheme::akb_jscc_no_ckb].psnr_mean});
      if (log) log("ablate " + eval_row(out.back().c));
    }
  }
  return out;
}

std::string ablate_csv(const std::vector<ablate_row>& rows) {
  std::string s = std::string(ablate_header) + "\n";
  for (const auto& r : rows) s += eval_row(r.c) + "," + fmt("%.4f", r.delta_vs_no_ckb) + "\n";
  return s;
}

json run_meta(const experiment_config& cfg, const std::string& command) {
  json j{{"command", command},
         {"config_hash", config_hash(cfg)},
         {"config", to_json(cfg)},
         {"seed", cfg.seed},
         {"jpeg_encoder", classic::jpeg_encoder_identity()}};
  if (fs::exists(cfg.codec_path())) j["codec_checkpoint_hash"] = codec::checkpoint_hash(cfg.codec_path());
  if (fs::exists(cfg.ldpc_path())) {
    const auto bytes = io::read_file(cfg.ldpc_path());
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
    j["ldpc_fixture_hash"] = buf;
  }
  return j;
}

// -------------------------------------------------------------- plot data

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

class csv_error : public error {
 public:
  explicit csv_error(const std::string& what) : error(what, "csv") {}
};

double parse_number(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || !std::isfinite(v)) throw csv_error(where + ": '" + s + "' is not a number");
  return v;
}

}  // namespace

std::vector<series> plot_series(const std::vector<std::string>& csv_paths) {
  std::map<std::string, std::vector<std::pair<double, double>>> acc;
  for (const auto& path : csv_paths) {
    std::istringstream in(io::read_text(path));
    std::string line;
    if (!std::getline(in, line)) throw csv_error(path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv_line(line);
    auto col = [&](const std::string& name) -> std::optional<std::size_t> {
      const auto it = std::find(header.begin(), header.end(), name);
      if (it == header.end()) return std::nullopt;
      return static_cast<std::size_t>(it - header.begin());
    };
    auto need = [&](const std::string& name) {
      const auto c = col(name);
      if (!c) throw csv_error(path + ": missing column '" + name + "'");
      return *c;
    };
    const bool sweep = col("cbr_target").has_value();
    const std::size_t c_scheme = need("scheme"), c_y = need("psnr_mean");
    const std::size_t c_x = sweep ? need("cbr_mean") : need("snr_db");
    const auto c_status = col("status");
    const std::string axis = sweep ? "cbr" : "snr";
    long lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto f = split_csv_line(line);
      const std::string where = path + ":" + std::to_string(lineno);
      if (f.size() != header.size()) {
        throw csv_error(where + ": expected " + std::to_string(header.size()) + " fields, found " +
                        std::to_string(f.size()));
      }
      if (c_status && f[*c_status] != "ok") continue;
      if (!sweep && f[c_x] == "random") continue;
      if (f[c_scheme].empty()) throw csv_error(where + ": empty scheme");
      acc[f[c_scheme] + "_" + axis].emplace_back(parse_number(f[c_x], where), parse_number(f[c_y], where));
    }
  }
  std::vector<series> out;
  for (auto& [name, pts] : acc) {
    std::stable_sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    out.push_back({name, std::move(pts)});
  }
  return out;
}

std::vector<std::string> emit_plotdata(const std::vector<std::string>& csv_paths, const std::string& dir) {
  const auto all = plot_series(csv_paths);
  fs::create_directories(dir);
  std::vector<std::string> written;
  for (const auto& s : all) {
    std::string text = "x,y\n";
    for (const auto& [x, y] : s.points) text += fmt("%.10g", x) + "," + fmt("%.10g", y) + "\n";
    const auto path = (fs::path(dir) / (s.name + ".csv")).string();
    io::write_text(path, text);
    written.push_back(path);
  }
  return written;
}

}  // namespace akb::harness
