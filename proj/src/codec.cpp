#include "akb/codec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "akb/binary_io.hpp"
#include "akb/rng.hpp"

namespace akb::codec {

using Eigen::Index;

std::string to_string(backbone_kind b) {
  return b == backbone_kind::conv ? "conv" : "window_attention";
}

backbone_kind backbone_from_string(const std::string& s) {
  if (s == "conv") return backbone_kind::conv;
  if (s == "window_attention") return backbone_kind::window_attention;
  throw config_error("unknown backbone '" + s + "' (expected conv or window_attention)");
}

void codec_config::validate() const {
  if (patch < 1) throw config_error("codec: patch must be >= 1");
  if (token_dim < 2 * rates.max_rate()) {
    throw config_error("codec: token_dim (" + std::to_string(token_dim) +
                       ") must hold 2*max_rate real values (" +
                       std::to_string(2 * rates.max_rate()) + ")");
  }
  if (hidden < 1 || entropy_hidden < 1 || cond_dim < 1 || blocks < 0) {
    throw config_error("codec: widths must be positive");
  }
  if (!(eta > 0.0)) throw config_error("codec: eta must be positive");
}

void to_json(nlohmann::json& j, const codec_config& c) {
  j = nlohmann::json{{"patch", c.patch},
                     {"token_dim", c.token_dim},
                     {"hidden", c.hidden},
                     {"entropy_hidden", c.entropy_hidden},
                     {"cond_dim", c.cond_dim},
                     {"blocks", c.blocks},
                     {"backbone", to_string(c.backbone)},
                     {"rate_set", c.rates.rates()},
                     {"eta", c.eta},
                     {"train_snr_db", c.train_snr_db}};
}

void from_json(const nlohmann::json& j, codec_config& c) {
  c.patch = j.at("patch").get<int>();
  c.token_dim = j.at("token_dim").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.entropy_hidden = j.at("entropy_hidden").get<int>();
  c.cond_dim = j.at("cond_dim").get<int>();
  c.blocks = j.at("blocks").get<int>();
  c.backbone = backbone_from_string(j.at("backbone").get<std::string>());
  c.rates = entropy::rate_set(j.at("rate_set").get<std::vector<int>>());
  c.eta = j.at("eta").get<double>();
  c.train_snr_db = j.at("train_snr_db").get<double>();
}

long rate_map_side_symbols(const entropy::rate_set& rates, long tokens) {
  const long bits = static_cast<long>(rates.index_bits()) * tokens;
  return (bits + 1) / 2;
}

// ---------------------------------------------------------------- model

template <class S>
codec_model<S>::codec_model(const codec_config& c, std::uint64_t seed) : cfg(c) {
  cfg.validate();
  rng_stream rng(seed, {0xC0DEC0DE});
  const bool attn = cfg.backbone == backbone_kind::window_attention;
  const int h = cfg.hidden;
  const int d = cfg.token_dim;
  auto blocks = [&](const std::string& name) {
    std::vector<nn::mixing_block<S>> out;
    for (int i = 0; i < cfg.blocks; ++i) {
      out.emplace_back(name + std::to_string(i), h, attn, rng);
    }
    return out;
  };
  analysis_in = nn::dense<S>("analysis.in", cfg.patch_values(), h, rng);
  analysis_mix = blocks("analysis.mix");
  analysis_out = nn::dense<S>("analysis.out", h, d, rng);
  entropy = entropy::entropy_model<S>(d, cfg.entropy_hidden, rng);
  enc_in = nn::dense<S>("encoder.in", d, h, rng);
  enc_film = nn::film<S>("encoder.film", cfg.cond_dim, h, rng);
  enc_mix = blocks("encoder.mix");
  enc_out = nn::dense<S>("encoder.out", h, d, rng);
  dec_in = nn::dense<S>("decoder.in", d + 2, h, rng);
  // The SNR row only learns weights when training varies the SNR.
  dec_in.w.value.col(d + 1).setZero();
  dec_film = nn::film<S>("decoder.film", cfg.cond_dim, h, rng);
  dec_mix = blocks("decoder.mix");
  dec_out = nn::dense<S>("decoder.out", h, d, rng);
  syn_in = nn::dense<S>("synthesis.in", d, h, rng);
  syn_mix = blocks("synthesis.mix");
  syn_out = nn::dense<S>("synthesis.out", h, cfg.patch_values(), rng, false, 0.5);
}

template <class S>
nn::param_list<S> codec_model<S>::params() {
  nn::param_list<S> out;
  analysis_in.collect(out);
  for (auto& b : analysis_mix) b.collect(out);
  analysis_out.collect(out);
  entropy.collect(out);
  enc_in.collect(out);
  enc_film.collect(out);
  for (auto& b : enc_mix) b.collect(out);
  enc_out.collect(out);
  dec_in.collect(out);
  dec_film.collect(out);
  for (auto& b : dec_mix) b.collect(out);
  dec_out.collect(out);
  syn_in.collect(out);
  for (auto& b : syn_mix) b.collect(out);
  syn_out.collect(out);
  return out;
}

// ---------------------------------------------------------------- stages

ad::grid_layout layout_for(const image& img, int patch, Index batch) {
  if (img.height() % patch != 0 || img.width() % patch != 0) {
    throw shape_error("image " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                      " is not divisible by the grid reduction factor " + std::to_string(patch));
  }
  return ad::grid_layout{batch, img.height() / patch, img.width() / patch};
}

template <class S>
matrix<S> images_to_patches(std::span<const image> images, int patch) {
  if (images.empty()) throw invalid_argument("images_to_patches: empty batch");
  const auto g = layout_for(images[0], patch, static_cast<Index>(images.size()));
  matrix<S> out(static_cast<Index>(patch) * patch * image::channels, g.tokens());
  for (std::size_t b = 0; b < images.size(); ++b) {
    const auto& img = images[b];
    if (!img.same_shape(images[0])) throw shape_error("images_to_patches: batch shapes differ");
    for (Index gy = 0; gy < g.height; ++gy) {
      for (Index gx = 0; gx < g.width; ++gx) {
        const Index col = static_cast<Index>(b) * g.tokens_per_image() + gy * g.width + gx;
        Index row = 0;
        for (int py = 0; py < patch; ++py) {
          for (int px = 0; px < patch; ++px) {
            for (int c = 0; c < image::channels; ++c) {
              const auto v = img.at(static_cast<int>(gy) * patch + py,
                                    static_cast<int>(gx) * patch + px, c);
              out(row++, col) = static_cast<S>(v) / S(255) - S(0.5);
            }
          }
        }
      }
    }
  }
  return out;
}

template <class S>
image patches_to_image(const matrix<S>& patches, Index first, int grid_h, int grid_w, int patch) {
  image img(grid_h * patch, grid_w * patch);
  for (int gy = 0; gy < grid_h; ++gy) {
    for (int gx = 0; gx < grid_w; ++gx) {
      const Index col = first + static_cast<Index>(gy) * grid_w + gx;
      Index row = 0;
      for (int py = 0; py < patch; ++py) {
        for (int px = 0; px < patch; ++px) {
          for (int c = 0; c < image::channels; ++c) {
            double v = (static_cast<double>(patches(row++, col)) + 0.5) * 255.0;
            if (!std::isfinite(v)) v = 0.0;
            v = std::clamp(std::round(v), 0.0, 255.0);
            img.at(gy * patch + py, gx * patch + px, c) = static_cast<std::uint8_t>(v);
          }
        }
      }
    }
  }
  return img;
}

template <class S>
ad::var<S> analysis_forward(ad::tape<S>& t, codec_model<S>& m, const ad::var<S>& patches,
                            const ad::grid_layout& g) {
  auto h = ad::silu(m.analysis_in(t, patches));
  for (auto& b : m.analysis_mix) h = b(t, h, g);
  return m.analysis_out(t, h);
}

template <class S>
ad::var<S> encoder_forward(ad::tape<S>& t, codec_model<S>& m, const ad::var<S>& features,
                           const ad::var<S>& cond, const ad::grid_layout& g) {
  auto h = m.enc_in(t, features);
  h = ad::silu(m.enc_film(t, h, cond, g.tokens_per_image()));
  for (auto& b : m.enc_mix) h = b(t, h, g);
  return m.enc_out(t, h);
}

template <class S>
ad::var<S> decoder_forward(ad::tape<S>& t, codec_model<S>& m, const ad::var<S>& received,
                           const matrix<S>& side_rows, const ad::var<S>& cond,
                           const ad::grid_layout& g) {
  auto in = ad::concat_rows<S>({received, t.constant(side_rows)});
  auto h = m.dec_in(t, in);
  h = ad::silu(m.dec_film(t, h, cond, g.tokens_per_image()));
  for (auto& b : m.dec_mix) h = b(t, h, g);
  return m.dec_out(t, h);
}

template <class S>
ad::var<S> synthesis_forward(ad::tape<S>& t, codec_model<S>& m, const ad::var<S>& features,
                             const ad::grid_layout& g) {
  auto h = ad::silu(m.syn_in(t, features));
  for (auto& b : m.syn_mix) h = b(t, h, g);
  return m.syn_out(t, h);
}

namespace {

Index total_tokens(const std::vector<entropy::rate_index_map>& maps) {
  Index n = 0;
  for (const auto& mp : maps) n += mp.size();
  return n;
}

/// Token rate for column j of the concatenated maps (row-major per map).
template <class F>
void for_each_token(const std::vector<entropy::rate_index_map>& maps, F&& fn) {
  Index col = 0;
  for (const auto& mp : maps) {
    for (Index y = 0; y < mp.rows(); ++y) {
      for (Index x = 0; x < mp.cols(); ++x) fn(col++, mp(y, x));
    }
  }
}

void check_index(int idx, const entropy::rate_set& rates) {
  if (idx < 0 || static_cast<std::size_t>(idx) >= rates.size()) {
    throw invalid_argument("rate index " + std::to_string(idx) + " out of range [0, " +
                           std::to_string(rates.size()) + ")");
  }
}

}  // namespace

template <class S>
matrix<S> rate_mask(const std::vector<entropy::rate_index_map>& maps, const entropy::rate_set& rates,
                    int depth) {
  matrix<S> mask = matrix<S>::Zero(depth, total_tokens(maps));
  for_each_token(maps, [&](Index col, int idx) {
    check_index(idx, rates);
    mask.col(col).head(2 * rates[static_cast<std::size_t>(idx)]).setOnes();
  });
  return mask;
}

template <class S>
matrix<S> decoder_side_rows(const std::vector<entropy::rate_index_map>& maps,
                            const entropy::rate_set& rates, double snr_db, double train_snr_db) {
  matrix<S> side(2, total_tokens(maps));
  const S snr_in = static_cast<S>((snr_db - train_snr_db) / 10.0);
  for_each_token(maps, [&](Index col, int idx) {
    check_index(idx, rates);
    side(0, col) = static_cast<S>(rates[static_cast<std::size_t>(idx)]) / S(rates.max_rate());
    side(1, col) = snr_in;
  });
  return side;
}

// ---------------------------------------------------------------- inference

template <class S>
feature_map analysis(const image& img, codec_model<S>& m) {
  const auto g = layout_for(img, m.cfg.patch);
  ad::tape<S> t;
  const image batch[1] = {img};
  auto f = analysis_forward(t, m, t.constant(images_to_patches<S>(batch, m.cfg.patch)), g);
  return feature_map(static_cast<int>(g.height), static_cast<int>(g.width),
                     f.value().template cast<double>());
}

template <class S>
entropy::entropy_map_t compute_entropy_map(const feature_map& f, codec_model<S>& m) {
  const auto fq = entropy::quantize(f);
  basic_feature_map<S> fs(fq.grid_h, fq.grid_w, fq.values.template cast<S>());
  const auto gp = entropy::predict_params(fs, m.entropy);
  return entropy::entropy_map(
      f, entropy::gaussian_params<double>{gp.mu.template cast<double>(),
                                          gp.sigma.template cast<double>()});
}

namespace {

template <class S>
matrix<S> cond_column(const Eigen::VectorXd& cond, int cond_dim) {
  if (cond.size() != cond_dim) {
    throw shape_error("conditioning vector has dimension " + std::to_string(cond.size()) +
                      ", codec expects " + std::to_string(cond_dim));
  }
  return cond.cast<S>();
}

}  // namespace

template <class S>
symbol_frame jscc_encode(const feature_map& f, const entropy::rate_index_map& rm,
                         const Eigen::VectorXd& cond, codec_model<S>& m, const side_info& kb,
                         bool charge_rate_map) {
  if (rm.rows() != f.grid_h || rm.cols() != f.grid_w) {
    throw shape_error("jscc_encode: rate map shape does not match token grid");
  }
  if (f.depth() != m.cfg.token_dim) throw shape_error("jscc_encode: feature depth mismatch");
  const auto& rates = m.cfg.rates;
  for (Index i = 0; i < rm.size(); ++i) check_index(rm.data()[i], rates);

  const ad::grid_layout g{1, f.grid_h, f.grid_w};
  ad::tape<S> t;
  const matrix<S> fq = f.values.array().round().matrix().template cast<S>();
  auto s = encoder_forward(t, m, t.constant(fq), t.constant(cond_column<S>(cond, m.cfg.cond_dim)),
                           g);
  symbol_frame frame;
  frame.grid_h = f.grid_h;
  frame.grid_w = f.grid_w;
  frame.rate_map = rm;
  frame.side_bits = kb.bits;
  frame.kb_side_symbols = kb.symbols;
  frame.rate_map_side_symbols = charge_rate_map ? rate_map_side_symbols(rates, rm.size()) : 0;
  for (int y = 0; y < f.grid_h; ++y) {
    for (int x = 0; x < f.grid_w; ++x) {
      const Index col = static_cast<Index>(y) * f.grid_w + x;
      const int r = rates[static_cast<std::size_t>(rm(y, x))];
      for (int k = 0; k < r; ++k) {
        frame.payload.emplace_back(static_cast<double>(s.value()(2 * k, col)),
                                   static_cast<double>(s.value()(2 * k + 1, col)));
      }
    }
  }
  if (!frame.payload.empty() && channel::mean_power(frame.payload) > 0.0) {
    frame.payload = channel::normalize_power(frame.payload);
  }
  return frame;
}

template <class S>
feature_map jscc_decode(const symbol_frame& received, const channel::channel_spec& spec,
                        const Eigen::VectorXd& cond, codec_model<S>& m) {
  const auto& rates = m.cfg.rates;
  const auto& rm = received.rate_map;
  if (rm.rows() != received.grid_h || rm.cols() != received.grid_w) {
    throw shape_error("jscc_decode: rate map shape does not match frame grid");
  }
  const long expected = entropy::payload_symbols(rm, rates);
  if (expected != static_cast<long>(received.payload.size())) {
    throw shape_error("jscc_decode: payload has " + std::to_string(received.payload.size()) +
                      " symbols but the rate map implies " + std::to_string(expected));
  }
  const ad::grid_layout g{1, received.grid_h, received.grid_w};
  matrix<S> rx = matrix<S>::Zero(m.cfg.token_dim, g.tokens());
  std::size_t pos = 0;
  for (int y = 0; y < received.grid_h; ++y) {
    for (int x = 0; x < received.grid_w; ++x) {
      const Index col = static_cast<Index>(y) * received.grid_w + x;
      const int r = rates[static_cast<std::size_t>(rm(y, x))];
      for (int k = 0; k < r; ++k) {
        rx(2 * k, col) = static_cast<S>(received.payload[pos].real());
        rx(2 * k + 1, col) = static_cast<S>(received.payload[pos].imag());
        ++pos;
      }
    }
  }
  const std::vector<entropy::rate_index_map> maps{rm};
  ad::tape<S> t;
  auto f = decoder_forward(t, m, t.constant(rx),
                           decoder_side_rows<S>(maps, rates, spec.snr_db, m.cfg.train_snr_db),
                           t.constant(cond_column<S>(cond, m.cfg.cond_dim)), g);
  return feature_map(received.grid_h, received.grid_w, f.value().template cast<double>());
}

template <class S>
image synthesis(const feature_map& f, codec_model<S>& m) {
  const ad::grid_layout g{1, f.grid_h, f.grid_w};
  ad::tape<S> t;
  auto out = synthesis_forward(t, m, t.constant(f.values.template cast<S>()), g);
  return patches_to_image<S>(out.value(), 0, f.grid_h, f.grid_w, m.cfg.patch);
}

// ---------------------------------------------------------------- training

template <class S>
pass_output<S> forward_pass(ad::tape<S>& t, codec_model<S>& m, const pass_input<S>& in) {
  const auto& g = in.layout;
  if (static_cast<Index>(in.rate_maps.size()) != g.batch) {
    throw shape_error("forward_pass: one rate map per image required");
  }
  auto x = t.constant(in.patches);
  auto f = analysis_forward(t, m, x, g);
  auto fq = in.quantize ? ad::round_ste(f) : f;
  auto rate = ad::mean_all(m.entropy.token_bits(t, fq));
  auto cond = t.constant(in.cond);
  auto s = encoder_forward(t, m, fq, cond, g);

  const matrix<S> mask = rate_mask<S>(in.rate_maps, m.cfg.rates, m.cfg.token_dim);
  std::vector<Index> symbols;
  for (const auto& mp : in.rate_maps) symbols.push_back(entropy::payload_symbols(mp, m.cfg.rates));
  auto tx = ad::normalize_power_groups(ad::mul(s, t.constant(mask)), g.tokens_per_image(), symbols);

  auto rx = tx;
  if (in.unit_noise.size() > 0) {
    const S sd = static_cast<S>(std::sqrt(channel::noise_variance(in.snr_db) / 2.0));
    rx = ad::add(tx, t.constant(in.unit_noise.cwiseProduct(mask) * sd));
  }
  auto frec = decoder_forward(
      t, m, rx, decoder_side_rows<S>(in.rate_maps, m.cfg.rates, in.snr_db, m.cfg.train_snr_db),
      cond, g);
  auto out = synthesis_forward(t, m, frec, g);
  auto distortion = ad::mse(out, x);
  auto total = in.lambda_rd > 0.0 ? ad::add(distortion, ad::scale(rate, static_cast<S>(in.lambda_rd)))
                                  : distortion;
  return {total, distortion, rate, out};
}

entropy::rate_index_map rate_map_for_mean(const entropy::entropy_map_t& e,
                                          const entropy::rate_set& rates, double target_mean) {
  auto mean_rate = [&](const entropy::rate_index_map& mp) {
    return static_cast<double>(entropy::payload_symbols(mp, rates)) / static_cast<double>(mp.size());
  };
  double lo = -20.0, hi = 20.0;  // log eta
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mean_rate(entropy::rate_preset_map(e, rates, std::exp(mid))) < target_mean) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  auto a = entropy::rate_preset_map(e, rates, std::exp(lo));
  auto b = entropy::rate_preset_map(e, rates, std::exp(hi));
  return std::abs(mean_rate(a) - target_mean) <= std::abs(mean_rate(b) - target_mean) ? a : b;
}

template <class S>
codec_trainer<S>::codec_trainer(codec_model<S>& model, train_config cfg)
    : model_(model), cfg_(cfg) {
  nn::adam_config<S> ac;
  ac.learning_rate = static_cast<S>(cfg_.learning_rate);
  ac.clip_norm = S(1);
  opt_ = nn::adam<S>(model_.params(), ac);
}

template <class S>
std::vector<entropy::rate_index_map> codec_trainer<S>::sample_rate_maps(
    const matrix<S>& token_bits, const ad::grid_layout& g, rng_stream& rng) {
  const auto& rates = model_.cfg.rates;
  std::vector<entropy::rate_index_map> maps;
  for (Index b = 0; b < g.batch; ++b) {
    entropy::entropy_map_t e(g.height, g.width);
    for (Index y = 0; y < g.height; ++y) {
      for (Index x = 0; x < g.width; ++x) {
        e(y, x) = static_cast<double>(token_bits(0, b * g.tokens_per_image() + y * g.width + x));
      }
    }
    entropy::rate_index_map mp;
    if (rng.uniform() < cfg_.uniform_rate_prob) {
      const int k = 1 + static_cast<int>(rng.below(rates.size() - 1));
      mp = entropy::rate_index_map::Constant(g.height, g.width, k);
    } else {
      const double lo = rates.size() > 1 ? rates[1] : rates[0];
      const double hi = 0.75 * rates.max_rate();
      mp = rate_map_for_mean(e, rates, lo + rng.uniform() * (hi - lo));
      if (rng.uniform() < cfg_.offset_prob) {
        const int offset = static_cast<int>(rng.below(5)) - 2;
        mp = entropy::offset_rate_map(mp, offset, rates);
      }
    }
    maps.push_back(std::move(mp));
  }
  return maps;
}

template <class S>
train_stats codec_trainer<S>::train_step(std::span<const image> batch, const matrix<S>& cond) {
  if (batch.empty()) throw invalid_argument("train_step: empty batch");
  if (cond.cols() != static_cast<Index>(batch.size()) || cond.rows() != model_.cfg.cond_dim) {
    throw shape_error("train_step: conditioning must be (cond_dim x batch)");
  }
  rng_stream rng(cfg_.seed, {0x7A11, static_cast<std::uint64_t>(steps_)});
  pass_input<S> in;
  in.layout = layout_for(batch[0], model_.cfg.patch, static_cast<Index>(batch.size()));
  in.patches = images_to_patches<S>(batch, model_.cfg.patch);
  in.cond = cond;
  in.lambda_rd = cfg_.lambda_rd;
  in.quantize = cfg_.quantize;
  in.snr_db = cfg_.train_snr_db + cfg_.snr_jitter_db * (2.0 * rng.uniform() - 1.0);
  if (!cfg_.noiseless) {
    in.unit_noise.resize(model_.cfg.token_dim, in.layout.tokens());
    for (Index i = 0; i < in.unit_noise.size(); ++i) {
      in.unit_noise.data()[i] = static_cast<S>(rng.normal());
    }
  }

  // Rate maps come from the current entropy estimate; a no-grad pass keeps
  // the sampled maps out of the differentiated graph.
  {
    ad::tape<S> probe;
    auto f = analysis_forward(probe, model_, probe.constant(in.patches), in.layout);
    auto fq = cfg_.quantize ? ad::round_ste(f) : f;
    auto bits = model_.entropy.token_bits(probe, fq);
    in.rate_maps = sample_rate_maps(bits.value(), in.layout, rng);
  }

  const double progress = cfg_.total_steps > 0
                              ? std::min(1.0, static_cast<double>(steps_) / cfg_.total_steps)
                              : 0.0;
  const double lr = cfg_.learning_rate *
                    std::pow(cfg_.final_learning_rate / cfg_.learning_rate, progress);
  opt_.set_learning_rate(static_cast<S>(lr));

  ad::tape<S> t;
  auto out = forward_pass(t, model_, in);
  const double total = static_cast<double>(out.total.value()(0, 0));
  if (!std::isfinite(total)) {
    throw numeric_error("train_step: non-finite loss at step " + std::to_string(steps_));
  }
  opt_.zero_grad();
  t.backward(out.total);
  opt_.step();
  ++steps_;
  return {static_cast<double>(out.distortion.value()(0, 0)),
          static_cast<double>(out.rate.value()(0, 0)), total};
}

// ---------------------------------------------------------------- checkpoints

namespace {
constexpr std::string_view checkpoint_magic = "AKBCODEC";
}

void save_checkpoint(const std::string& path, codec_model<float>& m, const checkpoint_meta& meta) {
  nlohmann::json header;
  header["codec"] = m.cfg;
  header["root_seed"] = meta.root_seed;
  header["steps"] = meta.steps;
  header["lambda_rd"] = meta.lambda_rd;
  header["extra"] = meta.extra;
  const std::string text = header.dump();
  std::vector<std::uint8_t> buf;
  io::put_bytes(buf, checkpoint_magic);
  io::put_u32(buf, static_cast<std::uint32_t>(text.size()));
  io::put_bytes(buf, text);
  std::ostringstream params;
  nn::write_params(params, m.params());
  io::put_bytes(buf, params.str());
  io::write_file(path, buf);
}

codec_model<float> load_checkpoint(const std::string& path, checkpoint_meta* meta) {
  const auto buf = io::read_file(path);
  io::reader r(buf);
  if (r.bytes(checkpoint_magic.size(), "magic") != checkpoint_magic) {
    throw corrupt_file_error("'" + path + "' is not a codec checkpoint", 0);
  }
  const auto len = r.u32("header length");
  const auto text = r.bytes(len, "header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw corrupt_file_error(std::string("bad checkpoint header: ") + e.what(), 12);
  }
  codec_model<float> m(header.at("codec").get<codec_config>(), 0);
  std::istringstream params(std::string(buf.begin() + static_cast<long>(r.offset()), buf.end()));
  nn::read_params(params, m.params());
  if (meta != nullptr) {
    meta->root_seed = header.at("root_seed").get<std::uint64_t>();
    meta->steps = header.at("steps").get<long>();
    meta->lambda_rd = header.at("lambda_rd").get<double>();
    meta->extra = header.value("extra", nlohmann::json::object());
  }
  return m;
}

std::string checkpoint_hash(const std::string& path) {
  const auto buf = io::read_file(path);
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a64(buf)));
  return hex;
}

// ---------------------------------------------------------------- instantiations

#define AKB_CODEC_INSTANTIATE(S)                                                                  \
  template struct codec_model<S>;                                                                 \
  template matrix<S> images_to_patches<S>(std::span<const image>, int);                           \
  template image patches_to_image<S>(const matrix<S>&, Index, int, int, int);                     \
  template ad::var<S> analysis_forward<S>(ad::tape<S>&, codec_model<S>&, const ad::var<S>&,       \
                                          const ad::grid_layout&);                                \
  template ad::var<S> encoder_forward<S>(ad::tape<S>&, codec_model<S>&, const ad::var<S>&,        \
                                         const ad::var<S>&, const ad::grid_layout&);              \
  template ad::var<S> decoder_forward<S>(ad::tape<S>&, codec_model<S>&, const ad::var<S>&,        \
                                         const matrix<S>&, const ad::var<S>&,                     \
                                         const ad::grid_layout&);                                 \
  template ad::var<S> synthesis_forward<S>(ad::tape<S>&, codec_model<S>&, const ad::var<S>&,      \
                                           const ad::grid_layout&);                               \
  template matrix<S> rate_mask<S>(const std::vector<entropy::rate_index_map>&,                    \
                                  const entropy::rate_set&, int);                                 \
  template matrix<S> decoder_side_rows<S>(const std::vector<entropy::rate_index_map>&,            \
                                          const entropy::rate_set&, double, double);              \
  template feature_map analysis<S>(const image&, codec_model<S>&);                                \
  template entropy::entropy_map_t compute_entropy_map<S>(const feature_map&, codec_model<S>&);    \
  template symbol_frame jscc_encode<S>(const feature_map&, const entropy::rate_index_map&,        \
                                       const Eigen::VectorXd&, codec_model<S>&, const side_info&, \
                                       bool);                                                     \
  template feature_map jscc_decode<S>(const symbol_frame&, const channel::channel_spec&,          \
                                      const Eigen::VectorXd&, codec_model<S>&);                   \
  template image synthesis<S>(const feature_map&, codec_model<S>&);                               \
  template pass_output<S> forward_pass<S>(ad::tape<S>&, codec_model<S>&, const pass_input<S>&);   \
  template class codec_trainer<S>;

AKB_CODEC_INSTANTIATE(float)
AKB_CODEC_INSTANTIATE(double)

}  // namespace akb::codec
