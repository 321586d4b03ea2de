#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "akb/channel.hpp"
#include "akb/entropy_model.hpp"
#include "akb/feature_map.hpp"
#include "akb/image.hpp"
#include "akb/nn.hpp"

namespace akb::codec {

using ad::matrix;

enum class backbone_kind { conv, window_attention };

std::string to_string(backbone_kind b);
backbone_kind backbone_from_string(const std::string& s);

struct codec_config {
  /// Pixels per token edge.
  int patch = 16;
  /// Feature depth; also the encoder's real output width per token, so it
  /// must hold 2 * max_rate real values.
  int token_dim = 64;
  int hidden = 128;
  int entropy_hidden = 8;
  int cond_dim = 512;
  /// Token-mixing residual blocks per transform.
  int blocks = 1;
  backbone_kind backbone = backbone_kind::conv;
  entropy::rate_set rates;
  double eta = 0.5;
  /// SNR the model was trained at; the decoder's SNR input is centred here.
  double train_snr_db = 10.0;

  void validate() const;
  int patch_values() const { return patch * patch * image::channels; }
};

void to_json(nlohmann::json& j, const codec_config& c);
void from_json(const nlohmann::json& j, codec_config& c);

/// Charged side information: the source-KB index bits.
struct side_info {
  std::vector<std::uint8_t> bits;
  long symbols = 0;
};

/// One transmission unit: payload symbols plus what the receiver gets over
/// the error-free side channel.
struct symbol_frame {
  channel::symbol_block payload;
  entropy::rate_index_map rate_map;
  std::vector<std::uint8_t> side_bits;
  int grid_h = 0;
  int grid_w = 0;
  long kb_side_symbols = 0;
  long rate_map_side_symbols = 0;

  long side_symbols() const { return kb_side_symbols + rate_map_side_symbols; }
  long total_symbols() const { return static_cast<long>(payload.size()) + side_symbols(); }
};

/// Symbols needed to signal a rate map: ceil(index_bits * tokens / 2).
long rate_map_side_symbols(const entropy::rate_set& rates, long tokens);

template <class S>
struct codec_model {
  codec_config cfg;

  nn::dense<S> analysis_in;
  std::vector<nn::mixing_block<S>> analysis_mix;
  nn::dense<S> analysis_out;

  entropy::entropy_model<S> entropy;

  nn::dense<S> enc_in;
  nn::film<S> enc_film;
  std::vector<nn::mixing_block<S>> enc_mix;
  nn::dense<S> enc_out;

  nn::dense<S> dec_in;
  nn::film<S> dec_film;
  std::vector<nn::mixing_block<S>> dec_mix;
  nn::dense<S> dec_out;

  nn::dense<S> syn_in;
  std::vector<nn::mixing_block<S>> syn_mix;
  nn::dense<S> syn_out;

  codec_model() = default;
  codec_model(const codec_config& c, std::uint64_t seed);

  nn::param_list<S> params();
};

// ------------------------------------------------------------------ stages

template <class S>
matrix<S> images_to_patches(std::span<const image> images, int patch);

/// Rebuilds one image from columns [first, first + tokens) of a patch matrix.
template <class S>
image patches_to_image(const matrix<S>& patches, Eigen::Index first, int grid_h, int grid_w,
                       int patch);

ad::grid_layout layout_for(const image& img, int patch, Eigen::Index batch = 1);

template <class S>
ad::var<S> analysis_forward(ad::tape<S>& t, codec_model<S>& m, const ad::var<S>& patches,
                            const ad::grid_layout& g);

/// Learned JSCC encoder over quantised features, modulated by the
/// per-image conditioning vectors (cond_dim x B).
template <class S>
ad::var<S> encoder_forward(ad::tape<S>& t, codec_model<S>& m, const ad::var<S>& features,
                           const ad::var<S>& cond, const ad::grid_layout& g);

/// Decoder over zero-filled received values plus two side rows: the
/// token's rate fraction and the centred SNR.
template <class S>
ad::var<S> decoder_forward(ad::tape<S>& t, codec_model<S>& m, const ad::var<S>& received,
                           const matrix<S>& side_rows, const ad::var<S>& cond,
                           const ad::grid_layout& g);

template <class S>
ad::var<S> synthesis_forward(ad::tape<S>& t, codec_model<S>& m, const ad::var<S>& features,
                             const ad::grid_layout& g);

/// Mask with the first 2*rate rows set per token; columns follow `maps`
/// (one rate map per image, concatenated).
template <class S>
matrix<S> rate_mask(const std::vector<entropy::rate_index_map>& maps,
                    const entropy::rate_set& rates, int depth);

template <class S>
matrix<S> decoder_side_rows(const std::vector<entropy::rate_index_map>& maps,
                            const entropy::rate_set& rates, double snr_db, double train_snr_db);

// -------------------------------------------------------------- inference ops

template <class S>
feature_map analysis(const image& img, codec_model<S>& m);

/// Entropy map of the rounded features under the learned Gaussian model.
template <class S>
entropy::entropy_map_t compute_entropy_map(const feature_map& f, codec_model<S>& m);

template <class S>
symbol_frame jscc_encode(const feature_map& f, const entropy::rate_index_map& rm,
                         const Eigen::VectorXd& cond, codec_model<S>& m, const side_info& kb,
                         bool charge_rate_map);

template <class S>
feature_map jscc_decode(const symbol_frame& received, const channel::channel_spec& spec,
                        const Eigen::VectorXd& cond, codec_model<S>& m);

template <class S>
image synthesis(const feature_map& f, codec_model<S>& m);

// ---------------------------------------------------------------- training

struct train_config {
  double lambda_rd = 1e-4;
  double train_snr_db = 10.0;
  /// Half-width of uniform SNR jitter around train_snr_db (0 = single SNR).
  double snr_jitter_db = 0.0;
  double learning_rate = 1e-3;
  double final_learning_rate = 1e-4;
  long total_steps = 20000;
  int batch_size = 8;
  /// Share of images trained with a uniform random rate map.
  double uniform_rate_prob = 0.25;
  /// Share of entropy-driven maps that get a random global offset.
  double offset_prob = 0.5;
  bool quantize = true;
  bool noiseless = false;
  std::uint64_t seed = 1;
};

struct train_stats {
  double distortion = 0.0;
  double rate = 0.0;
  double total = 0.0;
};

/// Everything one differentiable pass needs besides the model.
template <class S>
struct pass_input {
  matrix<S> patches;
  matrix<S> cond;
  ad::grid_layout layout;
  std::vector<entropy::rate_index_map> rate_maps;
  /// Unit-variance noise per real element (scaled by the SNR inside).
  matrix<S> unit_noise;
  double snr_db = 10.0;
  double lambda_rd = 0.0;
  bool quantize = true;
};

template <class S>
struct pass_output {
  ad::var<S> total;
  ad::var<S> distortion;
  ad::var<S> rate;
  ad::var<S> reconstruction;
};

/// Full differentiable pass: analysis -> entropy -> encode -> mask ->
/// power normalise -> AWGN -> decode -> synthesis -> loss.
template <class S>
pass_output<S> forward_pass(ad::tape<S>& t, codec_model<S>& m, const pass_input<S>& in);

template <class S>
class codec_trainer {
 public:
  codec_trainer(codec_model<S>& model, train_config cfg);

  /// One optimiser step on the batch; `cond` holds one conditioning column
  /// per image.
  train_stats train_step(std::span<const image> batch, const matrix<S>& cond);

  long steps() const { return steps_; }
  const train_config& config() const { return cfg_; }

 private:
  std::vector<entropy::rate_index_map> sample_rate_maps(const matrix<S>& token_bits,
                                                       const ad::grid_layout& g, rng_stream& rng);

  codec_model<S>& model_;
  train_config cfg_;
  nn::adam<S> opt_;
  long steps_ = 0;
};

/// Scales eta so the map's mean rate is as close as possible to `target`.
entropy::rate_index_map rate_map_for_mean(const entropy::entropy_map_t& e,
                                          const entropy::rate_set& rates, double target_mean);

// ------------------------------------------------------------- checkpoints

struct checkpoint_meta {
  std::uint64_t root_seed = 0;
  long steps = 0;
  double lambda_rd = 0.0;
  nlohmann::json extra = nlohmann::json::object();
};

/// Layout: "AKBCODEC" magic, u32 header length, UTF-8 JSON header
/// (codec config incl. rate set / eta / training SNR, root seed, training
/// metadata), then the parameter blob.
void save_checkpoint(const std::string& path, codec_model<float>& m, const checkpoint_meta& meta);
codec_model<float> load_checkpoint(const std::string& path, checkpoint_meta* meta = nullptr);
/// FNV-1a hash of the checkpoint bytes, hex encoded.
std::string checkpoint_hash(const std::string& path);

}  // namespace akb::codec
