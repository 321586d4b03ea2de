#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "akb/baseline.hpp"
#include "akb/channel_kb.hpp"
#include "akb/codec.hpp"
#include "akb/config.hpp"
#include "akb/image.hpp"
#include "akb/link.hpp"
#include "akb/source_kb.hpp"

namespace akb::harness {

/// Progress and warning sink; the CLI points it at stderr.
using log_fn = std::function<void(const std::string&)>;
void log_to_stderr(const std::string& msg);

// ---------------------------------------------------------------- dataset

enum class split_kind { train, test, unused, skipped };
std::string to_string(split_kind s);
split_kind split_from_string(const std::string& s);

struct manifest_entry {
  std::string id;
  std::string path;
  split_kind split = split_kind::unused;
  /// Why a skipped file was skipped.
  std::string reason;
};

struct split_manifest {
  std::string dataset_dir;
  int crop = 0;
  std::uint64_t seed = 0;
  /// Sorted by id, then shuffled with `seed`; skipped files trail.
  std::vector<manifest_entry> entries;

  std::vector<const manifest_entry*> of(split_kind s) const;
};

struct split_rule {
  double train_fraction = 0.8;
  std::optional<long> train_count;
  std::optional<long> test_count;
};

/// (train, test) sizes for n usable images; the remainder is unused.
std::pair<long, long> split_sizes(long n, const split_rule& rule);

/// Center crop to the largest square, then area-average down (or
/// nearest-sample up) to size x size.
image square_resize(const image& img, int size);

/// Scans `dir` (non-recursive) for .png/.jpg/.jpeg files. Files that fail
/// to decode are skipped with a warning and listed in the manifest.
split_manifest ingest(const std::string& dir, int crop, std::uint64_t seed, const split_rule& rule,
                      const log_fn& log = log_to_stderr);

nlohmann::json to_json(const split_manifest& m);
split_manifest manifest_from_json(const nlohmann::json& j);
void save_manifest(const split_manifest& m, const std::string& path);
split_manifest load_manifest(const std::string& path);

/// Decoded, square-resized images of one split, in manifest order.
std::vector<image> load_split(const split_manifest& m, split_kind s);

/// Writes `count` synthetic PNG scenes unless the directory already holds
/// the same set (tracked by a marker file).
void ensure_synthetic(const std::string& dir, const synthetic_spec& spec, const log_fn& log = log_to_stderr);

/// Synthetic data (if configured), ingest, and manifest under output_dir.
split_manifest prepare_dataset(const experiment_config& cfg, const log_fn& log = log_to_stderr);

// --------------------------------------------------------------- training

std::unique_ptr<kb::provider> make_provider(const kb_config& k);

/// Source KB over the training split's captions.
kb::kb_store build_kb(const experiment_config& cfg, const std::vector<image>& train,
                      const split_manifest& m, kb::provider& p, const log_fn& log = log_to_stderr);

/// Transmitter-side conditioning vectors (cond_dim x N) for training.
Eigen::MatrixXf conditioning_matrix(const std::vector<image>& imgs, const kb::kb_store& store,
                                    kb::provider& p, const std::string& prompt);

codec::codec_model<float> train_codec(const experiment_config& cfg, const std::vector<image>& train,
                                      const Eigen::MatrixXf& cond, const log_fn& log = log_to_stderr);

/// Full pipeline behind `akb train-codec`: dataset, KB, codec; writes the
/// KB file and codec checkpoint.
void train_codec_command(const experiment_config& cfg, const log_fn& log = log_to_stderr);

/// Behind `akb train-agent`: loads codec and KB, calibrates eta, trains PPO
/// on the training split and writes the agent checkpoint.
ckb::training_log train_agent_command(const experiment_config& cfg, const log_fn& log = log_to_stderr);

// ------------------------------------------------------------- evaluation

/// Rate knob: eta for the learned variable-rate schemes, uniform index for
/// fixed_rate_jscc, quality for jpeg_ldpc.
struct knob {
  double eta = 0.5;
  int fixed_index = 0;
  int jpeg_quality = 50;
};

/// Loaded models and prepared test images shared by eval / sweep / ablate.
class evaluator {
 public:
  /// Loads what `schemes` need; missing checkpoints raise config_error
  /// naming the scheme.
  evaluator(const experiment_config& cfg, std::vector<image> test, const std::vector<scheme>& schemes,
            const log_fn& log = log_to_stderr);

  /// In-memory models, for tests and the acceptance run. `agent` may be null.
  evaluator(const experiment_config& cfg, std::vector<image> test,
            std::shared_ptr<codec::codec_model<float>> codec, std::shared_ptr<kb::kb_store> store,
            std::shared_ptr<ckb::agent_network<double>> agent);

  struct per_image {
    double psnr_db = 0.0;
    long symbols = 0;  // payload + side
    long source_symbols = 0;
    double snr_db = 0.0;
  };

  /// SNR per image: `snr_db` or, when `random_snr`, a draw from
  /// eval.snr_list keyed by (seed, image).
  std::vector<per_image> run(scheme s, const knob& k, double snr_db, bool random_snr = false) const;

  /// Mean CBR without running the channel (symbol counts only).
  double mean_cbr(scheme s, const knob& k, double snr_db) const;

  /// Knob hitting the target mean CBR: eta bisection, nearest uniform index,
  /// or nearest JPEG quality.
  knob calibrate(scheme s, double cbr_target, double snr_db, int max_probes = 40,
                 double tolerance = 0.0, bool* reached = nullptr, int* probes = nullptr) const;

  /// Symbols and rate map the transmitter would use.
  entropy::rate_index_map rate_map(scheme s, std::size_t i, const knob& k, double snr_db) const;

  /// Replaces the agent (null removes it).
  void set_agent(std::shared_ptr<ckb::agent_network<double>> agent) { agent_ = std::move(agent); }

  std::size_t size() const { return test_.size(); }
  const experiment_config& config() const { return cfg_; }
  const link::prepared_image& prepared(std::size_t i) const { return prepared_[i]; }
  codec::codec_model<float>& codec() const { return *codec_; }
  void set_workers(int w) { workers_ = w < 1 ? 1 : w; }

 private:
  void prepare_all();
  double snr_for(std::size_t i, double snr_db, bool random_snr) const;
  per_image run_one(scheme s, std::size_t i, const knob& k, double snr_db) const;
  long jpeg_symbols(std::size_t i, int quality) const;
  void require(scheme s) const;

  experiment_config cfg_;
  std::vector<image> test_;
  std::shared_ptr<codec::codec_model<float>> codec_;
  std::shared_ptr<kb::kb_store> store_;
  std::shared_ptr<ckb::agent_network<double>> agent_;
  std::unique_ptr<kb::provider> provider_;
  std::shared_ptr<classic::ldpc_code> ldpc_;
  link::source_context ctx_;
  std::vector<link::prepared_image> prepared_;
  int workers_ = 1;
};

struct cell {
  std::string scheme;
  std::string snr;  // number, or "random"
  double cbr_mean = 0.0;
  double psnr_mean = 0.0;
  double psnr_std = 0.0;
  long n_images = 0;
  std::uint64_t seed = 0;
};

/// CBR from summed symbol counts; population standard deviation of PSNR.
cell summarize(const std::string& scheme_name, const std::string& snr,
               const std::vector<evaluator::per_image>& r, std::uint64_t seed);

std::string format_snr(double snr_db);

inline constexpr const char* eval_header = "scheme,snr_db,cbr_mean,psnr_mean,psnr_std,n_images,seed";
std::string eval_row(const cell& c);

/// Knobs per scheme at the configured targets (learned: cbr_target,
/// JPEG: jpeg_cbr_target or fixed quality) calibrated at the training SNR.
knob default_knob(const evaluator& ev, scheme s);

/// One row per (scheme, snr) in config order.
std::vector<cell> run_eval(const evaluator& ev, const log_fn& log = log_to_stderr);
std::string eval_csv(const std::vector<cell>& cells);

struct sweep_row {
  cell c;
  double cbr_target = 0.0;
  int probes = 0;
  bool reachable = true;
};
inline constexpr const char* sweep_header =
    "scheme,snr_db,cbr_target,cbr_mean,psnr_mean,psnr_std,n_images,seed,probes,status";
std::vector<sweep_row> run_sweep(const evaluator& ev, const log_fn& log = log_to_stderr);
std::string sweep_csv(const std::vector<sweep_row>& rows);

struct ablate_row {
  cell c;
  double delta_vs_no_ckb = 0.0;
};
inline constexpr const char* ablate_header =
    "scheme,snr_db,cbr_mean,psnr_mean,psnr_std,n_images,seed,delta_psnr_vs_no_ckb";
/// akb_jscc, akb_jscc_no_ckb and fixed_rate_jscc over snr_list plus a
/// randomized-SNR row each.
std::vector<ablate_row> run_ablate(const evaluator& ev, const log_fn& log = log_to_stderr);
std::string ablate_csv(const std::vector<ablate_row>& rows);

/// Run metadata written next to every report.
nlohmann::json run_meta(const experiment_config& cfg, const std::string& command);

// -------------------------------------------------------------- plot data

struct series {
  std::string name;  // <scheme>_<axis>
  std::vector<std::pair<double, double>> points;
};

/// Series from report CSVs: eval/ablate rows give <scheme>_snr (x = snr_db),
/// sweep rows give <scheme>_cbr (x = cbr_mean); y is psnr_mean. Rows with a
/// non-numeric snr or an unreachable status are left out.
std::vector<series> plot_series(const std::vector<std::string>& csv_paths);
/// Writes one `x,y` file per series into `dir`; returns the paths.
std::vector<std::string> emit_plotdata(const std::vector<std::string>& csv_paths, const std::string& dir);

}  // namespace akb::harness
