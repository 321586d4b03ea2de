#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "akb/channel_kb.hpp"
#include "akb/codec.hpp"

namespace akb::codec {
void to_json(nlohmann::json& j, const train_config& c);
}

namespace akb::harness {

enum class scheme { akb_jscc, akb_jscc_no_ckb, fixed_rate_jscc, jpeg_ldpc };
std::string to_string(scheme s);
scheme scheme_from_string(const std::string& s);
bool is_learned(scheme s);

struct synthetic_spec {
  std::uint64_t seed = 2024;
  long count = 100;
  int size = 64;
};

struct dataset_config {
  /// Image directory. With `synthetic` set it is filled on first use.
  std::string path;
  std::optional<synthetic_spec> synthetic;
  int crop = 64;
  /// Either explicit counts or a train fraction (rest is test).
  std::optional<long> train_count;
  std::optional<long> test_count;
  double train_fraction = 0.8;
  std::uint64_t split_seed = 7;
};

struct kb_config {
  std::string provider = "stub";  // "stub" | "http"
  std::string provider_url;
  int kb_dim = 512;
  std::string prompt = "Describe the scene in one sentence.";
  int timeout_ms = 5000;
  int retries = 3;
  int backoff_ms = 200;
  bool fallback_to_stub = false;
};

struct agent_config {
  ckb::ppo_config ppo;
  long episodes = 2000;
  std::vector<double> snr_choices_db{0, 2, 4, 6, 8, 10, 12, 14};
};

struct eval_config {
  std::vector<scheme> schemes{scheme::akb_jscc, scheme::akb_jscc_no_ckb, scheme::fixed_rate_jscc,
                              scheme::jpeg_ldpc};
  std::vector<double> snr_list{0, 2, 4, 6, 8, 10, 12, 14};
  /// Mean CBR the learned schemes are calibrated to (through eta).
  double cbr_target = 0.03;
  /// Mean CBR the JPEG quality is calibrated to.
  double jpeg_cbr_target = 0.035;
  /// Uniform rate index for fixed_rate_jscc; -1 selects |rates| / 2.
  int fixed_rate_index = -1;
  /// Fixed JPEG quality instead of calibration.
  std::optional<int> jpeg_quality;
};

struct sweep_config {
  std::vector<double> cbr_targets{0.01, 0.02, 0.03, 0.04, 0.05};
  double snr_db = 10.0;
  double tolerance = 0.05;
  int max_probes = 12;
};

struct baseline_config {
  /// Empty selects the shipped fixture.
  std::string ldpc_fixture;
  int max_iters = 50;
};

struct experiment_config {
  /// Directory relative paths are resolved against (the config file's).
  std::string base_dir = ".";
  std::string output_dir = "runs/default";
  dataset_config dataset;
  codec::codec_config codec;
  codec::train_config train;
  kb_config kb;
  agent_config agent;
  eval_config eval;
  sweep_config sweep;
  baseline_config baseline;
  std::uint64_t seed = 1;
  /// Explicit checkpoint paths; empty selects files under output_dir.
  std::string codec_checkpoint;
  std::string agent_checkpoint;
  std::string kb_file;

  std::string resolve(const std::string& p) const;
  std::string out(const std::string& name) const;
  std::string codec_path() const;
  std::string agent_path() const;
  std::string kb_path() const;
  std::string ldpc_path() const;
  int fixed_rate_index() const;
  void validate() const;
};

/// Unknown keys anywhere are an error; missing keys keep their defaults.
experiment_config parse_config(const nlohmann::json& j, const std::string& base_dir = ".");
experiment_config load_config(const std::string& path);
nlohmann::json to_json(const experiment_config& c);
/// Stable hash of the canonical JSON (hex).
std::string config_hash(const experiment_config& c);

/// Directory holding the shipped data fixtures.
std::string data_dir();

}  // namespace akb::harness
