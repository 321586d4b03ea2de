#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "akb/autodiff.hpp"
#include "akb/channel.hpp"
#include "akb/entropy_model.hpp"
#include "akb/link.hpp"
#include "akb/nn.hpp"
#include "akb/rng.hpp"

namespace akb::ckb {

/// Global rate-index offsets an action can apply.
inline constexpr std::array<int, 5> offsets{-2, -1, 0, 1, 2};
inline constexpr int num_actions = static_cast<int>(offsets.size());
inline constexpr int neutral_action = 2;

enum class action_mode { global, region4x4 };
std::string to_string(action_mode m);
action_mode action_mode_from_string(const std::string& s);

struct ppo_config {
  double clip_eps = 0.2;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  int epochs = 4;
  int minibatch = 32;
  double learning_rate = 3e-4;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;
  double alpha = 1.0;
  double beta = 1.0;
  int steps_per_update = 128;
  /// State normalisers and reward window.
  double e_norm = 32.0;
  double snr_norm_db = 20.0;
  double psnr_floor_db = 20.0;
  double psnr_span_db = 20.0;
  double cbr_scale = 0.06;
  int trunk_channels = 16;
  action_mode mode = action_mode::global;

  void validate() const;
};

void to_json(nlohmann::json& j, const ppo_config& c);
void from_json(const nlohmann::json& j, ppo_config& c);

/// 3 x tokens: normalised entropy, normalised SNR, previous action index / 4.
struct rl_state {
  int grid_h = 0;
  int grid_w = 0;
  Eigen::MatrixXd values;
};

/// One index per image (global) or per region (region4x4, row-major).
using action = std::vector<int>;

int regions_for(action_mode m);
/// Region of token (y, x) on an h x w grid in region4x4 mode.
int region_of(int y, int x, int h, int w);

rl_state build_state(const entropy::entropy_map_t& e, const channel::channel_spec& spec,
                     const action& prev, action_mode mode, const ppo_config& cfg);
action neutral(action_mode mode);

entropy::rate_index_map apply_action(const entropy::rate_index_map& rm, const action& a,
                                     action_mode mode, const entropy::rate_set& rates);

double reward(double psnr_db, double cbr_value, const ppo_config& cfg);

struct gae_result {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// `bootstrap` is the value after the last step (ignored when it is terminal).
gae_result gae(const std::vector<double>& rewards, const std::vector<double>& values,
               const std::vector<bool>& terminal, double bootstrap, double gamma, double lambda);

/// Zero mean, unit (population) variance; eps guards the division.
std::vector<double> normalize_advantages(const std::vector<double>& a, double eps = 1e-8);

/// Conv trunk + global (or 4x4 regional) pooling, actor and critic heads.
template <class S>
struct agent_network {
  action_mode mode = action_mode::global;
  nn::grid_conv<S> conv1;
  nn::grid_conv<S> conv2;
  nn::dense<S> actor;
  nn::dense<S> critic;

  agent_network() = default;
  agent_network(int channels, action_mode m, std::uint64_t seed);

  nn::param_list<S> params();

  struct outputs {
    ad::var<S> log_probs;  // num_actions x (B * regions)
    ad::var<S> values;     // 1 x B
  };
  /// `states` holds B states of identical grid size.
  outputs forward(ad::tape<S>& t, const std::vector<const rl_state*>& states);
};

struct policy_output {
  action a;
  double log_prob = 0.0;
  double value = 0.0;
  /// num_actions x regions.
  Eigen::MatrixXd probs;
};

/// Samples from the policy with `rng`, or takes the argmax when rng is null.
policy_output policy_step(const rl_state& s, agent_network<double>& net, rng_stream* rng);

/// Log-probability of `a` under the current policy.
double log_prob_of(const rl_state& s, const action& a, agent_network<double>& net);

struct rollout {
  std::vector<rl_state> states;
  std::vector<action> actions;
  std::vector<double> log_probs;
  std::vector<double> values;
  std::vector<double> rewards;
  std::vector<bool> terminal;

  std::size_t size() const { return states.size(); }
  void clear();
};

struct ppo_terms {
  ad::var<double> total;
  double policy_objective = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
};

/// Loss on a batch: -clip objective + value_coef * mse - entropy_coef * entropy.
ppo_terms ppo_loss(ad::tape<double>& t, agent_network<double>& net, const rollout& buf,
                   const std::vector<std::size_t>& idx, const std::vector<double>& advantages,
                   const std::vector<double>& returns, const ppo_config& cfg);

struct update_stats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double advantage_mean = 0.0;
  double advantage_var = 0.0;
  bool aborted = false;
  std::string abort_reason;
};

class ppo_trainer {
 public:
  ppo_trainer(agent_network<double>& net, ppo_config cfg, std::uint64_t seed);
  update_stats update(const rollout& buf, double bootstrap = 0.0);
  const ppo_config& config() const { return cfg_; }

 private:
  agent_network<double>& net_;
  ppo_config cfg_;
  nn::adam<double> opt_;
  std::uint64_t seed_;
  long updates_ = 0;
};

// ----------------------------------------------------------- environment

/// Frozen-codec environment: one episode is one image transmission.
class link_env {
 public:
  link_env(codec::codec_model<float>& codec, link::source_context ctx, std::vector<image> images,
           double eta, std::vector<double> snr_choices_db);

  struct step_result {
    rl_state state;
    policy_output policy;
    link::transmission tx;
    double reward = 0.0;
    double snr_db = 0.0;
    std::size_t image_index = 0;
  };

  /// Episode `episode` draws its image, SNR, policy sample and channel noise
  /// from streams keyed by (seed, episode).
  step_result run_episode(agent_network<double>& net, const ppo_config& cfg, std::uint64_t seed,
                          std::uint64_t episode, bool deterministic);

  std::size_t size() const { return prepared_.size(); }
  const link::prepared_image& prepared(std::size_t i) const { return prepared_[i]; }
  entropy::rate_index_map preset(std::size_t i) const;
  codec::codec_model<float>& codec() { return codec_; }
  const link::source_context& context() const { return ctx_; }

 private:
  codec::codec_model<float>& codec_;
  link::source_context ctx_;
  std::vector<link::prepared_image> prepared_;
  double eta_;
  std::vector<double> snr_choices_;
};

struct training_log {
  std::vector<update_stats> updates;
  std::vector<double> mean_reward;
  std::vector<double> mean_offset;
};

training_log train_agent(link_env& env, agent_network<double>& net, const ppo_config& cfg,
                         long episodes, std::uint64_t seed);

/// Layout: "AKBAGENT", u32 header length, JSON header {ppo, codec_hash,
/// extra}, then the parameter blob.
void save_agent(const std::string& path, agent_network<double>& net, const ppo_config& cfg,
                const std::string& codec_hash);
struct loaded_agent {
  agent_network<double> net;
  ppo_config cfg;
  std::string codec_hash;
  std::optional<std::string> warning;
};
loaded_agent load_agent(const std::string& path, const std::string& expected_codec_hash);

}  // namespace akb::ckb
