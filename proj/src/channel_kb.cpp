#include "akb/channel_kb.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "akb/binary_io.hpp"
#include "akb/error.hpp"

namespace akb::ckb {

using Eigen::Index;
using nlohmann::json;

std::string to_string(action_mode m) { return m == action_mode::global ? "global" : "region4x4"; }

action_mode action_mode_from_string(const std::string& s) {
  if (s == "global") return action_mode::global;
  if (s == "region4x4") return action_mode::region4x4;
  throw config_error("unknown action_mode '" + s + "' (expected global or region4x4)");
}

void ppo_config::validate() const {
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw config_error("ppo: clip epsilon must be in (0, 1)");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw config_error("ppo: gamma must be in [0, 1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw config_error("ppo: lambda must be in [0, 1]");
  if (epochs < 1 || minibatch < 1 || steps_per_update < minibatch) {
    throw config_error("ppo: need epochs >= 1 and steps_per_update >= minibatch >= 1");
  }
  if (!(learning_rate > 0.0)) throw config_error("ppo: learning rate must be positive");
  if (trunk_channels < 1) throw config_error("ppo: trunk_channels must be positive");
  if (!(e_norm > 0.0 && snr_norm_db > 0.0 && psnr_span_db > 0.0 && cbr_scale > 0.0)) {
    throw config_error("ppo: normalisers must be positive");
  }
}

void to_json(json& j, const ppo_config& c) {
  j = json{{"clip_eps", c.clip_eps},         {"gamma", c.gamma},
           {"gae_lambda", c.gae_lambda},     {"epochs", c.epochs},
           {"minibatch", c.minibatch},       {"learning_rate", c.learning_rate},
           {"entropy_coef", c.entropy_coef}, {"value_coef", c.value_coef},
           {"max_grad_norm", c.max_grad_norm}, {"alpha", c.alpha},
           {"beta", c.beta},                 {"steps_per_update", c.steps_per_update},
           {"e_norm", c.e_norm},             {"snr_norm_db", c.snr_norm_db},
           {"psnr_floor_db", c.psnr_floor_db}, {"psnr_span_db", c.psnr_span_db},
           {"cbr_scale", c.cbr_scale},       {"trunk_channels", c.trunk_channels},
           {"action_mode", to_string(c.mode)}};
}

void from_json(const json& j, ppo_config& c) {
  c.clip_eps = j.at("clip_eps").get<double>();
  c.gamma = j.at("gamma").get<double>();
  c.gae_lambda = j.at("gae_lambda").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.minibatch = j.at("minibatch").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.entropy_coef = j.at("entropy_coef").get<double>();
  c.value_coef = j.at("value_coef").get<double>();
  c.max_grad_norm = j.at("max_grad_norm").get<double>();
  c.alpha = j.at("alpha").get<double>();
  c.beta = j.at("beta").get<double>();
  c.steps_per_update = j.at("steps_per_update").get<int>();
  c.e_norm = j.at("e_norm").get<double>();
  c.snr_norm_db = j.at("snr_norm_db").get<double>();
  c.psnr_floor_db = j.at("psnr_floor_db").get<double>();
  c.psnr_span_db = j.at("psnr_span_db").get<double>();
  c.cbr_scale = j.at("cbr_scale").get<double>();
  c.trunk_channels = j.at("trunk_channels").get<int>();
  c.mode = action_mode_from_string(j.at("action_mode").get<std::string>());
}

// ------------------------------------------------------------------ state

int regions_for(action_mode m) { return m == action_mode::global ? 1 : 16; }

int region_of(int y, int x, int h, int w) { return (y * 4 / h) * 4 + (x * 4 / w); }

action neutral(action_mode mode) { return action(static_cast<std::size_t>(regions_for(mode)), neutral_action); }

namespace {

void check_action(const action& a, action_mode mode) {
  if (static_cast<int>(a.size()) != regions_for(mode)) {
    throw shape_error("action has " + std::to_string(a.size()) + " components, mode " +
                      to_string(mode) + " needs " + std::to_string(regions_for(mode)));
  }
  for (int v : a) {
    if (v < 0 || v >= num_actions) throw invalid_argument("action index " + std::to_string(v) + " out of range");
  }
}

void check_grid(int h, int w, action_mode mode) {
  if (mode == action_mode::region4x4 && (h < 4 || w < 4)) {
    throw shape_error("region4x4 actions need a token grid of at least 4x4");
  }
}

int action_of_token(const action& a, action_mode mode, int y, int x, int h, int w) {
  return mode == action_mode::global ? a[0] : a[static_cast<std::size_t>(region_of(y, x, h, w))];
}

}  // namespace

rl_state build_state(const entropy::entropy_map_t& e, const channel::channel_spec& spec,
                     const action& prev, action_mode mode, const ppo_config& cfg) {
  const int h = static_cast<int>(e.rows()), w = static_cast<int>(e.cols());
  check_grid(h, w, mode);
  check_action(prev, mode);
  rl_state s{h, w, Eigen::MatrixXd(3, static_cast<Index>(h) * w)};
  const auto snr = channel::snr_map(spec, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Index col = static_cast<Index>(y) * w + x;
      s.values(0, col) = e(y, x) / cfg.e_norm;
      s.values(1, col) = snr(y, x) / cfg.snr_norm_db;
      s.values(2, col) = action_of_token(prev, mode, y, x, h, w) / static_cast<double>(num_actions - 1);
    }
  }
  if (!s.values.allFinite()) throw numeric_error("build_state: non-finite state");
  return s;
}

entropy::rate_index_map apply_action(const entropy::rate_index_map& rm, const action& a,
                                     action_mode mode, const entropy::rate_set& rates) {
  check_action(a, mode);
  const int h = static_cast<int>(rm.rows()), w = static_cast<int>(rm.cols());
  check_grid(h, w, mode);
  const int top = static_cast<int>(rates.size()) - 1;
  entropy::rate_index_map out = rm;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (rm(y, x) == 0) continue;  // dropped tokens stay dropped
      const int off = offsets[static_cast<std::size_t>(action_of_token(a, mode, y, x, h, w))];
      out(y, x) = std::clamp(rm(y, x) + off, 0, top);
    }
  }
  return out;
}

double reward(double psnr_db, double cbr_value, const ppo_config& cfg) {
  const double q = std::clamp((psnr_db - cfg.psnr_floor_db) / cfg.psnr_span_db, 0.0, 1.0);
  return cfg.alpha * q - cfg.beta * cbr_value / cfg.cbr_scale;
}

gae_result gae(const std::vector<double>& rewards, const std::vector<double>& values,
               const std::vector<bool>& terminal, double bootstrap, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || terminal.size() != n) throw shape_error("gae: sequence lengths differ");
  gae_result r{std::vector<double>(n), std::vector<double>(n)};
  double next_adv = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const double live = terminal[k] ? 0.0 : 1.0;
    const double next_v = k + 1 < n ? values[k + 1] : bootstrap;
    const double delta = rewards[k] + gamma * next_v * live - values[k];
    next_adv = delta + gamma * lambda * live * next_adv;
    r.advantages[k] = next_adv;
    r.returns[k] = next_adv + values[k];
  }
  return r;
}

std::vector<double> normalize_advantages(const std::vector<double>& a, double eps) {
  if (a.empty()) return {};
  const double mean = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
  double var = 0.0;
  for (double v : a) var += (v - mean) * (v - mean);
  var /= static_cast<double>(a.size());
  const double sd = std::sqrt(var);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (a[i] - mean) / (sd + eps);
  return out;
}

// ---------------------------------------------------------------- network

template <class S>
agent_network<S>::agent_network(int channels, action_mode m, std::uint64_t seed) : mode(m) {
  rng_stream rng(seed, {0xA6E47});
  conv1 = nn::grid_conv<S>("agent.conv1", 3, channels, rng);
  conv2 = nn::grid_conv<S>("agent.conv2", channels, channels, rng);
  // Zero actor head: uniform policy at initialisation.
  actor = nn::dense<S>("agent.actor", channels, num_actions, rng, /*zero=*/true);
  critic = nn::dense<S>("agent.critic", channels, 1, rng, /*zero=*/true);
}

template <class S>
nn::param_list<S> agent_network<S>::params() {
  nn::param_list<S> out;
  conv1.collect(out);
  conv2.collect(out);
  actor.collect(out);
  critic.collect(out);
  return out;
}

template <class S>
typename agent_network<S>::outputs agent_network<S>::forward(ad::tape<S>& t,
                                                             const std::vector<const rl_state*>& states) {
  if (states.empty()) throw invalid_argument("agent forward: empty batch");
  const int h = states[0]->grid_h, w = states[0]->grid_w;
  check_grid(h, w, mode);
  const Index T = static_cast<Index>(h) * w;
  const Index B = static_cast<Index>(states.size());
  const int R = regions_for(mode);
  ad::matrix<S> x(3, B * T);
  for (Index b = 0; b < B; ++b) {
    const auto* s = states[static_cast<std::size_t>(b)];
    if (s->grid_h != h || s->grid_w != w || s->values.rows() != 3) {
      throw shape_error("agent forward: states must share one grid shape with 3 channels");
    }
    x.middleCols(b * T, T) = s->values.template cast<S>();
  }
  const ad::grid_layout g{B, h, w};
  auto h1 = ad::silu(conv1(t, t.constant(x), g));
  auto h2 = ad::silu(conv2(t, h1, g));

  // Pooling as products with constant averaging matrices.
  ad::matrix<S> pool_global = ad::matrix<S>::Zero(B * T, B);
  ad::matrix<S> pool_region = ad::matrix<S>::Zero(B * T, B * R);
  std::vector<int> count(static_cast<std::size_t>(R), 0);
  for (int y = 0; y < h; ++y) {
    for (int xx = 0; xx < w; ++xx) ++count[static_cast<std::size_t>(mode == action_mode::global ? 0 : region_of(y, xx, h, w))];
  }
  for (Index b = 0; b < B; ++b) {
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        const Index col = b * T + static_cast<Index>(y) * w + xx;
        const int r = mode == action_mode::global ? 0 : region_of(y, xx, h, w);
        pool_global(col, b) = S(1) / static_cast<S>(T);
        pool_region(col, b * R + r) = S(1) / static_cast<S>(count[static_cast<std::size_t>(r)]);
      }
    }
  }
  auto pooled = ad::matmul(h2, t.constant(pool_region));
  auto logits = actor(t, pooled);
  if (!logits.value().allFinite()) throw numeric_error("agent: non-finite logits");
  auto values = critic(t, ad::matmul(h2, t.constant(pool_global)));
  return {ad::log_softmax_cols(logits), values};
}

template struct agent_network<float>;
template struct agent_network<double>;

policy_output policy_step(const rl_state& s, agent_network<double>& net, rng_stream* rng) {
  ad::tape<double> t;
  const auto out = net.forward(t, {&s});
  const Eigen::MatrixXd lp = out.log_probs.value();
  policy_output p;
  p.probs = lp.array().exp().matrix();
  p.value = out.values.value()(0, 0);
  for (Index r = 0; r < lp.cols(); ++r) {
    int choice = 0;
    if (rng != nullptr) {
      const double u = rng->uniform();
      double acc = 0.0;
      choice = num_actions - 1;
      for (int k = 0; k < num_actions; ++k) {
        acc += p.probs(k, r);
        if (u < acc) {
          choice = k;
          break;
        }
      }
    } else {
      lp.col(r).maxCoeff(&choice);
    }
    p.a.push_back(choice);
    p.log_prob += lp(choice, r);
  }
  return p;
}

double log_prob_of(const rl_state& s, const action& a, agent_network<double>& net) {
  check_action(a, net.mode);
  ad::tape<double> t;
  const Eigen::MatrixXd lp = net.forward(t, {&s}).log_probs.value();
  double sum = 0.0;
  for (Index r = 0; r < lp.cols(); ++r) sum += lp(a[static_cast<std::size_t>(r)], r);
  return sum;
}

void rollout::clear() {
  states.clear();
  actions.clear();
  log_probs.clear();
  values.clear();
  rewards.clear();
  terminal.clear();
}

// -------------------------------------------------------------------- PPO

ppo_terms ppo_loss(ad::tape<double>& t, agent_network<double>& net, const rollout& buf,
                   const std::vector<std::size_t>& idx, const std::vector<double>& advantages,
                   const std::vector<double>& returns, const ppo_config& cfg) {
  const Index n = static_cast<Index>(idx.size());
  const int R = regions_for(net.mode);
  std::vector<const rl_state*> states;
  std::vector<int> picks;
  Eigen::MatrixXd old(1, n), adv(1, n), ret(1, n);
  for (Index j = 0; j < n; ++j) {
    const auto i = idx[static_cast<std::size_t>(j)];
    states.push_back(&buf.states[i]);
    for (int a : buf.actions[i]) picks.push_back(a);
    old(0, j) = buf.log_probs[i];
    adv(0, j) = advantages[i];
    ret(0, j) = returns[i];
  }
  const auto out = net.forward(t, states);
  Eigen::MatrixXd sum_regions = Eigen::MatrixXd::Zero(n * R, n);
  for (Index j = 0; j < n; ++j) sum_regions.block(j * R, j, R, 1).setOnes();
  auto new_logp = ad::matmul(ad::pick_rows(out.log_probs, picks), t.constant(sum_regions));
  auto objective = ad::ppo_clip_objective(new_logp, old, adv, cfg.clip_eps);
  auto value_loss = ad::mse(out.values, t.constant(ret));
  auto entropy = ad::scale(ad::mean_all(ad::categorical_entropy(out.log_probs)), static_cast<double>(R));

  ppo_terms terms{ad::add(ad::sub(ad::scale(value_loss, cfg.value_coef), objective),
                          ad::scale(entropy, -cfg.entropy_coef))};
  terms.policy_objective = objective.value()(0, 0);
  terms.value_loss = value_loss.value()(0, 0);
  terms.entropy = entropy.value()(0, 0);
  int clipped = 0;
  for (Index j = 0; j < n; ++j) {
    const double rho = std::exp(new_logp.value()(0, j) - old(0, j));
    clipped += std::abs(rho - 1.0) > cfg.clip_eps;
  }
  terms.clip_fraction = n > 0 ? static_cast<double>(clipped) / static_cast<double>(n) : 0.0;
  return terms;
}

ppo_trainer::ppo_trainer(agent_network<double>& net, ppo_config cfg, std::uint64_t seed)
    : net_(net), cfg_(cfg), seed_(seed) {
  cfg_.validate();
  nn::adam_config<double> ac;
  ac.learning_rate = cfg_.learning_rate;
  ac.clip_norm = cfg_.max_grad_norm;
  opt_ = nn::adam<double>(net_.params(), ac);
}

update_stats ppo_trainer::update(const rollout& buf, double bootstrap) {
  const std::size_t n = buf.size();
  if (n < static_cast<std::size_t>(cfg_.minibatch)) {
    throw invalid_argument("ppo update: buffer smaller than one minibatch");
  }
  const auto g = gae(buf.rewards, buf.values, buf.terminal, bootstrap, cfg_.gamma, cfg_.gae_lambda);
  const auto adv = normalize_advantages(g.advantages);
  update_stats st;
  for (double a : adv) st.advantage_mean += a;
  st.advantage_mean /= static_cast<double>(n);
  for (double a : adv) st.advantage_var += (a - st.advantage_mean) * (a - st.advantage_mean);
  st.advantage_var /= static_cast<double>(n);

  std::vector<std::size_t> order(n);
  int batches = 0;
  const std::size_t mb = static_cast<std::size_t>(cfg_.minibatch);
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng_stream rng(seed_, {0x990, static_cast<std::uint64_t>(updates_), static_cast<std::uint64_t>(epoch)});
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t start = 0; start + mb <= n; start += mb) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<long>(start),
                                         order.begin() + static_cast<long>(start + mb));
      ad::tape<double> t;
      auto terms = ppo_loss(t, net_, buf, idx, adv, g.returns, cfg_);
      const double total = terms.total.value()(0, 0);
      if (!std::isfinite(total)) {
        st.aborted = true;
        st.abort_reason = "non-finite PPO loss in epoch " + std::to_string(epoch);
        ++updates_;
        return st;
      }
      opt_.zero_grad();
      t.backward(terms.total);
      opt_.step();
      st.policy_loss += -terms.policy_objective;
      st.value_loss += terms.value_loss;
      st.entropy += terms.entropy;
      st.clip_fraction += terms.clip_fraction;
      ++batches;
    }
  }
  st.policy_loss /= batches;
  st.value_loss /= batches;
  st.entropy /= batches;
  st.clip_fraction /= batches;
  ++updates_;
  return st;
}

// ------------------------------------------------------------ environment

link_env::link_env(codec::codec_model<float>& codec, link::source_context ctx,
                   std::vector<image> images, double eta, std::vector<double> snr_choices_db)
    : codec_(codec), ctx_(std::move(ctx)), eta_(eta), snr_choices_(std::move(snr_choices_db)) {
  if (images.empty()) throw invalid_argument("link_env: no images");
  if (snr_choices_.empty()) throw invalid_argument("link_env: no SNR choices");
  for (const auto& img : images) prepared_.push_back(link::prepare(img, codec_, ctx_));
}

entropy::rate_index_map link_env::preset(std::size_t i) const {
  return entropy::rate_preset_map(prepared_[i].entropy, codec_.cfg.rates, eta_);
}

link_env::step_result link_env::run_episode(agent_network<double>& net, const ppo_config& cfg,
                                            std::uint64_t seed, std::uint64_t episode,
                                            bool deterministic) {
  rng_stream pick(seed, {0xE915, episode, 0});
  step_result r;
  r.image_index = static_cast<std::size_t>(pick.below(prepared_.size()));
  r.snr_db = snr_choices_[static_cast<std::size_t>(pick.below(snr_choices_.size()))];
  const channel::channel_spec spec{channel::channel_kind::awgn, r.snr_db};
  const auto& p = prepared_[r.image_index];
  r.state = build_state(p.entropy, spec, neutral(net.mode), net.mode, cfg);
  rng_stream sample(seed, {0xE915, episode, 1});
  r.policy = policy_step(r.state, net, deterministic ? nullptr : &sample);
  const auto rm = apply_action(preset(r.image_index), r.policy.a, net.mode, codec_.cfg.rates);
  rng_stream noise(seed, {0xE915, episode, 2});
  r.tx = link::transmit(p, rm, codec_, ctx_, spec, noise, true);
  r.reward = reward(r.tx.psnr_db, r.tx.cbr, cfg);
  return r;
}

training_log train_agent(link_env& env, agent_network<double>& net, const ppo_config& cfg,
                         long episodes, std::uint64_t seed) {
  ppo_trainer trainer(net, cfg, seed);
  training_log log;
  rollout buf;
  double reward_sum = 0.0, offset_sum = 0.0;
  for (long e = 0; e < episodes; ++e) {
    auto step = env.run_episode(net, cfg, seed, static_cast<std::uint64_t>(e), false);
    for (int a : step.policy.a) offset_sum += offsets[static_cast<std::size_t>(a)] / static_cast<double>(step.policy.a.size());
    reward_sum += step.reward;
    buf.states.push_back(std::move(step.state));
    buf.actions.push_back(step.policy.a);
    buf.log_probs.push_back(step.policy.log_prob);
    buf.values.push_back(step.policy.value);
    buf.rewards.push_back(step.reward);
    buf.terminal.push_back(true);
    if (static_cast<int>(buf.size()) == cfg.steps_per_update) {
      log.updates.push_back(trainer.update(buf));
      log.mean_reward.push_back(reward_sum / static_cast<double>(buf.size()));
      log.mean_offset.push_back(offset_sum / static_cast<double>(buf.size()));
      if (log.updates.back().aborted) throw numeric_error("PPO update aborted: " + log.updates.back().abort_reason);
      buf.clear();
      reward_sum = offset_sum = 0.0;
    }
  }
  return log;
}

// ------------------------------------------------------------ checkpoints

namespace {
constexpr std::string_view agent_magic = "AKBAGENT";
}

void save_agent(const std::string& path, agent_network<double>& net, const ppo_config& cfg,
                const std::string& codec_hash) {
  json header{{"ppo", cfg}, {"codec_hash", codec_hash}};
  const auto text = header.dump();
  std::vector<std::uint8_t> buf;
  io::put_bytes(buf, agent_magic);
  io::put_u32(buf, static_cast<std::uint32_t>(text.size()));
  io::put_bytes(buf, text);
  std::ostringstream params;
  nn::write_params(params, net.params());
  io::put_bytes(buf, params.str());
  io::write_file(path, buf);
}

loaded_agent load_agent(const std::string& path, const std::string& expected_codec_hash) {
  const auto buf = io::read_file(path);
  io::reader r(buf);
  if (r.bytes(agent_magic.size(), "magic") != agent_magic) {
    throw corrupt_file_error("'" + path + "' is not an agent checkpoint", 0);
  }
  const auto text = r.bytes(r.u32("header length"), "header");
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw corrupt_file_error(std::string("bad agent header: ") + e.what(), 12);
  }
  loaded_agent out;
  out.cfg = header.at("ppo").get<ppo_config>();
  out.codec_hash = header.at("codec_hash").get<std::string>();
  out.net = agent_network<double>(out.cfg.trunk_channels, out.cfg.mode, 0);
  std::istringstream params(std::string(buf.begin() + static_cast<long>(r.offset()), buf.end()));
  nn::read_params(params, out.net.params());
  if (!expected_codec_hash.empty() && expected_codec_hash != out.codec_hash) {
    out.warning = "agent was trained against codec " + out.codec_hash + ", loaded codec is " +
                  expected_codec_hash;
  }
  return out;
}

}  // namespace akb::ckb
