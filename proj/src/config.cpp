#include "akb/config.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "akb/binary_io.hpp"
#include "akb/error.hpp"
#include "akb/rng.hpp"

#ifndef AKB_DATA_DIR
#define AKB_DATA_DIR "data"
#endif

namespace akb::harness {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(scheme s) {
  switch (s) {
    case scheme::akb_jscc: return "akb_jscc";
    case scheme::akb_jscc_no_ckb: return "akb_jscc_no_ckb";
    case scheme::fixed_rate_jscc: return "fixed_rate_jscc";
    case scheme::jpeg_ldpc: return "jpeg_ldpc";
  }
  return "?";
}

scheme scheme_from_string(const std::string& s) {
  for (auto k : {scheme::akb_jscc, scheme::akb_jscc_no_ckb, scheme::fixed_rate_jscc, scheme::jpeg_ldpc}) {
    if (to_string(k) == s) return k;
  }
  throw config_error("unknown scheme '" + s + "'");
}

bool is_learned(scheme s) { return s != scheme::jpeg_ldpc; }

std::string data_dir() { return AKB_DATA_DIR; }

}  // namespace akb::harness

namespace akb::codec {

void to_json(nlohmann::json& j, const train_config& c) {
  j = nlohmann::json{{"lambda_rd", c.lambda_rd},
           {"train_snr_db", c.train_snr_db},
           {"snr_jitter_db", c.snr_jitter_db},
           {"learning_rate", c.learning_rate},
           {"final_learning_rate", c.final_learning_rate},
           {"total_steps", c.total_steps},
           {"batch_size", c.batch_size},
           {"uniform_rate_prob", c.uniform_rate_prob},
           {"offset_prob", c.offset_prob},
           {"quantize", c.quantize},
           {"noiseless", c.noiseless}};
}

}  // namespace akb::codec

namespace akb::harness {

namespace {

// Overlays `user` on `defaults`, rejecting keys the defaults do not have.
json overlay(const json& defaults, const json& user, const std::string& ctx) {
  if (!user.is_object()) throw config_error("'" + ctx + "' must be an object");
  json out = defaults;
  for (const auto& [k, v] : user.items()) {
    if (!defaults.contains(k)) throw config_error("unknown key '" + ctx + "." + k + "'");
    out[k] = v;
  }
  return out;
}

json to_json_opt(const std::optional<long>& v) { return v ? json(*v) : json(nullptr); }

json dataset_json(const dataset_config& d) {
  json j{{"path", d.path},
         {"crop", d.crop},
         {"train_count", to_json_opt(d.train_count)},
         {"test_count", to_json_opt(d.test_count)},
         {"train_fraction", d.train_fraction},
         {"split_seed", d.split_seed},
         {"synthetic", nullptr}};
  if (d.synthetic) j["synthetic"] = {{"seed", d.synthetic->seed}, {"count", d.synthetic->count}, {"size", d.synthetic->size}};
  return j;
}

json kb_json(const kb_config& k) {
  return {{"kb_provider", k.provider}, {"kb_provider_url", k.provider_url}, {"kb_dim", k.kb_dim},
          {"prompt", k.prompt},        {"timeout_ms", k.timeout_ms},       {"retries", k.retries},
          {"backoff_ms", k.backoff_ms}, {"kb_fallback", k.fallback_to_stub ? "stub" : "none"}};
}

json agent_json(const agent_config& a) {
  json p = a.ppo;
  return {{"ppo", p}, {"episodes", a.episodes}, {"snr_choices_db", a.snr_choices_db}};
}

json eval_json(const eval_config& e) {
  std::vector<std::string> names;
  for (auto s : e.schemes) names.push_back(to_string(s));
  return {{"schemes", names},
          {"snr_list", e.snr_list},
          {"cbr_target", e.cbr_target},
          {"jpeg_cbr_target", e.jpeg_cbr_target},
          {"fixed_rate_index", e.fixed_rate_index},
          {"jpeg_quality", e.jpeg_quality ? json(*e.jpeg_quality) : json(nullptr)}};
}

json sweep_json(const sweep_config& s) {
  return {{"cbr_targets", s.cbr_targets}, {"snr_db", s.snr_db}, {"tolerance", s.tolerance}, {"max_probes", s.max_probes}};
}

json baseline_json(const baseline_config& b) { return {{"ldpc_fixture", b.ldpc_fixture}, {"max_iters", b.max_iters}}; }

json checkpoints_json(const experiment_config& c) {
  return {{"codec", c.codec_checkpoint}, {"agent", c.agent_checkpoint}, {"kb", c.kb_file}};
}

}  // namespace

json to_json(const experiment_config& c) {
  json codec_j = c.codec, train_j = c.train;
  return {{"output_dir", c.output_dir}, {"seed", c.seed},           {"dataset", dataset_json(c.dataset)},
          {"codec", codec_j},           {"train", train_j},         {"kb", kb_json(c.kb)},
          {"agent", agent_json(c.agent)}, {"eval", eval_json(c.eval)}, {"sweep", sweep_json(c.sweep)},
          {"baseline", baseline_json(c.baseline)}, {"checkpoints", checkpoints_json(c)}};
}

experiment_config parse_config(const json& user, const std::string& base_dir) {
  const experiment_config defaults;
  experiment_config c;
  c.base_dir = base_dir;
  try {
    const json top = overlay(to_json(defaults), user, "config");
    c.output_dir = top.at("output_dir").get<std::string>();
    c.seed = top.at("seed").get<std::uint64_t>();

    const json d = overlay(dataset_json(defaults.dataset), top.at("dataset"), "dataset");
    c.dataset.path = d.at("path").get<std::string>();
    c.dataset.crop = d.at("crop").get<int>();
    if (!d.at("train_count").is_null()) c.dataset.train_count = d.at("train_count").get<long>();
    if (!d.at("test_count").is_null()) c.dataset.test_count = d.at("test_count").get<long>();
    c.dataset.train_fraction = d.at("train_fraction").get<double>();
    c.dataset.split_seed = d.at("split_seed").get<std::uint64_t>();
    if (!d.at("synthetic").is_null()) {
      const json sd{{"seed", synthetic_spec{}.seed}, {"count", synthetic_spec{}.count}, {"size", synthetic_spec{}.size}};
      const json s = overlay(sd, d.at("synthetic"), "dataset.synthetic");
      c.dataset.synthetic = synthetic_spec{s.at("seed").get<std::uint64_t>(), s.at("count").get<long>(), s.at("size").get<int>()};
    }

    overlay(json(defaults.codec), top.at("codec"), "codec").get_to(c.codec);

    const json t = overlay(json(defaults.train), top.at("train"), "train");
    c.train.lambda_rd = t.at("lambda_rd").get<double>();
    c.train.train_snr_db = t.at("train_snr_db").get<double>();
    c.train.snr_jitter_db = t.at("snr_jitter_db").get<double>();
    c.train.learning_rate = t.at("learning_rate").get<double>();
    c.train.final_learning_rate = t.at("final_learning_rate").get<double>();
    c.train.total_steps = t.at("total_steps").get<long>();
    c.train.batch_size = t.at("batch_size").get<int>();
    c.train.uniform_rate_prob = t.at("uniform_rate_prob").get<double>();
    c.train.offset_prob = t.at("offset_prob").get<double>();
    c.train.quantize = t.at("quantize").get<bool>();
    c.train.noiseless = t.at("noiseless").get<bool>();

    const json k = overlay(kb_json(defaults.kb), top.at("kb"), "kb");
    c.kb.provider = k.at("kb_provider").get<std::string>();
    c.kb.provider_url = k.at("kb_provider_url").get<std::string>();
    c.kb.kb_dim = k.at("kb_dim").get<int>();
    c.kb.prompt = k.at("prompt").get<std::string>();
    c.kb.timeout_ms = k.at("timeout_ms").get<int>();
    c.kb.retries = k.at("retries").get<int>();
    c.kb.backoff_ms = k.at("backoff_ms").get<int>();
    const auto fallback = k.at("kb_fallback").get<std::string>();
    if (fallback != "stub" && fallback != "none") throw config_error("kb.kb_fallback must be \"stub\" or \"none\"");
    c.kb.fallback_to_stub = fallback == "stub";

    const json a = overlay(agent_json(defaults.agent), top.at("agent"), "agent");
    overlay(json(defaults.agent.ppo), a.at("ppo"), "agent.ppo").get_to(c.agent.ppo);
    c.agent.episodes = a.at("episodes").get<long>();
    c.agent.snr_choices_db = a.at("snr_choices_db").get<std::vector<double>>();

    const json e = overlay(eval_json(defaults.eval), top.at("eval"), "eval");
    c.eval.schemes.clear();
    for (const auto& s : e.at("schemes").get<std::vector<std::string>>()) c.eval.schemes.push_back(scheme_from_string(s));
    c.eval.snr_list = e.at("snr_list").get<std::vector<double>>();
    c.eval.cbr_target = e.at("cbr_target").get<double>();
    c.eval.jpeg_cbr_target = e.at("jpeg_cbr_target").get<double>();
    c.eval.fixed_rate_index = e.at("fixed_rate_index").get<int>();
    if (!e.at("jpeg_quality").is_null()) c.eval.jpeg_quality = e.at("jpeg_quality").get<int>();

    const json s = overlay(sweep_json(defaults.sweep), top.at("sweep"), "sweep");
    c.sweep.cbr_targets = s.at("cbr_targets").get<std::vector<double>>();
    c.sweep.snr_db = s.at("snr_db").get<double>();
    c.sweep.tolerance = s.at("tolerance").get<double>();
    c.sweep.max_probes = s.at("max_probes").get<int>();

    const json b = overlay(baseline_json(defaults.baseline), top.at("baseline"), "baseline");
    c.baseline.ldpc_fixture = b.at("ldpc_fixture").get<std::string>();
    c.baseline.max_iters = b.at("max_iters").get<int>();

    const json ck = overlay(checkpoints_json(defaults), top.at("checkpoints"), "checkpoints");
    c.codec_checkpoint = ck.at("codec").get<std::string>();
    c.agent_checkpoint = ck.at("agent").get<std::string>();
    c.kb_file = ck.at("kb").get<std::string>();
  } catch (const json::exception& ex) {
    throw config_error(std::string("config: ") + ex.what());
  } catch (const config_error&) {
    throw;
  } catch (const error& ex) {
    throw config_error(std::string("config: ") + ex.what());
  }
  c.validate();
  return c;
}

experiment_config load_config(const std::string& path) {
  const auto bytes = io::read_file(path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& ex) {
    throw config_error("config " + path + ": " + ex.what());
  }
  const auto parent = fs::path(path).parent_path();
  return parse_config(j, parent.empty() ? "." : parent.string());
}

std::string config_hash(const experiment_config& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(c).dump())));
  return buf;
}

std::string experiment_config::resolve(const std::string& p) const {
  if (p.empty()) return p;
  const fs::path path(p);
  return path.is_absolute() ? p : (fs::path(base_dir) / path).lexically_normal().string();
}

std::string experiment_config::out(const std::string& name) const {
  return (fs::path(resolve(output_dir)) / name).string();
}

std::string experiment_config::codec_path() const {
  return codec_checkpoint.empty() ? out("codec.ckpt") : resolve(codec_checkpoint);
}
std::string experiment_config::agent_path() const {
  return agent_checkpoint.empty() ? out("agent.ckpt") : resolve(agent_checkpoint);
}
std::string experiment_config::kb_path() const { return kb_file.empty() ? out("kb.bin") : resolve(kb_file); }
std::string experiment_config::ldpc_path() const {
  return baseline.ldpc_fixture.empty() ? (fs::path(data_dir()) / "ldpc" / "peg_n1536_k1024.alist").string()
                                       : resolve(baseline.ldpc_fixture);
}

int experiment_config::fixed_rate_index() const {
  return eval.fixed_rate_index >= 0 ? eval.fixed_rate_index : static_cast<int>(codec.rates.size() / 2);
}

void experiment_config::validate() const {
  codec.validate();
  agent.ppo.validate();
  if (dataset.path.empty()) throw config_error("dataset.path is required");
  if (dataset.crop <= 0 || dataset.crop % codec.patch != 0) {
    throw config_error("dataset.crop must be a positive multiple of codec.patch");
  }
  if (dataset.train_count.has_value() != dataset.test_count.has_value()) {
    throw config_error("dataset.train_count and dataset.test_count go together");
  }
  if (!(dataset.train_fraction > 0 && dataset.train_fraction < 1)) {
    throw config_error("dataset.train_fraction must be in (0, 1)");
  }
  if (dataset.synthetic && (dataset.synthetic->count < 2 || dataset.synthetic->size <= 0)) {
    throw config_error("dataset.synthetic needs count >= 2 and a positive size");
  }
  if (kb.kb_dim != codec.cond_dim) throw config_error("kb.kb_dim must equal codec.cond_dim");
  if (kb.provider != "stub" && kb.provider != "http") throw config_error("kb.kb_provider must be 'stub' or 'http'");
  if (kb.provider == "http" && kb.provider_url.empty()) throw config_error("kb.kb_provider_url is required for http");
  if (train.total_steps < 0 || train.batch_size <= 0) throw config_error("train: invalid steps or batch size");
  if (agent.episodes < 0 || agent.snr_choices_db.empty()) throw config_error("agent: invalid episodes or SNR choices");
  if (eval.schemes.empty() || eval.snr_list.empty()) throw config_error("eval: schemes and snr_list must be non-empty");
  for (double v : eval.snr_list) {
    if (!std::isfinite(v)) throw config_error("eval.snr_list must be finite");
  }
  if (!(eval.cbr_target > 0) || !(eval.jpeg_cbr_target > 0)) throw config_error("eval: CBR targets must be positive");
  if (eval.fixed_rate_index >= static_cast<int>(codec.rates.size())) throw config_error("eval.fixed_rate_index out of range");
  if (eval.jpeg_quality && (*eval.jpeg_quality < 1 || *eval.jpeg_quality > 100)) {
    throw config_error("eval.jpeg_quality must be in 1..100");
  }
  if (!(sweep.tolerance > 0) || sweep.max_probes < 1) throw config_error("sweep: invalid tolerance or max_probes");
  if (baseline.max_iters < 1) throw config_error("baseline.max_iters must be positive");
}

}  // namespace akb::harness
