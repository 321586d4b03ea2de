#include "akb/source_kb.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <limits>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "akb/binary_io.hpp"
#include "akb/error.hpp"
#include "akb/image_io.hpp"
#include "akb/rng.hpp"

namespace akb::kb {

using nlohmann::json;

retrieval_result kb_search(const embedding& r, const kb_store& store) {
  if (store.size() < 1) throw invalid_argument("kb_search: empty knowledge base");
  if (r.size() != store.dim()) {
    throw shape_error("kb_search: query has dimension " + std::to_string(r.size()) +
                      ", store has " + std::to_string(store.dim()));
  }
  long best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (long i = 0; i < store.size(); ++i) {
    const float* row = store.matrix.data() + i * store.dim();
    double acc = 0.0;
    for (int k = 0; k < store.dim(); ++k) {
      const double diff = static_cast<double>(r[k]) - static_cast<double>(row[k]);
      acc += diff * diff;
    }
    if (acc < best_d) {
      best_d = acc;
      best = i;
    }
  }
  return {best, store.matrix.row(best).transpose(), best_d};
}

// ------------------------------------------------------------------ file

namespace {
constexpr std::string_view kb_magic = "AKB1";

std::string metadata_json(const kb_store& s) {
  json j = json::object();
  if (!s.entry_ids.empty()) j["entry_ids"] = s.entry_ids;
  if (!s.provenance.empty()) j["provenance"] = s.provenance;
  return j.dump();
}
}  // namespace

std::vector<std::uint8_t> kb_serialize(const kb_store& store) {
  if (!store.entry_ids.empty() && static_cast<long>(store.entry_ids.size()) != store.size()) {
    throw invalid_argument("kb store has " + std::to_string(store.entry_ids.size()) +
                           " ids for " + std::to_string(store.size()) + " rows");
  }
  std::vector<std::uint8_t> out;
  io::put_bytes(out, kb_magic);
  io::put_u32(out, static_cast<std::uint32_t>(store.size()));
  io::put_u32(out, static_cast<std::uint32_t>(store.dim()));
  for (Eigen::Index i = 0; i < store.matrix.size(); ++i) io::put_f32(out, store.matrix.data()[i]);
  const auto meta = metadata_json(store);
  io::put_u32(out, static_cast<std::uint32_t>(meta.size()));
  io::put_bytes(out, meta);
  return out;
}

kb_store kb_deserialize(std::span<const std::uint8_t> bytes) {
  io::reader r(bytes);
  if (r.bytes(kb_magic.size(), "magic") != kb_magic) {
    throw corrupt_file_error("bad knowledge-base magic", 0);
  }
  const auto n = r.u32("entry count");
  const auto d = r.u32("dimension");
  if (static_cast<std::uint64_t>(n) * d * 4 > r.remaining()) {
    throw corrupt_file_error("embedding matrix extends past end of file", r.offset());
  }
  kb_store s;
  s.matrix.resize(n, d);
  for (Eigen::Index i = 0; i < s.matrix.size(); ++i) s.matrix.data()[i] = r.f32("embedding");
  const auto meta_offset = r.offset();
  const auto len = r.u32("metadata length");
  const auto text = r.bytes(len, "metadata");
  if (r.remaining() != 0) throw corrupt_file_error("trailing bytes after metadata", r.offset());
  json meta;
  try {
    meta = json::parse(text);
  } catch (const json::exception& e) {
    throw corrupt_file_error(std::string("metadata is not JSON: ") + e.what(), meta_offset + 4);
  }
  if (!meta.is_object()) throw corrupt_file_error("metadata must be a JSON object", meta_offset + 4);
  if (meta.contains("entry_ids")) {
    s.entry_ids = meta["entry_ids"].get<std::vector<std::string>>();
    if (s.entry_ids.size() != n) {
      throw corrupt_file_error("entry_ids count does not match N", meta_offset + 4);
    }
  }
  s.provenance = meta.value("provenance", std::string{});
  return s;
}

void kb_save(const kb_store& store, const std::string& path) {
  io::write_file(path, kb_serialize(store));
}

kb_store kb_load(const std::string& path) { return kb_deserialize(io::read_file(path)); }

// ------------------------------------------------------------- side info

int index_bits(long n) {
  if (n < 1) throw invalid_argument("index_bits: empty set");
  int b = 0;
  while ((1L << b) < n) ++b;
  return b;
}

kb_side_info side_info(const retrieval_result& result, const kb_store& store) {
  const int b = index_bits(store.size());
  if (result.index < 0 || result.index >= store.size()) {
    throw invalid_argument("side_info: index outside the store");
  }
  kb_side_info out;
  for (int i = b - 1; i >= 0; --i) out.bits.push_back(static_cast<std::uint8_t>((result.index >> i) & 1));
  out.symbols = (b + 1) / 2;
  return out;
}

long index_from_bits(const std::vector<std::uint8_t>& bits) {
  long v = 0;
  for (auto b : bits) v = (v << 1) | (b & 1);
  return v;
}

embedding lookup_from_side(const kb_side_info& side, const kb_store& store) {
  if (static_cast<int>(side.bits.size()) != index_bits(store.size())) {
    throw shape_error("side information width does not match the knowledge base size");
  }
  const long idx = index_from_bits(side.bits);
  if (idx >= store.size()) throw invalid_argument("received KB index outside the store");
  return store.matrix.row(idx).transpose();
}

// ------------------------------------------------------------------ stub

std::string stub_caption(const image& img) {
  const int h = img.height(), w = img.width();
  std::array<double, 3> ch{0, 0, 0};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) ch[c] += img.at(y, x, c);
    }
  }
  const double px = static_cast<double>(h) * w;
  for (auto& v : ch) v /= px;
  const double mean = (ch[0] + ch[1] + ch[2]) / 3.0;

  auto luma = [&](int y, int x) {
    return (img.at(y, x, 0) + img.at(y, x, 1) + img.at(y, x, 2)) / 3.0;
  };
  double grad = 0.0;
  long pairs = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (x + 1 < w) grad += std::abs(luma(y, x + 1) - luma(y, x)), ++pairs;
      if (y + 1 < h) grad += std::abs(luma(y + 1, x) - luma(y, x)), ++pairs;
    }
  }
  if (pairs > 0) grad /= static_cast<double>(pairs);

  const char* brightness = mean < 64 ? "dark" : mean < 128 ? "dim" : mean < 192 ? "bright" : "very bright";
  const char* detail = grad < 4 ? "low" : grad < 16 ? "medium" : "high";
  static constexpr const char* names[3] = {"red", "green", "blue"};
  const auto [lo, hi] = std::minmax_element(ch.begin(), ch.end());
  const char* dominant = (*hi - *lo < 8.0) ? "gray" : names[hi - ch.begin()];
  return std::string("a ") + brightness + " scene, " + detail + " detail, " + dominant + " dominant";
}

embedding stub_embed(const std::string& text, int dim) {
  if (text.empty()) throw invalid_argument("embed: empty text");
  if (dim < 1) throw invalid_argument("embed: dimension must be positive");
  rng_stream rng(fnv1a64(text), {0xE3BEDULL});
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = rng.normal();
  return (v / v.norm()).cast<float>();
}

provided<std::string> stub_provider::caption(const image& img, const std::string&) {
  return {stub_caption(img), false, {}};
}

provided<embedding> stub_provider::embed(const std::string& text) {
  return {stub_embed(text, dim_), false, {}};
}

// ------------------------------------------------------------------ http

http_provider::http_provider(http_options opts, int dim)
    : opts_(std::move(opts)), dim_(dim) {
  if (opts_.url.empty()) throw config_error("http provider needs kb_provider_url");
}

std::string http_provider::post(const std::string& path, const std::string& body) {
  std::string last;
  for (int attempt = 0; attempt <= opts_.retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(opts_.backoff_ms << (attempt - 1)));
    }
    // One client per request so concurrent callers never share a socket.
    httplib::Client cli(opts_.url);
    const auto tmo = std::chrono::milliseconds(opts_.timeout_ms);
    cli.set_connection_timeout(tmo);
    cli.set_read_timeout(tmo);
    cli.set_write_timeout(tmo);
    auto res = cli.Post(path, body, "application/json");
    if (!res) {
      last = "request to " + opts_.url + path + " failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last = opts_.url + path + " answered HTTP " + std::to_string(res->status);
      continue;
    }
    return res->body;
  }
  throw provider_error(last + " (after " + std::to_string(opts_.retries + 1) + " attempts)", true);
}

provided<std::string> http_provider::caption(const image& img, const std::string& prompt) {
  try {
    const auto png = io::encode_png(img);
    const json req{{"image", httplib::detail::base64_encode(std::string(png.begin(), png.end()))},
                   {"prompt", prompt}};
    const auto resp = json::parse(post("/caption", req.dump()));
    auto text = resp.at("text").get<std::string>();
    if (text.empty()) throw provider_error("captioner returned empty text", false);
    return {std::move(text), false, {}};
  } catch (const json::exception& e) {
    if (!opts_.fallback_to_stub) throw provider_error(std::string("bad caption response: ") + e.what(), false);
    return {stub_caption(img), true, std::string("bad caption response: ") + e.what()};
  } catch (const provider_error& e) {
    if (!opts_.fallback_to_stub) throw;
    return {stub_caption(img), true, e.what()};
  }
}

provided<embedding> http_provider::embed(const std::string& text) {
  if (text.empty()) throw invalid_argument("embed: empty text");
  try {
    const auto resp = json::parse(post("/embed", json{{"text", text}}.dump()));
    const auto v = resp.at("vector").get<std::vector<float>>();
    if (static_cast<int>(v.size()) != dim_) {
      throw provider_error("embedder returned dimension " + std::to_string(v.size()) +
                               ", expected " + std::to_string(dim_),
                           false);
    }
    embedding e = Eigen::Map<const embedding>(v.data(), dim_);
    if (!e.allFinite()) throw provider_error("embedder returned non-finite values", false);
    return {e, false, {}};
  } catch (const json::exception& e) {
    if (!opts_.fallback_to_stub) throw provider_error(std::string("bad embed response: ") + e.what(), false);
    return {stub_embed(text, dim_), true, std::string("bad embed response: ") + e.what()};
  } catch (const provider_error& e) {
    if (!opts_.fallback_to_stub) throw;
    return {stub_embed(text, dim_), true, e.what()};
  }
}

std::unique_ptr<provider> make_provider(const std::string& kind, const http_options& opts, int dim) {
  if (kind == "stub") return std::make_unique<stub_provider>(dim);
  if (kind == "http") return std::make_unique<http_provider>(opts, dim);
  throw config_error("unknown kb_provider '" + kind + "' (expected stub or http)");
}

// ----------------------------------------------------------------- build

kb_build_report kb_build(const std::vector<image>& corpus, const std::vector<std::string>& ids,
                         provider& p, const std::string& prompt, const std::string& provenance) {
  if (corpus.empty()) throw invalid_argument("kb_build: empty corpus");
  if (!ids.empty() && ids.size() != corpus.size()) {
    throw invalid_argument("kb_build: one id per corpus image required");
  }
  kb_build_report rep;
  rep.store.matrix.resize(static_cast<Eigen::Index>(corpus.size()), p.dim());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto cap = p.caption(corpus[i], prompt);
    const auto emb = p.embed(cap.value);
    rep.fallbacks += cap.fell_back + emb.fell_back;
    rep.store.matrix.row(static_cast<Eigen::Index>(i)) = emb.value.transpose();
  }
  rep.store.entry_ids = ids;
  rep.store.provenance = provenance;
  return rep;
}

conditioning condition_image(const image& img, const kb_store& store, provider& p,
                             const std::string& prompt) {
  conditioning c;
  const auto cap = p.caption(img, prompt);
  const auto emb = p.embed(cap.value);
  c.caption = cap.value;
  c.fell_back = cap.fell_back || emb.fell_back;
  c.match = kb_search(emb.value, store);
  c.side = side_info(c.match, store);
  return c;
}

}  // namespace akb::kb
