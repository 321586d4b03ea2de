#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <thread>

#include "akb/binary_io.hpp"
#include "akb/image_io.hpp"
#include "akb/rng.hpp"
#include "akb/source_kb.hpp"

// After Eigen: <resolv.h> (pulled in by httplib) defines _res.
#include <httplib.h>
#include <json.hpp>

using namespace akb;
using namespace akb::kb;

namespace {

kb_store random_store(long n, int d, std::uint64_t seed) {
  rng_stream rng(seed, {0});
  kb_store s;
  s.matrix.resize(n, d);
  for (Eigen::Index i = 0; i < s.matrix.size(); ++i) s.matrix.data()[i] = static_cast<float>(rng.normal());
  return s;
}

embedding vec(std::initializer_list<float> v) {
  embedding e(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (float x : v) e[i++] = x;
  return e;
}

/// Brute-force oracle, written independently of kb_search.
long oracle_argmin(const embedding& r, const kb_store& s) {
  const Eigen::MatrixXd m = s.matrix.cast<double>();
  const Eigen::VectorXd d = (m.rowwise() - r.cast<double>().transpose()).rowwise().squaredNorm();
  long best = 0;
  for (long i = 1; i < d.size(); ++i) {
    if (d[i] < d[best]) best = i;
  }
  return best;
}

struct temp_dir {
  std::filesystem::path path;
  temp_dir() {
    path = std::filesystem::temp_directory_path() /
           ("akb_kb_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::create_directories(path);
  }
  ~temp_dir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

class local_server {
 public:
  local_server() {
    port_ = srv.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { srv.listen_after_bind(); });
    srv.wait_until_ready();
  }
  ~local_server() {
    srv.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  httplib::Server srv;

 private:
  int port_ = 0;
  std::thread thread_;
};

std::vector<std::uint8_t> base64_decode(const std::string& in) {
  static const std::string alphabet =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::vector<std::uint8_t> out;
  std::uint32_t acc = 0;
  int bits = 0;
  for (char c : in) {
    const auto pos = alphabet.find(c);
    if (pos == std::string::npos) continue;  // padding
    acc = (acc << 6) | static_cast<std::uint32_t>(pos);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xff));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("kb_search examples") {
  kb_store s;
  s.matrix.resize(2, 2);
  s.matrix << 0, 0, 3, 4;
  const auto r = kb_search(vec({3, 3}), s);
  CHECK(r.index == 1);
  CHECK(r.sq_distance == 1.0);
  CHECK(r.vector == vec({3, 4}));

  const auto big = random_store(20, 8, 1);
  const auto hit = kb_search(big.matrix.row(5).transpose(), big);
  CHECK(hit.index == 5);
  CHECK(hit.sq_distance == 0.0);

  kb_store tie;
  tie.matrix.resize(3, 1);
  tie.matrix << 5, -1, 1;
  CHECK(kb_search(vec({0}), tie).index == 1);

  CHECK_THROWS_AS(kb_search(vec({0}), kb_store{}), invalid_argument);
  CHECK_THROWS_AS(kb_search(vec({0, 1, 2}), s), shape_error);
}

TEST_CASE("kb_search agrees with a brute-force rescan") {
  const auto s = random_store(10000, 64, 2);
  rng_stream rng(3, {0});
  int matches = 0;
  for (int q = 0; q < 100; ++q) {
    embedding r(64);
    for (int k = 0; k < 64; ++k) r[k] = static_cast<float>(rng.normal());
    const auto res = kb_search(r, s);
    matches += res.index == oracle_argmin(r, s);
    CHECK(res.sq_distance == doctest::Approx((s.matrix.row(res.index).transpose().cast<double>() -
                                              r.cast<double>())
                                                 .squaredNorm())
                                 .epsilon(1e-12));
  }
  CHECK(matches == 100);
}

TEST_CASE("appending farther rows never changes the result") {
  auto s = random_store(50, 6, 4);
  const embedding r = embedding::Constant(6, 0.1f);
  const auto before = kb_search(r, s);
  kb_store grown = s;
  grown.matrix.conservativeResize(60, 6);
  for (int i = 50; i < 60; ++i) grown.matrix.row(i).setConstant(100.0f + static_cast<float>(i));
  CHECK(kb_search(r, grown).index == before.index);
}

TEST_CASE("file format") {
  temp_dir tmp;
  kb_store s;
  s.matrix.resize(1, 2);
  s.matrix << 1.0f, 2.0f;
  const auto bytes = kb_serialize(s);
  REQUIRE(bytes.size() == 26);
  const std::uint8_t expected[26] = {'A', 'K', 'B', '1', 1, 0, 0, 0, 2, 0, 0, 0, 0, 0,
                                     0x80, 0x3f, 0, 0, 0, 0x40, 2, 0, 0, 0, '{', '}'};
  CHECK(std::equal(bytes.begin(), bytes.end(), expected));

  auto full = random_store(7, 5, 5);
  full.entry_ids = {"a", "b", "c", "d", "e", "f", "g"};
  full.provenance = "unit test";
  const auto path = tmp.file("kb.akb");
  kb_save(full, path);
  const auto back = kb_load(path);
  CHECK(back == full);
  CHECK(kb_serialize(back) == io::read_file(path));

  auto raw = io::read_file(path);
  raw.resize(raw.size() - 5);
  try {
    kb_deserialize(raw);
    FAIL("truncated file accepted");
  } catch (const corrupt_file_error& e) {
    CHECK(e.offset() > 0);
  }
  raw = io::read_file(path);
  raw[0] = 'X';
  CHECK_THROWS_AS(kb_deserialize(raw), corrupt_file_error);
  raw = io::read_file(path);
  raw.resize(10);
  CHECK_THROWS_AS(kb_deserialize(raw), corrupt_file_error);
}

TEST_CASE("side information") {
  const auto check = [](long n, int bits, long symbols) {
    kb_store s;
    s.matrix = row_matrix::Zero(n, 1);
    const auto si = side_info(retrieval_result{n - 1, embedding::Zero(1), 0.0}, s);
    CHECK(static_cast<int>(si.bits.size()) == bits);
    CHECK(si.symbols == symbols);
    CHECK(index_from_bits(si.bits) == n - 1);
  };
  check(1024, 10, 5);
  check(1, 0, 0);
  check(3, 2, 1);
  check(1025, 11, 6);
}

TEST_CASE("transmitter and receiver agree on the conditioning vector") {
  stub_provider p(32);
  std::vector<image> corpus;
  for (int i = 0; i < 6; ++i) corpus.push_back(image(8, 8, static_cast<std::uint8_t>(40 * i)));
  const auto store = kb_build(corpus, {}, p, "describe", "").store;
  for (int i = 0; i < 6; ++i) {
    const auto c = condition_image(corpus[static_cast<std::size_t>(i)], store, p, "describe");
    CHECK(lookup_from_side(c.side, store) == c.match.vector);
    CHECK(c.match.sq_distance == 0.0);
  }
}

TEST_CASE("stub caption") {
  CHECK(stub_caption(image(16, 16, 0)) == "a dark scene, low detail, gray dominant");
  image red(8, 8, 0);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) red.at(y, x, 0) = 250;
  }
  CHECK(stub_caption(red) == "a dim scene, low detail, red dominant");  // mean 83
  image checker(8, 8);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      for (int c = 0; c < 3; ++c) checker.at(y, x, c) = ((x + y) % 2) ? 255 : 0;
    }
  }
  CHECK(stub_caption(checker) == "a dim scene, high detail, gray dominant");
  CHECK(stub_caption(image(4, 4, 230)) == "a very bright scene, low detail, gray dominant");
  CHECK(stub_caption(checker) == stub_caption(checker));
}

TEST_CASE("stub embedding") {
  const auto a = stub_embed("abc", 512);
  CHECK(a == stub_embed("abc", 512));
  CHECK(std::abs(a.cast<double>().norm() - 1.0) < 1e-6);
  CHECK_THROWS_AS(stub_embed("", 512), invalid_argument);
  // Near-identical texts land far apart.
  CHECK(a.dot(stub_embed("abd", 512)) < 0.5f);
  int close = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto base = "caption " + std::to_string(i);
    const auto u = stub_embed(base + "a", 512), v = stub_embed(base + "b", 512);
    close += u.dot(v) >= 0.5f;
    CHECK(std::abs(u.cast<double>().norm() - 1.0) < 1e-6);
  }
  CHECK(close == 0);
}

TEST_CASE("kb_build") {
  temp_dir tmp;
  stub_provider p(16);
  std::vector<image> corpus;
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) {
    corpus.push_back(image(8, 8, static_cast<std::uint8_t>(25 * i)));
    ids.push_back("img" + std::to_string(i));
  }
  corpus[9] = corpus[2];
  const auto rep = kb_build(corpus, ids, p, "prompt", "synthetic");
  CHECK(rep.store.size() == 10);
  CHECK(rep.store.matrix.row(9) == rep.store.matrix.row(2));
  CHECK(rep.fallbacks == 0);
  kb_save(rep.store, tmp.file("a.akb"));
  kb_save(kb_build(corpus, ids, p, "prompt", "synthetic").store, tmp.file("b.akb"));
  CHECK(io::read_file(tmp.file("a.akb")) == io::read_file(tmp.file("b.akb")));
  CHECK_THROWS_AS(kb_build({}, {}, p, "", ""), invalid_argument);
}

TEST_CASE("http provider round trip") {
  local_server server;
  std::atomic<int> captions{0};
  server.srv.Post("/caption", [&](const httplib::Request& req, httplib::Response& res) {
    const auto j = nlohmann::json::parse(req.body);
    const auto img = io::decode_png(base64_decode(j.at("image").get<std::string>()));
    ++captions;
    res.set_content(nlohmann::json{{"text", "remote " + std::to_string(img.width()) + " " +
                                                j.at("prompt").get<std::string>()}}
                        .dump(),
                    "application/json");
  });
  server.srv.Post("/embed", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(nlohmann::json{{"vector", std::vector<float>{1, 0, 0}}}.dump(), "application/json");
  });
  http_provider p({server.url(), 2000, 1, 10, false}, 3);
  const auto cap = p.caption(image(4, 6, 9), "hi");
  CHECK(cap.value == "remote 6 hi");
  CHECK_FALSE(cap.fell_back);
  CHECK(p.embed("x").value == vec({1, 0, 0}));
  http_provider wrong_dim({server.url(), 2000, 0, 10, false}, 4);
  CHECK_THROWS_AS(wrong_dim.embed("x"), provider_error);
}

TEST_CASE("http provider retries then falls back") {
  local_server server;
  std::atomic<int> hits{0};
  server.srv.Post("/caption", [&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 503;
  });
  http_provider strict({server.url(), 2000, 2, 1, false}, 8);
  try {
    strict.caption(image(4, 4), "p");
    FAIL("expected provider error");
  } catch (const provider_error& e) {
    CHECK(e.retryable());
  }
  CHECK(hits == 3);

  http_provider lenient({server.url(), 2000, 1, 1, true}, 8);
  const auto cap = lenient.caption(image(4, 4), "p");
  CHECK(cap.fell_back);
  CHECK_FALSE(cap.warning.empty());
  CHECK(cap.value == stub_caption(image(4, 4)));

  // Nothing listening at all.
  http_provider unreachable({"http://127.0.0.1:1", 200, 1, 1, true}, 8);
  const auto e = unreachable.embed("abc");
  CHECK(e.fell_back);
  CHECK(e.value == stub_embed("abc", 8));
  CHECK_THROWS_AS(make_provider("magic", {}, 8), config_error);
}
