#include "akb/baseline.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <map>
#include <sstream>
#include <tuple>

#include "akb/binary_io.hpp"
#include "akb/error.hpp"
#include "akb/metrics.hpp"
#include "jpeg_common.hpp"

namespace akb::classic {

namespace {

using word = std::uint64_t;

bool test_bit(const std::vector<word>& v, int i) { return (v[static_cast<std::size_t>(i) >> 6] >> (i & 63)) & 1U; }
void set_bit(std::vector<word>& v, int i) { v[static_cast<std::size_t>(i) >> 6] |= word{1} << (i & 63); }

}  // namespace

// ------------------------------------------------------------------ LDPC

ldpc_code ldpc_from_rows(int n, std::vector<std::vector<int>> row_vars) {
  if (n <= 0) throw invalid_argument("ldpc: n must be positive");
  ldpc_code code;
  code.n = n;
  code.m = static_cast<int>(row_vars.size());
  code.col_checks.assign(static_cast<std::size_t>(n), {});
  for (int r = 0; r < code.m; ++r) {
    auto& row = row_vars[static_cast<std::size_t>(r)];
    std::sort(row.begin(), row.end());
    if (std::adjacent_find(row.begin(), row.end()) != row.end()) {
      throw invalid_argument("ldpc: duplicate entry in check " + std::to_string(r));
    }
    for (int v : row) {
      if (v < 0 || v >= n) throw invalid_argument("ldpc: variable index out of range in check " + std::to_string(r));
      code.col_checks[static_cast<std::size_t>(v)].push_back(r);
    }
  }
  code.row_vars = std::move(row_vars);

  // Reduced row echelon form over GF(2), pivots taken from the last columns first.
  const std::size_t words = (static_cast<std::size_t>(n) + 63) / 64;
  std::vector<std::vector<word>> rows(static_cast<std::size_t>(code.m), std::vector<word>(words, 0));
  for (int r = 0; r < code.m; ++r) {
    for (int v : code.row_vars[static_cast<std::size_t>(r)]) set_bit(rows[static_cast<std::size_t>(r)], v);
  }
  std::vector<int> pivot_col;
  std::size_t rank = 0;
  for (int c = n - 1; c >= 0 && rank < rows.size(); --c) {
    std::size_t sel = rank;
    while (sel < rows.size() && !test_bit(rows[sel], c)) ++sel;
    if (sel == rows.size()) continue;
    std::swap(rows[sel], rows[rank]);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (i != rank && test_bit(rows[i], c)) {
        for (std::size_t w = 0; w < words; ++w) rows[i][w] ^= rows[rank][w];
      }
    }
    pivot_col.push_back(c);
    ++rank;
  }
  std::vector<bool> is_pivot(static_cast<std::size_t>(n), false);
  for (int c : pivot_col) is_pivot[static_cast<std::size_t>(c)] = true;
  for (int c = 0; c < n; ++c) {
    if (!is_pivot[static_cast<std::size_t>(c)]) code.info_positions.push_back(c);
  }
  code.k = static_cast<int>(code.info_positions.size());
  if (code.k == 0) throw invalid_argument("ldpc: code has no message bits");
  code.parity_positions = pivot_col;
  const std::size_t kwords = (static_cast<std::size_t>(code.k) + 63) / 64;
  code.parity_masks.assign(rank, std::vector<word>(kwords, 0));
  for (std::size_t r = 0; r < rank; ++r) {
    for (int j = 0; j < code.k; ++j) {
      if (test_bit(rows[r], code.info_positions[static_cast<std::size_t>(j)])) set_bit(code.parity_masks[r], j);
    }
  }
  return code;
}

ldpc_code parse_alist(const std::string& text) {
  std::vector<std::vector<int>> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::vector<int> vals;
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stoi(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw corrupt_file_error("alist: bad integer '" + tok + "' on line " + std::to_string(lines.size() + 1), 0);
      }
    }
    if (!vals.empty()) lines.push_back(std::move(vals));
  }
  auto fail = [](const std::string& what) -> ldpc_code { throw corrupt_file_error("alist: " + what, 0); };
  if (lines.size() < 4 || lines[0].size() != 2 || lines[1].size() != 2) return fail("missing header");
  const int n = lines[0][0], m = lines[0][1];
  if (n <= 0 || m <= 0) return fail("non-positive dimensions");
  if (lines[2].size() != static_cast<std::size_t>(n) || lines[3].size() != static_cast<std::size_t>(m)) {
    return fail("degree lists do not match dimensions");
  }
  if (lines.size() != 4 + static_cast<std::size_t>(n) + static_cast<std::size_t>(m)) {
    return fail("expected " + std::to_string(4 + n + m) + " non-empty lines, found " + std::to_string(lines.size()));
  }
  std::vector<std::vector<int>> rows(static_cast<std::size_t>(m));
  for (int r = 0; r < m; ++r) {
    for (int v : lines[4 + static_cast<std::size_t>(n) + static_cast<std::size_t>(r)]) {
      if (v == 0) continue;
      if (v < 0 || v > n) return fail("variable index out of range in check " + std::to_string(r + 1));
      rows[static_cast<std::size_t>(r)].push_back(v - 1);
    }
    if (static_cast<int>(rows[static_cast<std::size_t>(r)].size()) != lines[3][static_cast<std::size_t>(r)]) {
      return fail("check " + std::to_string(r + 1) + " degree mismatch");
    }
  }
  auto code = ldpc_from_rows(n, rows);
  for (int c = 0; c < n; ++c) {
    std::vector<int> listed;
    for (int v : lines[4 + static_cast<std::size_t>(c)]) {
      if (v != 0) listed.push_back(v - 1);
    }
    std::sort(listed.begin(), listed.end());
    if (listed != code.col_checks[static_cast<std::size_t>(c)] ||
        static_cast<int>(listed.size()) != lines[2][static_cast<std::size_t>(c)]) {
      return fail("column " + std::to_string(c + 1) + " disagrees with the check lists");
    }
  }
  return code;
}

std::string to_alist(const ldpc_code& code) {
  std::size_t max_col = 0, max_row = 0;
  for (const auto& c : code.col_checks) max_col = std::max(max_col, c.size());
  for (const auto& r : code.row_vars) max_row = std::max(max_row, r.size());
  std::ostringstream out;
  auto write_list = [&](const std::vector<int>& v, std::size_t width) {
    for (std::size_t i = 0; i < width; ++i) {
      if (i) out << ' ';
      out << (i < v.size() ? v[i] + 1 : 0);
    }
    out << '\n';
  };
  out << code.n << ' ' << code.m << '\n' << max_col << ' ' << max_row << '\n';
  for (std::size_t i = 0; i < code.col_checks.size(); ++i) out << (i ? " " : "") << code.col_checks[i].size();
  out << '\n';
  for (std::size_t i = 0; i < code.row_vars.size(); ++i) out << (i ? " " : "") << code.row_vars[i].size();
  out << '\n';
  for (const auto& c : code.col_checks) write_list(c, max_col);
  for (const auto& r : code.row_vars) write_list(r, max_row);
  return out.str();
}

ldpc_code load_alist(const std::string& path) {
  const auto bytes = io::read_file(path);
  return parse_alist(std::string(bytes.begin(), bytes.end()));
}

ldpc_code peg_construct(int n, int m, const std::vector<int>& var_degrees, std::uint64_t seed) {
  if (n <= 0 || m <= 0 || var_degrees.size() != static_cast<std::size_t>(n)) {
    throw invalid_argument("peg: need n, m > 0 and one degree per variable");
  }
  rng_stream rng(seed, {0x9E6});
  std::vector<std::vector<int>> var_adj(static_cast<std::size_t>(n)), check_adj(static_cast<std::size_t>(m));
  std::vector<char> reached(static_cast<std::size_t>(m));

  auto pick_min_degree = [&](auto&& allowed) {
    std::size_t best = SIZE_MAX;
    std::vector<int> ties;
    for (int c = 0; c < m; ++c) {
      if (!allowed(c)) continue;
      const std::size_t d = check_adj[static_cast<std::size_t>(c)].size();
      if (d < best) {
        best = d;
        ties.clear();
      }
      if (d == best) ties.push_back(c);
    }
    return ties[rng.below(ties.size())];
  };

  for (int v = 0; v < n; ++v) {
    const int deg = var_degrees[static_cast<std::size_t>(v)];
    if (deg < 1 || deg > m) throw invalid_argument("peg: variable degree out of range");
    for (int e = 0; e < deg; ++e) {
      int chosen;
      if (e == 0) {
        chosen = pick_min_degree([](int) { return true; });
      } else {
        // Breadth-first expansion of the tree rooted at v; connect to a
        // check that is as far away as possible.
        std::fill(reached.begin(), reached.end(), 0);
        std::vector<int> frontier;
        for (int c : var_adj[static_cast<std::size_t>(v)]) {
          reached[static_cast<std::size_t>(c)] = 1;
          frontier.push_back(c);
        }
        std::size_t count = frontier.size();
        std::vector<char> prev = reached;
        while (true) {
          std::vector<int> next;
          for (int c : frontier) {
            for (int u : check_adj[static_cast<std::size_t>(c)]) {
              for (int c2 : var_adj[static_cast<std::size_t>(u)]) {
                if (!reached[static_cast<std::size_t>(c2)]) {
                  reached[static_cast<std::size_t>(c2)] = 1;
                  next.push_back(c2);
                }
              }
            }
          }
          if (next.empty()) {
            prev = reached;  // the component is exhausted: anything unreached is fine
            break;
          }
          if (count + next.size() == static_cast<std::size_t>(m)) break;  // keep the previous depth
          count += next.size();
          prev = reached;
          frontier = std::move(next);
        }
        chosen = pick_min_degree([&](int c) { return !prev[static_cast<std::size_t>(c)]; });
      }
      var_adj[static_cast<std::size_t>(v)].push_back(chosen);
      check_adj[static_cast<std::size_t>(chosen)].push_back(v);
    }
  }
  return ldpc_from_rows(n, check_adj);
}

ldpc_code systematic_first(const ldpc_code& code) {
  std::vector<int> new_index(static_cast<std::size_t>(code.n));
  int next = 0;
  for (int c : code.info_positions) new_index[static_cast<std::size_t>(c)] = next++;
  std::vector<int> parity = code.parity_positions;
  std::sort(parity.begin(), parity.end());
  std::vector<bool> is_parity(static_cast<std::size_t>(code.n), false);
  for (int c : parity) is_parity[static_cast<std::size_t>(c)] = true;
  for (int c = 0; c < code.n; ++c) {
    if (is_parity[static_cast<std::size_t>(c)]) new_index[static_cast<std::size_t>(c)] = next++;
  }
  auto rows = code.row_vars;
  for (auto& r : rows) {
    for (int& v : r) v = new_index[static_cast<std::size_t>(v)];
  }
  return ldpc_from_rows(code.n, std::move(rows));
}

std::vector<int> shipped_degrees() { return std::vector<int>(1536, 3); }

bits ldpc_encode(std::span<const std::uint8_t> msg, const ldpc_code& code) {
  if (msg.size() != static_cast<std::size_t>(code.k)) {
    throw shape_error("ldpc_encode: message has " + std::to_string(msg.size()) + " bits, code needs " +
                      std::to_string(code.k));
  }
  std::vector<word> packed((static_cast<std::size_t>(code.k) + 63) / 64, 0);
  bits c(static_cast<std::size_t>(code.n), 0);
  for (int j = 0; j < code.k; ++j) {
    if (msg[static_cast<std::size_t>(j)] > 1) throw invalid_argument("ldpc_encode: bits must be 0 or 1");
    if (msg[static_cast<std::size_t>(j)]) {
      set_bit(packed, j);
      c[static_cast<std::size_t>(code.info_positions[static_cast<std::size_t>(j)])] = 1;
    }
  }
  for (std::size_t r = 0; r < code.parity_masks.size(); ++r) {
    int ones = 0;
    for (std::size_t w = 0; w < packed.size(); ++w) ones += std::popcount(packed[w] & code.parity_masks[r][w]);
    c[static_cast<std::size_t>(code.parity_positions[r])] = static_cast<std::uint8_t>(ones & 1);
  }
  return c;
}

bool parity_ok(std::span<const std::uint8_t> codeword, const ldpc_code& code) {
  if (codeword.size() != static_cast<std::size_t>(code.n)) throw shape_error("parity_ok: wrong codeword length");
  for (const auto& row : code.row_vars) {
    int x = 0;
    for (int v : row) x ^= codeword[static_cast<std::size_t>(v)];
    if (x) return false;
  }
  return true;
}

ldpc_result ldpc_decode(std::span<const double> llr, const ldpc_code& code, int max_iters) {
  if (llr.size() != static_cast<std::size_t>(code.n)) {
    throw shape_error("ldpc_decode: expected " + std::to_string(code.n) + " LLRs");
  }
  for (double x : llr) {
    if (!std::isfinite(x)) throw numeric_error("ldpc_decode: non-finite LLR");
  }
  ldpc_result res;
  res.codeword.resize(static_cast<std::size_t>(code.n));
  auto finish = [&] {
    res.message.resize(static_cast<std::size_t>(code.k));
    for (int j = 0; j < code.k; ++j) {
      res.message[static_cast<std::size_t>(j)] = res.codeword[static_cast<std::size_t>(code.info_positions[static_cast<std::size_t>(j)])];
    }
    return res;
  };
  res.posterior.assign(llr.begin(), llr.end());
  for (int v = 0; v < code.n; ++v) res.codeword[static_cast<std::size_t>(v)] = llr[static_cast<std::size_t>(v)] < 0.0;
  if (parity_ok(res.codeword, code)) {
    res.success = true;
    return finish();
  }

  // Edges in check-major order.
  std::vector<int> offset(static_cast<std::size_t>(code.m) + 1, 0), edge_var;
  for (int c = 0; c < code.m; ++c) {
    const auto& row = code.row_vars[static_cast<std::size_t>(c)];
    edge_var.insert(edge_var.end(), row.begin(), row.end());
    offset[static_cast<std::size_t>(c) + 1] = static_cast<int>(edge_var.size());
  }
  const std::size_t edges = edge_var.size();
  std::vector<double> v2c(edges), c2v(edges), t(edges), total(static_cast<std::size_t>(code.n));
  for (std::size_t e = 0; e < edges; ++e) v2c[e] = llr[static_cast<std::size_t>(edge_var[e])];
  constexpr double t_max = 1.0 - 1e-15;

  for (int it = 1; it <= max_iters; ++it) {
    for (int c = 0; c < code.m; ++c) {
      const auto b = static_cast<std::size_t>(offset[static_cast<std::size_t>(c)]);
      const auto end = static_cast<std::size_t>(offset[static_cast<std::size_t>(c) + 1]);
      for (std::size_t e = b; e < end; ++e) t[e] = std::clamp(std::tanh(0.5 * v2c[e]), -t_max, t_max);
      // Leave-one-out products via a forward then backward sweep.
      double run = 1.0;
      for (std::size_t e = b; e < end; ++e) {
        c2v[e] = run;
        run *= t[e];
      }
      run = 1.0;
      for (std::size_t e = end; e-- > b;) {
        c2v[e] = 2.0 * std::atanh(std::clamp(c2v[e] * run, -t_max, t_max));
        run *= t[e];
      }
    }
    std::copy(llr.begin(), llr.end(), total.begin());
    for (std::size_t e = 0; e < edges; ++e) total[static_cast<std::size_t>(edge_var[e])] += c2v[e];
    for (std::size_t e = 0; e < edges; ++e) v2c[e] = total[static_cast<std::size_t>(edge_var[e])] - c2v[e];
    for (int v = 0; v < code.n; ++v) res.codeword[static_cast<std::size_t>(v)] = total[static_cast<std::size_t>(v)] < 0.0;
    res.iterations = it;
    res.posterior = total;
    if (parity_ok(res.codeword, code)) {
      res.success = true;
      break;
    }
  }
  return finish();
}

// --------------------------------------------------------------- 16-QAM

namespace {

const double inv_sqrt10 = 1.0 / std::sqrt(10.0);

double gray_level(std::uint8_t hi, std::uint8_t lo) {
  return hi ? (lo ? 1.0 : 3.0) : (lo ? -1.0 : -3.0);
}

// Max-log LLRs of the two Gray bits on one axis.
void axis_llr(double r, double noise_var, double& l_hi, double& l_lo) {
  constexpr double levels[4] = {-3, -1, 1, 3};
  constexpr int hi_bit[4] = {0, 0, 1, 1};
  constexpr int lo_bit[4] = {0, 1, 1, 0};
  double d_hi[2] = {INFINITY, INFINITY}, d_lo[2] = {INFINITY, INFINITY};
  for (int i = 0; i < 4; ++i) {
    const double d = (r - levels[i] * inv_sqrt10) * (r - levels[i] * inv_sqrt10);
    d_hi[hi_bit[i]] = std::min(d_hi[hi_bit[i]], d);
    d_lo[lo_bit[i]] = std::min(d_lo[lo_bit[i]], d);
  }
  l_hi = (d_hi[1] - d_hi[0]) / noise_var;
  l_lo = (d_lo[1] - d_lo[0]) / noise_var;
}

}  // namespace

channel::symbol_block qam16_mod(std::span<const std::uint8_t> b) {
  if (b.size() % 4 != 0) throw shape_error("qam16_mod: bit count must be a multiple of 4");
  channel::symbol_block out(b.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto* q = b.data() + 4 * i;
    for (int j = 0; j < 4; ++j) {
      if (q[j] > 1) throw invalid_argument("qam16_mod: bits must be 0 or 1");
    }
    out[i] = {gray_level(q[0], q[1]) * inv_sqrt10, gray_level(q[2], q[3]) * inv_sqrt10};
  }
  return out;
}

std::vector<double> qam16_demod_llr(const channel::symbol_block& rx, double noise_var) {
  if (!(noise_var > 0.0) || !std::isfinite(noise_var)) throw invalid_argument("qam16_demod_llr: noise_var must be positive");
  std::vector<double> out(rx.size() * 4);
  for (std::size_t i = 0; i < rx.size(); ++i) {
    axis_llr(rx[i].real(), noise_var, out[4 * i], out[4 * i + 1]);
    axis_llr(rx[i].imag(), noise_var, out[4 * i + 2], out[4 * i + 3]);
  }
  return out;
}

// ----------------------------------------------------------------- JPEG

namespace {

#define AKB_STR2(x) #x
#define AKB_STR(x) AKB_STR2(x)

void check_quality(int q) {
  if (q < 1 || q > 100) throw invalid_argument("jpeg quality must be in 1..100, got " + std::to_string(q));
}

// Offset just past the SOS segment header.
std::size_t scan_start(const std::vector<std::uint8_t>& f) {
  std::size_t p = 2;
  while (p + 4 <= f.size()) {
    if (f[p] != 0xFF) break;
    const std::uint8_t marker = f[p + 1];
    const std::size_t len = (static_cast<std::size_t>(f[p + 2]) << 8) | f[p + 3];
    if (marker == 0xDA) return p + 2 + len;
    p += 2 + len;
  }
  throw error("jpeg: no start-of-scan marker in encoder output", "jpeg");
}

std::vector<std::uint8_t> header_for(int height, int width, int quality) {
  thread_local std::map<std::tuple<int, int, int>, std::vector<std::uint8_t>> cache;
  const auto key = std::make_tuple(height, width, quality);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  const auto f = jpeg_encode_file(image(height, width, failure_gray), quality);
  std::vector<std::uint8_t> h(f.begin(), f.begin() + static_cast<std::ptrdiff_t>(scan_start(f)));
  cache.emplace(key, h);
  return h;
}

}  // namespace

std::string jpeg_encoder_identity() {
#ifdef LIBJPEG_TURBO_VERSION
  return "libjpeg-turbo " AKB_STR(LIBJPEG_TURBO_VERSION) " (libjpeg API " AKB_STR(JPEG_LIB_VERSION) ")";
#else
  return "libjpeg (API " AKB_STR(JPEG_LIB_VERSION) ")";
#endif
}

std::vector<std::uint8_t> jpeg_encode_file(const image& img, int quality) {
  check_quality(quality);
  if (img.empty()) throw invalid_argument("jpeg_encode: empty image");
  jpeg_compress_struct cinfo;
  detail::jpeg_error_mgr_ex err;
  cinfo.err = detail::install_error_mgr(err);
  unsigned char* buf = nullptr;
  unsigned long size = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(buf);
    throw error(std::string("jpeg encode failed: ") + err.message, "jpeg");
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buf, &size);
  cinfo.image_width = static_cast<JDIMENSION>(img.width());
  cinfo.image_height = static_cast<JDIMENSION>(img.height());
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  cinfo.optimize_coding = FALSE;
  cinfo.dct_method = JDCT_ISLOW;
  jpeg_start_compress(&cinfo, TRUE);
  const std::size_t stride = static_cast<std::size_t>(img.width()) * 3;
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(img.data().data() + cinfo.next_scanline * stride);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  std::vector<std::uint8_t> out(buf, buf + size);
  jpeg_destroy_compress(&cinfo);
  std::free(buf);
  return out;
}

std::vector<std::uint8_t> jpeg_encode(const image& img, int quality) {
  const auto f = jpeg_encode_file(img, quality);
  const std::size_t b = scan_start(f);
  if (f.size() < b + 2 || f[f.size() - 2] != 0xFF || f.back() != 0xD9) {
    throw error("jpeg: encoder output does not end with EOI", "jpeg");
  }
  return {f.begin() + static_cast<std::ptrdiff_t>(b), f.end() - 2};
}

std::optional<image> jpeg_decode(std::span<const std::uint8_t> scan, int height, int width, int quality) {
  check_quality(quality);
  if (height <= 0 || width <= 0) throw invalid_argument("jpeg_decode: dimensions must be positive");
  auto stream = header_for(height, width, quality);
  stream.insert(stream.end(), scan.begin(), scan.end());
  stream.push_back(0xFF);
  stream.push_back(0xD9);

  std::vector<std::uint8_t> px(static_cast<std::size_t>(height) * width * 3);
  jpeg_decompress_struct cinfo;
  detail::jpeg_error_mgr_ex err;
  cinfo.err = detail::install_error_mgr(err);
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    return std::nullopt;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, stream.data(), static_cast<unsigned long>(stream.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  cinfo.dct_method = JDCT_ISLOW;
  jpeg_start_decompress(&cinfo);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = px.data() + static_cast<std::size_t>(cinfo.output_scanline) * width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  const int warnings = err.warnings;
  jpeg_destroy_decompress(&cinfo);
  if (warnings > 0) return std::nullopt;
  return image(height, width, std::move(px));
}

// ---------------------------------------------------------------- chain

bits scrambler(std::size_t n) {
  rng_stream rng(0x5C4A3B1E, {});
  bits out(n);
  for (std::size_t i = 0; i < n; i += 64) {
    const auto w = rng();
    for (std::size_t j = i; j < std::min(n, i + 64); ++j) out[j] = static_cast<std::uint8_t>((w >> (j - i)) & 1U);
  }
  return out;
}

long chain_symbols(long payload_bits, const ldpc_code& code) {
  if (payload_bits < 0) throw invalid_argument("chain_symbols: negative length");
  const long blocks = (payload_bits + code.k - 1) / code.k;
  return (blocks * code.n + 3) / 4;
}

chain_result classic_chain(const image& img, int quality, const channel::channel_spec& spec,
                           const ldpc_code& code, rng_stream& rng, int max_iters) {
  chain_result res;
  auto& rep = res.report;
  rep.quality = quality;
  const auto scan = jpeg_encode(img, quality);
  rep.jpeg_bytes = static_cast<long>(scan.size());
  rep.payload_bits = rep.jpeg_bytes * 8;
  rep.blocks = static_cast<int>((rep.payload_bits + code.k - 1) / code.k);
  rep.symbols = chain_symbols(rep.payload_bits, code);
  rep.cbr = cbr(static_cast<std::uint64_t>(rep.symbols), 0, img);

  bits msg(static_cast<std::size_t>(rep.blocks) * static_cast<std::size_t>(code.k), 0);
  for (std::size_t i = 0; i < scan.size(); ++i) {
    for (int b = 0; b < 8; ++b) msg[8 * i + static_cast<std::size_t>(b)] = (scan[i] >> (7 - b)) & 1U;
  }
  bits coded;
  coded.reserve(static_cast<std::size_t>(rep.symbols) * 4);
  for (int blk = 0; blk < rep.blocks; ++blk) {
    const auto c = ldpc_encode(std::span(msg).subspan(static_cast<std::size_t>(blk) * code.k, static_cast<std::size_t>(code.k)), code);
    coded.insert(coded.end(), c.begin(), c.end());
  }
  coded.resize(static_cast<std::size_t>(rep.symbols) * 4, 0);
  const auto prbs = scrambler(coded.size());
  for (std::size_t i = 0; i < coded.size(); ++i) coded[i] ^= prbs[i];

  const auto rx = channel::awgn(channel::normalize_power(qam16_mod(coded)), spec, rng);
  auto llr = qam16_demod_llr(rx, channel::noise_variance(spec.snr_db));
  for (std::size_t i = 0; i < llr.size(); ++i) {
    if (prbs[i]) llr[i] = -llr[i];
  }

  bits decoded(msg.size());
  for (int blk = 0; blk < rep.blocks; ++blk) {
    const auto d = ldpc_decode(std::span(llr).subspan(static_cast<std::size_t>(blk) * code.n, static_cast<std::size_t>(code.n)), code, max_iters);
    rep.max_iterations = std::max(rep.max_iterations, d.iterations);
    if (!d.success) ++rep.failed_blocks;
    std::copy(d.message.begin(), d.message.end(), decoded.begin() + static_cast<std::ptrdiff_t>(blk) * code.k);
  }

  std::optional<image> out;
  if (rep.failed_blocks == 0) {
    std::vector<std::uint8_t> bytes(scan.size(), 0);
    for (std::size_t i = 0; i < bytes.size(); ++i) {
      for (int b = 0; b < 8; ++b) bytes[i] = static_cast<std::uint8_t>((bytes[i] << 1) | decoded[8 * i + static_cast<std::size_t>(b)]);
    }
    out = jpeg_decode(bytes, img.height(), img.width(), quality);
  }
  rep.success = out.has_value();
  res.reconstruction = rep.success ? std::move(*out) : image(img.height(), img.width(), failure_gray);
  rep.psnr_db = psnr(img, res.reconstruction);
  return res;
}

}  // namespace akb::classic
