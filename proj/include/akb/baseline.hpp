#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "akb/channel.hpp"
#include "akb/image.hpp"
#include "akb/rng.hpp"

namespace akb::classic {

using bits = std::vector<std::uint8_t>;  // one bit per byte, values 0/1

// ------------------------------------------------------------------ LDPC

/// Binary parity-check code with a systematic encoder derived from H.
struct ldpc_code {
  int n = 0;  // codeword bits
  int m = 0;  // parity checks (rows of H)
  int k = 0;  // message bits, n - rank(H)
  std::vector<std::vector<int>> row_vars;   // check -> variables
  std::vector<std::vector<int>> col_checks; // variable -> checks
  /// Codeword positions carrying the message, in message order.
  std::vector<int> info_positions;
  /// Pivot column of each independent parity row.
  std::vector<int> parity_positions;
  /// parity bit r = XOR of message bits selected by parity_masks[r].
  std::vector<std::vector<std::uint64_t>> parity_masks;

  double rate() const { return static_cast<double>(k) / n; }
};

/// Builds the encoder tables; duplicate entries within a row are an error.
ldpc_code ldpc_from_rows(int n, std::vector<std::vector<int>> row_vars);

ldpc_code parse_alist(const std::string& text);
std::string to_alist(const ldpc_code& code);
ldpc_code load_alist(const std::string& path);

/// Progressive-edge-growth Tanner graph with the given variable degrees,
/// ties broken by `seed`.
ldpc_code peg_construct(int n, int m, const std::vector<int>& var_degrees, std::uint64_t seed);

/// Same code with columns permuted so the message occupies positions 0..k-1.
ldpc_code systematic_first(const ldpc_code& code);

/// Degree profile and seed of the shipped n = 1536, k = 1024 fixture.
std::vector<int> shipped_degrees();
inline constexpr std::uint64_t shipped_seed = 1;
inline constexpr const char* shipped_fixture = "data/ldpc/peg_n1536_k1024.alist";

bits ldpc_encode(std::span<const std::uint8_t> msg, const ldpc_code& code);
/// True when H * c = 0 (mod 2).
bool parity_ok(std::span<const std::uint8_t> codeword, const ldpc_code& code);

struct ldpc_result {
  bits message;
  bits codeword;
  /// A-posteriori LLRs at exit (the channel LLRs when no iteration ran).
  std::vector<double> posterior;
  bool success = false;
  int iterations = 0;
};

/// Sum-product decoding; positive LLR favours bit 0.
ldpc_result ldpc_decode(std::span<const double> llr, const ldpc_code& code, int max_iters = 50);

// --------------------------------------------------------------- 16-QAM

/// Gray 16-QAM: bits (b0 b1) pick I and (b2 b3) pick Q from
/// 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3, all scaled by 1/sqrt(10).
channel::symbol_block qam16_mod(std::span<const std::uint8_t> b);
/// Max-log LLRs; `noise_var` is the complex noise variance per symbol.
std::vector<double> qam16_demod_llr(const channel::symbol_block& rx, double noise_var);

// ----------------------------------------------------------------- JPEG

/// Identity of the linked JPEG implementation, for reports.
std::string jpeg_encoder_identity();

/// Complete baseline JPEG file (standard tables, 4:2:0).
std::vector<std::uint8_t> jpeg_encode_file(const image& img, int quality);

/// Entropy-coded scan only. Headers follow from (height, width, quality)
/// and are rebuilt by the receiver.
std::vector<std::uint8_t> jpeg_encode(const image& img, int quality);

/// nullopt when libjpeg errors out or reports corrupt data.
std::optional<image> jpeg_decode(std::span<const std::uint8_t> scan, int height, int width, int quality);

// ---------------------------------------------------------------- chain

struct chain_report {
  bool success = false;
  int quality = 0;
  long jpeg_bytes = 0;
  long payload_bits = 0;
  int blocks = 0;
  int failed_blocks = 0;
  long symbols = 0;
  double cbr = 0.0;
  double psnr_db = 0.0;
  int max_iterations = 0;
};

struct chain_result {
  image reconstruction;
  chain_report report;
};

/// Fixed whitening sequence XORed onto the coded bits so that padding and
/// long zero runs do not skew the transmit power.
bits scrambler(std::size_t n);

/// Complex symbols needed for `payload_bits` of JPEG data.
long chain_symbols(long payload_bits, const ldpc_code& code);

/// JPEG -> LDPC -> scramble -> 16-QAM -> AWGN -> demod -> decode. Any block failure or
/// JPEG failure yields a mid-gray reconstruction.
chain_result classic_chain(const image& img, int quality, const channel::channel_spec& spec,
                           const ldpc_code& code, rng_stream& rng, int max_iters = 50);

inline constexpr std::uint8_t failure_gray = 128;

}  // namespace akb::classic
