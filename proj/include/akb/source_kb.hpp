#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "akb/image.hpp"

namespace akb::kb {

using embedding = Eigen::VectorXf;
using row_matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Candidate set: one embedding per row.
struct kb_store {
  row_matrix matrix;
  std::vector<std::string> entry_ids;
  std::string provenance;

  long size() const { return static_cast<long>(matrix.rows()); }
  int dim() const { return static_cast<int>(matrix.cols()); }
  friend bool operator==(const kb_store& a, const kb_store& b) {
    return a.matrix.rows() == b.matrix.rows() && a.matrix.cols() == b.matrix.cols() &&
           a.matrix == b.matrix && a.entry_ids == b.entry_ids && a.provenance == b.provenance;
  }
};

struct retrieval_result {
  long index = 0;
  embedding vector;
  double sq_distance = 0.0;
};

/// Exact linear scan; ties go to the smallest index.
retrieval_result kb_search(const embedding& r, const kb_store& store);

/// "AKB1", u32 N, u32 d, N*d f32 row-major, u32 metadata length, metadata JSON.
std::vector<std::uint8_t> kb_serialize(const kb_store& store);
kb_store kb_deserialize(std::span<const std::uint8_t> bytes);
void kb_save(const kb_store& store, const std::string& path);
kb_store kb_load(const std::string& path);

/// Index of `result` in ceil(log2 N) bits (MSB first), sent at 2 bits per symbol.
struct kb_side_info {
  std::vector<std::uint8_t> bits;
  long symbols = 0;
};
kb_side_info side_info(const retrieval_result& result, const kb_store& store);
int index_bits(long n);
long index_from_bits(const std::vector<std::uint8_t>& bits);

// ------------------------------------------------------------- providers

template <class T>
struct provided {
  T value;
  /// Set when the remote provider failed and the stub answered instead.
  bool fell_back = false;
  std::string warning;
};

class provider {
 public:
  virtual ~provider() = default;
  virtual provided<std::string> caption(const image& img, const std::string& prompt) = 0;
  virtual provided<embedding> embed(const std::string& text) = 0;
  virtual int dim() const = 0;
  virtual std::string name() const = 0;
};

/// Offline deterministic captioner/embedder.
class stub_provider : public provider {
 public:
  explicit stub_provider(int dim) : dim_(dim) {}
  provided<std::string> caption(const image& img, const std::string& prompt) override;
  provided<embedding> embed(const std::string& text) override;
  int dim() const override { return dim_; }
  std::string name() const override { return "stub"; }

 private:
  int dim_;
};

std::string stub_caption(const image& img);
embedding stub_embed(const std::string& text, int dim);

struct http_options {
  std::string url;
  int timeout_ms = 5000;
  int retries = 3;
  int backoff_ms = 200;
  bool fallback_to_stub = false;
};

/// JSON-over-HTTP client: POST /caption {image: base64 PNG, prompt} -> {text};
/// POST /embed {text} -> {vector}. Non-200 answers and transport failures
/// are retried with exponential backoff.
class http_provider : public provider {
 public:
  http_provider(http_options opts, int dim);
  provided<std::string> caption(const image& img, const std::string& prompt) override;
  provided<embedding> embed(const std::string& text) override;
  int dim() const override { return dim_; }
  std::string name() const override { return "http:" + opts_.url; }

 private:
  std::string post(const std::string& path, const std::string& body);

  http_options opts_;
  int dim_;
};

std::unique_ptr<provider> make_provider(const std::string& kind, const http_options& opts, int dim);

struct kb_build_report {
  kb_store store;
  long fallbacks = 0;
};

kb_build_report kb_build(const std::vector<image>& corpus, const std::vector<std::string>& ids,
                         provider& p, const std::string& prompt, const std::string& provenance);

/// Caption -> embed -> search: the transmitter-side conditioning lookup.
struct conditioning {
  std::string caption;
  retrieval_result match;
  kb_side_info side;
  bool fell_back = false;
};
conditioning condition_image(const image& img, const kb_store& store, provider& p,
                             const std::string& prompt);

/// Receiver side: vector from the received index bits.
embedding lookup_from_side(const kb_side_info& side, const kb_store& store);

}  // namespace akb::kb
