#pragma once

#include <string>

#include <Eigen/Core>

#include "akb/channel.hpp"
#include "akb/codec.hpp"
#include "akb/image.hpp"
#include "akb/source_kb.hpp"

namespace akb::link {

/// What the transmitter and receiver share for source-KB conditioning.
/// A null store disables conditioning (zero vector, no side bits).
struct source_context {
  const kb::kb_store* store = nullptr;
  kb::provider* provider = nullptr;
  std::string prompt;
};

/// Per-image transmitter state that does not depend on the channel.
struct prepared_image {
  image img;
  feature_map features;
  entropy::entropy_map_t entropy;
  Eigen::VectorXd cond;
  kb::kb_side_info side;
  bool kb_fell_back = false;
};

prepared_image prepare(const image& img, codec::codec_model<float>& m, const source_context& ctx);

struct transmission {
  image reconstruction;
  double psnr_db = 0.0;
  double cbr = 0.0;
  long payload_symbols = 0;
  long side_symbols = 0;
};

/// Encode with `rm`, pass the payload through the channel, decode with the
/// receiver's KB lookup, and score the result.
transmission transmit(const prepared_image& p, const entropy::rate_index_map& rm,
                      codec::codec_model<float>& m, const source_context& ctx,
                      const channel::channel_spec& spec, rng_stream& noise, bool charge_rate_map);

}  // namespace akb::link
