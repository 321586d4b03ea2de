#include "akb/link.hpp"

#include "akb/metrics.hpp"

namespace akb::link {

prepared_image prepare(const image& img, codec::codec_model<float>& m, const source_context& ctx) {
  prepared_image p;
  p.img = img;
  p.features = codec::analysis(img, m);
  p.entropy = codec::compute_entropy_map(p.features, m);
  p.cond = Eigen::VectorXd::Zero(m.cfg.cond_dim);
  if (ctx.store != nullptr) {
    if (ctx.provider == nullptr) throw invalid_argument("source context has a store but no provider");
    if (ctx.store->dim() != m.cfg.cond_dim) {
      throw shape_error("knowledge base dimension " + std::to_string(ctx.store->dim()) +
                        " does not match codec cond_dim " + std::to_string(m.cfg.cond_dim));
    }
    const auto c = kb::condition_image(img, *ctx.store, *ctx.provider, ctx.prompt);
    p.cond = c.match.vector.cast<double>();
    p.side = c.side;
    p.kb_fell_back = c.fell_back;
  }
  return p;
}

transmission transmit(const prepared_image& p, const entropy::rate_index_map& rm,
                      codec::codec_model<float>& m, const source_context& ctx,
                      const channel::channel_spec& spec, rng_stream& noise, bool charge_rate_map) {
  const codec::side_info side{p.side.bits, p.side.symbols};
  auto frame = codec::jscc_encode(p.features, rm, p.cond, m, side, charge_rate_map);
  if (!frame.payload.empty()) frame.payload = channel::awgn(frame.payload, spec, noise);

  // The receiver rebuilds the conditioning vector from the side bits alone.
  Eigen::VectorXd rx_cond = Eigen::VectorXd::Zero(m.cfg.cond_dim);
  if (ctx.store != nullptr) {
    rx_cond = kb::lookup_from_side(kb::kb_side_info{frame.side_bits, frame.kb_side_symbols}, *ctx.store)
                  .cast<double>();
  }
  const auto f = codec::jscc_decode(frame, spec, rx_cond, m);
  transmission t;
  t.reconstruction = codec::synthesis(f, m);
  t.psnr_db = psnr(p.img, t.reconstruction);
  t.payload_symbols = static_cast<long>(frame.payload.size());
  t.side_symbols = frame.side_symbols();
  t.cbr = cbr(static_cast<std::uint64_t>(t.payload_symbols), static_cast<std::uint64_t>(t.side_symbols),
              p.img);
  return t;
}

}  // namespace akb::link
