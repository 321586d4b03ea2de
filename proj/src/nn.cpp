#include "akb/nn.hpp"

#include <istream>
#include <iterator>
#include <ostream>

#include "akb/binary_io.hpp"

namespace akb::nn {

template <class S>
void write_params(std::ostream& out, const param_list<S>& params) {
  std::vector<std::uint8_t> buf;
  io::put_u32(buf, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    io::put_u32(buf, static_cast<std::uint32_t>(p->name.size()));
    io::put_bytes(buf, p->name);
    io::put_u32(buf, static_cast<std::uint32_t>(p->value.rows()));
    io::put_u32(buf, static_cast<std::uint32_t>(p->value.cols()));
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      io::put_f32(buf, static_cast<float>(p->value.data()[i]));
    }
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

template <class S>
void read_params(std::istream& in, const param_list<S>& params) {
  std::vector<std::uint8_t> buf(std::istreambuf_iterator<char>(in), {});
  io::reader r(buf);
  const auto count = r.u32("parameter count");
  if (count != params.size()) {
    throw corrupt_file_error("parameter count " + std::to_string(count) + " does not match model (" +
                                 std::to_string(params.size()) + ")",
                             r.offset());
  }
  for (auto* p : params) {
    const auto name = r.bytes(r.u32("name length"), "name");
    if (name != p->name) {
      throw corrupt_file_error("expected parameter '" + p->name + "', found '" + name + "'",
                               r.offset());
    }
    const auto rows = r.u32("rows");
    const auto cols = r.u32("cols");
    if (rows != p->value.rows() || cols != p->value.cols()) {
      throw corrupt_file_error("shape mismatch for '" + name + "'", r.offset());
    }
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      p->value.data()[i] = static_cast<S>(r.f32("tensor data"));
    }
    p->zero_grad();
  }
}

template void write_params<float>(std::ostream&, const param_list<float>&);
template void write_params<double>(std::ostream&, const param_list<double>&);
template void read_params<float>(std::istream&, const param_list<float>&);
template void read_params<double>(std::istream&, const param_list<double>&);

}  // namespace akb::nn
