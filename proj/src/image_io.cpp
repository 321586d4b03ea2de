#include "akb/image_io.hpp"

#include <cstring>

#include <png.h>

#include "akb/binary_io.hpp"
#include "akb/error.hpp"
#include "jpeg_common.hpp"

namespace akb::io {

std::vector<std::uint8_t> encode_png(const image& img) {
  png_image pi;
  std::memset(&pi, 0, sizeof pi);
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width());
  pi.height = static_cast<png_uint_32>(img.height());
  pi.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  const auto* px = img.data().data();
  if (!png_image_write_to_memory(&pi, nullptr, &size, 0, px, 0, nullptr)) {
    throw error(std::string("png encode failed: ") + pi.message, "io");
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&pi, out.data(), &size, 0, px, 0, nullptr)) {
    throw error(std::string("png encode failed: ") + pi.message, "io");
  }
  out.resize(size);
  return out;
}

image decode_png(std::span<const std::uint8_t> bytes) {
  png_image pi;
  std::memset(&pi, 0, sizeof pi);
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&pi, bytes.data(), bytes.size())) {
    throw corrupt_file_error(std::string("png: ") + pi.message, 0);
  }
  pi.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(pi));
  // Alpha is composited onto black.
  if (!png_image_finish_read(&pi, nullptr, px.data(), 0, nullptr)) {
    png_image_free(&pi);
    throw corrupt_file_error(std::string("png: ") + pi.message, 0);
  }
  return image(static_cast<int>(pi.height), static_cast<int>(pi.width), std::move(px));
}

image decode_jpeg_file(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct cinfo;
  detail::jpeg_error_mgr_ex err;
  cinfo.err = detail::install_error_mgr(err);
  std::vector<std::uint8_t> px;
  int h = 0, w = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw corrupt_file_error(std::string("jpeg: ") + err.message, 0);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  h = static_cast<int>(cinfo.output_height);
  w = static_cast<int>(cinfo.output_width);
  px.resize(static_cast<std::size_t>(h) * w * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = px.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return image(h, w, std::move(px));
}

image read_image(const std::string& path) {
  const auto bytes = read_file(path);
  static constexpr std::uint8_t png_sig[4] = {0x89, 'P', 'N', 'G'};
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), png_sig, 4) == 0) return decode_png(bytes);
  if (bytes.size() >= 2 && bytes[0] == 0xFF && bytes[1] == 0xD8) return decode_jpeg_file(bytes);
  throw corrupt_file_error("'" + path + "' is neither PNG nor JPEG", 0);
}

void write_png(const std::string& path, const image& img) { write_file(path, encode_png(img)); }

image crop(const image& img, int y0, int x0, int h, int w) {
  if (y0 < 0 || x0 < 0 || y0 + h > img.height() || x0 + w > img.width()) {
    throw shape_error("crop " + std::to_string(h) + "x" + std::to_string(w) + " at (" +
                      std::to_string(y0) + "," + std::to_string(x0) + ") exceeds " +
                      std::to_string(img.height()) + "x" + std::to_string(img.width()));
  }
  image out(h, w);
  for (int y = 0; y < h; ++y) {
    const auto* src = img.data().data() + (static_cast<std::size_t>(y0 + y) * img.width() + x0) * 3;
    std::memcpy(out.data().data() + static_cast<std::size_t>(y) * w * 3, src,
                static_cast<std::size_t>(w) * 3);
  }
  return out;
}

image center_crop(const image& img, int h, int w) {
  return crop(img, (img.height() - h) / 2, (img.width() - w) / 2, h, w);
}

}  // namespace akb::io
