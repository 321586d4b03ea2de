#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "akb/image.hpp"

namespace akb::io {

std::vector<std::uint8_t> encode_png(const image& img);
image decode_png(std::span<const std::uint8_t> bytes);

/// Decodes a complete JPEG file (any colour space libjpeg can convert to RGB).
image decode_jpeg_file(std::span<const std::uint8_t> bytes);

/// Reads .png / .jpg / .jpeg by signature, not extension.
image read_image(const std::string& path);
void write_png(const std::string& path, const image& img);

/// Center crop to (h, w); throws shape_error if the image is smaller.
image center_crop(const image& img, int h, int w);
/// Crop with top-left corner (y0, x0).
image crop(const image& img, int y0, int x0, int h, int w);

}  // namespace akb::io
