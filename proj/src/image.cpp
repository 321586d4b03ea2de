#include "akb/image.hpp"

#include <string>

namespace akb {

image::image(int height, int width, std::uint8_t fill) {
  if (height <= 0 || width <= 0) {
    throw shape_error("image dimensions must be positive, got " + std::to_string(height) + "x" +
                      std::to_string(width));
  }
  height_ = height;
  width_ = width;
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

image::image(int height, int width, std::vector<std::uint8_t> data) {
  if (height <= 0 || width <= 0) {
    throw shape_error("image dimensions must be positive");
  }
  if (data.size() != static_cast<std::size_t>(height) * width * channels) {
    throw shape_error("image buffer has " + std::to_string(data.size()) + " bytes, expected " +
                      std::to_string(static_cast<std::size_t>(height) * width * channels));
  }
  height_ = height;
  width_ = width;
  data_ = std::move(data);
}

}  // namespace akb
