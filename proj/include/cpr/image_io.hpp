#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cpr/kernels.hpp"

namespace cpr {

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t* pixel(int x, int y) { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* pixel(int x, int y) const {
    return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
};

/// Reads PNG or binary PPM (P6), chosen by extension.
Image read_image(const std::filesystem::path& path);
/// Writes PNG or binary PPM (P6), chosen by extension.
void write_image(const Image& image, const std::filesystem::path& path);

/// Network input: channels scaled to [-0.5, 0.5].
Tensor3<float> to_tensor(const Image& image);
Image flip_horizontal(const Image& image);

}  // namespace cpr
