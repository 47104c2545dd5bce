#pragma once

// Planar float images in [0, 1] and the 8-bit PNG boundary.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wmf/tensor.hpp"

namespace wmf {

struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;  // channel-major (c, y, x)

  Image() = default;
  Image(int c, int h, int w, float fill = 0.0f);

  std::size_t pixels() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
  float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  bool same_shape(const Image& o) const { return channels == o.channels && height == o.height && width == o.width; }
};

// Nearest 8-bit level: round(v * 255) / 255 with clamping to [0, 1].
float quantize8(float v);
Image quantized(const Image& img);

// Reads an 8- or 16-bit PNG. Gray stays 1 channel, gray+alpha and palette
// images are expanded, RGB stays 3 and RGBA stays 4.
Image read_png(const std::filesystem::path& path);
// Reads and requires an exact channel count (1 for masks, 3 for images).
Image read_png(const std::filesystem::path& path, int channels);
// 8-bit PNG with 1, 3 or 4 channels. Output bytes depend only on pixel values.
void write_png(const std::filesystem::path& path, const Image& img);

// Bilinear resize (pixel centers aligned).
Image resize_bilinear(const Image& img, int height, int width);

// Stacks same-shaped images into a (b, c, h, w) tensor.
Tensor to_tensor(const std::vector<Image>& images, DType dtype = default_dtype());
// Extracts batch item `index` of a (b, c, h, w) tensor.
Image from_tensor(const Tensor& t, std::int64_t index = 0);

// Sorted regular *.png files of a directory.
std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir);

}  // namespace wmf
