#include "wmf/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>

namespace wmf {

Image::Image(int c, int h, int w, float fill)
    : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

float quantize8(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return std::nearbyint(c * 255.0f) / 255.0f;
}

Image quantized(const Image& img) {
  Image out = img;
  for (float& v : out.data) v = quantize8(v);
  return out;
}

namespace {

png_uint_32 format_for(int channels) {
  switch (channels) {
    case 1: return PNG_FORMAT_GRAY;
    case 3: return PNG_FORMAT_RGB;
    case 4: return PNG_FORMAT_RGBA;
    default: fail(ErrorKind::Format, "PNG images must have 1, 3 or 4 channels, got " + std::to_string(channels));
  }
}

}  // namespace

Image read_png(const std::filesystem::path& path) {
  require(std::filesystem::is_regular_file(path), ErrorKind::Io, "cannot read " + path.string());
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str()))
    fail(ErrorKind::Format, path.string() + ": " + png.message);
  const bool color = png.format & PNG_FORMAT_FLAG_COLOR;
  const bool alpha = png.format & PNG_FORMAT_FLAG_ALPHA;
  const int channels = color ? (alpha ? 4 : 3) : (alpha ? 4 : 1);
  png.format = format_for(channels);
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    fail(ErrorKind::Format, path.string() + ": " + msg);
  }
  Image img(channels, static_cast<int>(png.height), static_cast<int>(png.width));
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(c, y, x) = buffer[(static_cast<std::size_t>(y) * img.width + x) * channels + c] / 255.0f;
  return img;
}

Image read_png(const std::filesystem::path& path, int channels) {
  Image img = read_png(path);
  require(img.channels == channels, ErrorKind::Format,
          path.string() + ": expected " + std::to_string(channels) + " channel(s), found " +
              std::to_string(img.channels));
  return img;
}

void write_png(const std::filesystem::path& path, const Image& img) {
  require(img.height > 0 && img.width > 0, ErrorKind::Input, "cannot write an empty image");
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = format_for(img.channels);
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(png));
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        buffer[(static_cast<std::size_t>(y) * img.width + x) * img.channels + c] =
            static_cast<png_byte>(std::lround(quantize8(img.at(c, y, x)) * 255.0f));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, buffer.data(), 0, nullptr))
    fail(ErrorKind::Io, path.string() + ": " + png.message);
}

Image resize_bilinear(const Image& img, int height, int width) {
  require(height > 0 && width > 0, ErrorKind::Input, "resize target must be positive");
  if (height == img.height && width == img.width) return img;
  Image out(img.channels, height, width);
  const double sy = static_cast<double>(img.height) / height, sx = static_cast<double>(img.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < img.channels; ++c) {
        const double top = img.at(c, y0, x0) * (1 - wx) + img.at(c, y0, x1) * wx;
        const double bottom = img.at(c, y1, x0) * (1 - wx) + img.at(c, y1, x1) * wx;
        out.at(c, y, x) = static_cast<float>(top * (1 - wy) + bottom * wy);
      }
    }
  }
  return out;
}

Tensor to_tensor(const std::vector<Image>& images, DType dtype) {
  require(!images.empty(), ErrorKind::Input, "no images to stack");
  const Image& first = images.front();
  Tensor t = Tensor::zeros({static_cast<std::int64_t>(images.size()), first.channels, first.height, first.width}, dtype);
  const std::size_t per = first.data.size();
  dispatch(dtype, [&]<class T>() {
    T* dst = t.data<T>().data();
    for (std::size_t b = 0; b < images.size(); ++b) {
      require(images[b].same_shape(first), ErrorKind::Shape, "images in a batch must share a shape");
      for (std::size_t i = 0; i < per; ++i) dst[b * per + i] = static_cast<T>(images[b].data[i]);
    }
  });
  return t;
}

Image from_tensor(const Tensor& t, std::int64_t index) {
  require(t.rank() == 4 && index >= 0 && index < t.dim(0), ErrorKind::Shape, "from_tensor expects (b, c, h, w)");
  Image img(static_cast<int>(t.dim(1)), static_cast<int>(t.dim(2)), static_cast<int>(t.dim(3)));
  const std::size_t per = img.data.size(), offset = static_cast<std::size_t>(index) * per;
  for (std::size_t i = 0; i < per; ++i) img.data[i] = static_cast<float>(t.at(offset + i));
  return img;
}

std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir) {
  require(std::filesystem::is_directory(dir), ErrorKind::Io, "not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".png") out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace wmf
