#include "laduree/image.hpp"

#include "laduree/errors.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

namespace laduree {

std::string to_string(const Shape3& shape) {
  return "(" + std::to_string(shape.channels) + "," + std::to_string(shape.height) + "," +
         std::to_string(shape.width) + ")";
}

Tensor3::Tensor3(Shape3 s, Vector v) : shape(s), values(std::move(v)) {
  if (values.size() != shape.numel()) {
    throw ValidationError("tensor data size " + std::to_string(values.size()) +
                          " does not match shape " + to_string(shape));
  }
}

Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&png, path.string().c_str()) == 0) {
    throw CorruptInputError("cannot read PNG " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(png));
  if (png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr) == 0) {
    png_image_free(&png);
    throw CorruptInputError("cannot decode PNG " + path.string() + ": " + png.message);
  }
  const int height = static_cast<int>(png.height);
  const int width = static_cast<int>(png.width);
  Image image(Shape3{3, height, width});
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) {
        image.at(c, y, x) = buffer[(static_cast<std::size_t>(y) * width + x) * 3 + c] / 255.0;
      }
    }
  }
  return image;
}

namespace {

png_byte to_byte(double v) {
  const double clamped = std::clamp(v, 0.0, 1.0);
  return static_cast<png_byte>(std::lround(clamped * 255.0));
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.shape.channels != 3) {
    throw ValidationError("write_png expects 3 channels, got " + to_string(image.shape));
  }
  const int height = image.shape.height;
  const int width = image.shape.width;
  std::vector<png_byte> buffer(static_cast<std::size_t>(height) * width * 3);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) {
        buffer[(static_cast<std::size_t>(y) * width + x) * 3 + c] = to_byte(image.at(c, y, x));
      }
    }
  }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(width);
  png.height = static_cast<png_uint_32>(height);
  png.format = PNG_FORMAT_RGB;
  if (png_image_write_to_file(&png, path.string().c_str(), 0, buffer.data(), 0, nullptr) == 0) {
    throw RuntimeError("cannot write PNG " + path.string() + ": " + png.message);
  }
}

double mse(const Tensor3& a, const Tensor3& b) {
  if (!(a.shape == b.shape)) {
    throw ValidationError("mse shape mismatch: " + to_string(a.shape) + " vs " + to_string(b.shape));
  }
  if (a.values.size() == 0) throw ValidationError("mse of empty tensors");
  return (a.values - b.values).squaredNorm() / static_cast<double>(a.values.size());
}

double psnr(const Tensor3& a, const Tensor3& b) {
  const double err = mse(a, b);
  if (err == 0.0) return kInfinitePsnr;
  return 10.0 * std::log10(1.0 / err);
}

std::string format_psnr(double db) {
  if (std::isinf(db)) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", db);
  return buf;
}

Image to_8bit_grid(const Image& image) {
  Image out = image;
  for (auto& v : out.values) v = to_byte(v) / 255.0;
  return out;
}

}  // namespace laduree
