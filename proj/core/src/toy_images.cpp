#include "laduree/toy_images.hpp"

#include "laduree/errors.hpp"
#include "laduree/image.hpp"
#include "laduree/rng.hpp"

#include <array>
#include <cmath>

namespace laduree {

namespace {

using Colour = std::array<double, 3>;

Colour random_colour(Rng& rng) { return {rng.uniform(), rng.uniform(), rng.uniform()}; }

Image make_one(int side, Rng& rng) {
  Image img(Shape3{3, side, side});
  const Colour a = random_colour(rng);
  const Colour b = random_colour(rng);
  const double angle = 2.0 * 3.141592653589793 * rng.uniform();
  const double gx = std::cos(angle), gy = std::sin(angle);

  struct Blob {
    double cx, cy, radius;
    Colour colour;
    double weight;
  };
  std::array<Blob, 3> blobs{};
  for (auto& bl : blobs) {
    bl = Blob{rng.uniform(), rng.uniform(), 0.1 + 0.25 * rng.uniform(), random_colour(rng), 0.4 + 0.5 * rng.uniform()};
  }
  const bool disc = rng.uniform() < 0.5;
  const double sx = 0.2 + 0.6 * rng.uniform(), sy = 0.2 + 0.6 * rng.uniform();
  const double size = 0.1 + 0.15 * rng.uniform();
  const Colour shape_colour = random_colour(rng);

  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const double u = (x + 0.5) / side, v = (y + 0.5) / side;
      const double g = 0.5 + 0.5 * ((u - 0.5) * gx + (v - 0.5) * gy) * 1.4;
      Colour px{};
      for (int c = 0; c < 3; ++c) px[c] = a[c] * (1.0 - g) + b[c] * g;
      for (const auto& bl : blobs) {
        const double d2 = ((u - bl.cx) * (u - bl.cx) + (v - bl.cy) * (v - bl.cy)) / (bl.radius * bl.radius);
        const double w = bl.weight * std::exp(-d2);
        for (int c = 0; c < 3; ++c) px[c] = px[c] * (1.0 - w) + bl.colour[c] * w;
      }
      const bool inside = disc ? (u - sx) * (u - sx) + (v - sy) * (v - sy) < size * size
                               : std::abs(u - sx) < size && std::abs(v - sy) < size * 0.7;
      if (inside) px = shape_colour;
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = px[c];
    }
  }
  return to_8bit_grid(img);
}

}  // namespace

std::vector<Image> make_toy_images(int count, int side, std::uint64_t seed) {
  if (count < 1 || side < 1) throw ValidationError("toy image count and side must be positive");
  Rng rng(seed);
  std::vector<Image> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(make_one(side, rng));
  return out;
}

}  // namespace laduree
