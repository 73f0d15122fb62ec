#include "dimlab/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace dimlab {

namespace {

struct Tint {
  double r, g, b;
};

Tint random_tint(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.45, 1.0);
  const Tint t{u(rng), u(rng), u(rng)};
  // Unit luminance keeps the level draw meaningful.
  const double y = kLumaR * t.r + kLumaG * t.g + kLumaB * t.b;
  return {t.r / y, t.g / y, t.b / y};
}

double log_uniform(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  return std::exp(u(rng));
}

}  // namespace

HdrImage synth_scene(Index height, Index width, std::uint64_t seed) {
  if (height < 1 || width < 1) throw InvalidArgument("synth_scene: empty size");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double h = static_cast<double>(height), w = static_cast<double>(width);
  std::array<Raster, 3> rgb;
  for (auto& c : rgb) c = Raster::Zero(height, width);
  auto paint = [&](Index y, Index x, double level, const Tint& t) {
    rgb[0](y, x) = level * t.r;
    rgb[1](y, x) = level * t.g;
    rgb[2](y, x) = level * t.b;
  };

  // Background: vertical ramp between two levels.
  const double top = log_uniform(rng, 5.0, 600.0), bottom = log_uniform(rng, 0.5, 80.0);
  const Tint bg = random_tint(rng);
  for (Index y = 0; y < height; ++y) {
    const double a = static_cast<double>(y) / std::max(1.0, h - 1);
    const double level = std::exp((1 - a) * std::log(top) + a * std::log(bottom));
    for (Index x = 0; x < width; ++x) paint(y, x, level, bg);
  }

  // Textured rectangles; some are near black.
  const int rects = 3 + static_cast<int>(rng() % 5);
  for (int i = 0; i < rects; ++i) {
    const double level = u(rng) < 0.25 ? log_uniform(rng, 0.01, 0.5) : log_uniform(rng, 1.0, 1500.0);
    const Tint t = random_tint(rng);
    const Index y0 = static_cast<Index>(u(rng) * h * 0.8), x0 = static_cast<Index>(u(rng) * w * 0.8);
    const Index y1 = std::min(height, y0 + 1 + static_cast<Index>((0.1 + 0.4 * u(rng)) * h));
    const Index x1 = std::min(width, x0 + 1 + static_cast<Index>((0.1 + 0.4 * u(rng)) * w));
    const double fy = 2 * std::numbers::pi * (1 + 6 * u(rng)) / h, fx = 2 * std::numbers::pi * (1 + 6 * u(rng)) / w;
    const double depth = 0.6 * u(rng);
    for (Index y = y0; y < y1; ++y) {
      for (Index x = x0; x < x1; ++x) {
        const double tex = 1 + depth * std::sin(fy * static_cast<double>(y)) * std::cos(fx * static_cast<double>(x));
        paint(y, x, level * tex, t);
      }
    }
  }

  // Specular highlights: small Gaussian blobs added on top.
  const int blobs = 1 + static_cast<int>(rng() % 4);
  for (int i = 0; i < blobs; ++i) {
    const double peak = log_uniform(rng, 800.0, 30000.0);
    const double cy = u(rng) * h, cx = u(rng) * w;
    const double s = std::max(1.0, (0.01 + 0.05 * u(rng)) * std::min(h, w));
    const Tint t = random_tint(rng);
    const Index r = static_cast<Index>(std::ceil(4 * s));
    for (Index y = std::max<Index>(0, static_cast<Index>(cy) - r); y < std::min(height, static_cast<Index>(cy) + r + 1); ++y) {
      for (Index x = std::max<Index>(0, static_cast<Index>(cx) - r); x < std::min(width, static_cast<Index>(cx) + r + 1); ++x) {
        const double d2 = (static_cast<double>(y) - cy) * (static_cast<double>(y) - cy) +
                          (static_cast<double>(x) - cx) * (static_cast<double>(x) - cx);
        const double v = peak * std::exp(-d2 / (2 * s * s));
        rgb[0](y, x) += v * t.r;
        rgb[1](y, x) += v * t.g;
        rgb[2](y, x) += v * t.b;
      }
    }
  }
  return HdrImage(std::move(rgb), 1.0);
}

std::vector<HdrImage> synth_dataset(Index height, Index width, std::size_t count, std::uint64_t first_seed) {
  std::vector<HdrImage> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(synth_scene(height, width, first_seed + i));
  return out;
}

}  // namespace dimlab
