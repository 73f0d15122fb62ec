#pragma once

// Independent reference implementations used only by tests.

#include <cmath>
#include <random>
#include <vector>

#include "dimlab/fftconv.hpp"

namespace dimlab::oracle {

// out(i, j) = sum_{a, b} k(a, b) * img(i - a + Hg/2, j - b + Wg/2)
inline Raster direct_conv(const Raster& img, const Raster& k, Boundary boundary) {
  const Index H = img.rows(), W = img.cols();
  const Index ar = k.rows() / 2, ac = k.cols() / 2;
  Raster out = Raster::Zero(H, W);
  for (Index i = 0; i < H; ++i) {
    for (Index j = 0; j < W; ++j) {
      long double acc = 0;
      for (Index a = 0; a < k.rows(); ++a) {
        for (Index b = 0; b < k.cols(); ++b) {
          Index y = i - a + ar, x = j - b + ac;
          if (boundary == Boundary::kCircular) {
            y = ((y % H) + H) % H;
            x = ((x % W) + W) % W;
          } else if (y < 0 || y >= H || x < 0 || x >= W) {
            continue;
          }
          acc += static_cast<long double>(k(a, b)) * img(y, x);
        }
      }
      out(i, j) = static_cast<double>(acc);
    }
  }
  return out;
}

inline Raster random_raster(Index rows, Index cols, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Raster r(rows, cols);
  for (Index i = 0; i < r.size(); ++i) r.data()[i] = u(rng);
  return r;
}

inline double rel_err(const Raster& got, const Raster& want) {
  const double scale = std::max(want.abs().maxCoeff(), 1e-300);
  return (got - want).abs().maxCoeff() / scale;
}

// Multi-scale SSIM computed window by window: direct 2-D Gaussian weights,
// two-pass moments about the local mean, long double accumulation.
inline double naive_ms_ssim(Raster x, Raster y, double range, int max_scales = 5) {
  static const double kW[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  long double g[11][11];
  long double gs = 0;
  for (int a = 0; a < 11; ++a) {
    for (int b = 0; b < 11; ++b) {
      g[a][b] = std::exp(-((a - 5) * (a - 5) + (b - 5) * (b - 5)) / (2.0L * 1.5L * 1.5L));
      gs += g[a][b];
    }
  }
  for (auto& row : g) {
    for (auto& v : row) v /= gs;
  }
  int scales = 0;
  while (scales < max_scales && std::min(x.rows(), x.cols()) >= (Index{11} << scales)) ++scales;
  double wsum = 0;
  for (int s = 0; s < scales; ++s) wsum += kW[s];
  const long double c1 = std::pow(0.01L * range, 2), c2 = std::pow(0.03L * range, 2);
  long double score = 1;
  for (int s = 0; s < scales; ++s) {
    long double lsum = 0, csum = 0;
    const Index oh = x.rows() - 10, ow = x.cols() - 10;
    for (Index i = 0; i < oh; ++i) {
      for (Index j = 0; j < ow; ++j) {
        long double mx = 0, my = 0;
        for (int a = 0; a < 11; ++a) {
          for (int b = 0; b < 11; ++b) {
            mx += g[a][b] * x(i + a, j + b);
            my += g[a][b] * y(i + a, j + b);
          }
        }
        long double vx = 0, vy = 0, cxy = 0;
        for (int a = 0; a < 11; ++a) {
          for (int b = 0; b < 11; ++b) {
            const long double dx = x(i + a, j + b) - mx, dy = y(i + a, j + b) - my;
            vx += g[a][b] * dx * dx;
            vy += g[a][b] * dy * dy;
            cxy += g[a][b] * dx * dy;
          }
        }
        lsum += (2 * mx * my + c1) / (mx * mx + my * my + c1);
        csum += (2 * cxy + c2) / (vx + vy + c2);
      }
    }
    const long double n = static_cast<long double>(oh * ow);
    const long double w = kW[s] / wsum;
    score *= std::pow(std::max(csum / n, 0.0L), w);
    if (s == scales - 1) score *= std::pow(std::max(lsum / n, 0.0L), w);
    Raster dx(x.rows() / 2, x.cols() / 2), dy(dx.rows(), dx.cols());
    for (Index i = 0; i < dx.rows(); ++i) {
      for (Index j = 0; j < dx.cols(); ++j) {
        dx(i, j) = (x(2 * i, 2 * j) + x(2 * i + 1, 2 * j) + x(2 * i, 2 * j + 1) + x(2 * i + 1, 2 * j + 1)) / 4;
        dy(i, j) = (y(2 * i, 2 * j) + y(2 * i + 1, 2 * j) + y(2 * i, 2 * j + 1) + y(2 * i + 1, 2 * j + 1)) / 4;
      }
    }
    x = dx;
    y = dy;
  }
  return static_cast<double>(score);
}

}  // namespace dimlab::oracle
