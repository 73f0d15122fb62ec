#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "dimlab/optim.hpp"
#include "support/oracles.hpp"

namespace dimlab::oracle {

struct GradCheck {
  double max_rel = 0.0;  // over checked coordinates
  int checked = 0;
  int skipped = 0;       // kink coordinates
};

inline constexpr double kFdStep = 1e-4;
inline constexpr double kKinkMargin = 1e-6;
// Below this magnitude both gradients are treated as zero; central
// differences of an O(1) loss carry ~1e-12 of rounding noise at h = 1e-4.
inline constexpr double kGradFloor = 1e-10;

/// Random 32x32 instance with a 3x3 LED grid: uniform target with dark
/// holes, random drive, random leak floor, power weight and domain.
struct GradInstance {
  DisplayConfig cfg;
  HdrImage target;
  LossConfig lc;
  Eigen::VectorXd b;
};

inline GradInstance random_grad_instance(std::mt19937_64& rng, bool allow_pu = true) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GradInstance g;
  const double eps = u(rng) < 0.5 ? 0.001 : 0.05;
  g.cfg = default_display(32, 32, 3, 3, 4000.0, eps);
  std::array<Raster, 3> rgb;
  for (auto& c : rgb) {
    c = random_raster(32, 32, rng, 0.0, 4000.0);
    for (Index i = 0; i < c.size(); ++i) {
      if (u(rng) < 0.1) c.data()[i] = 0.0;
    }
  }
  g.target = HdrImage(std::move(rgb), 1.0);
  g.lc.p_a = u(rng) < 0.3 ? 0.0 : u(rng);
  g.lc.delta = u(rng) < 0.5 ? 1.0 : 0.1;
  if (allow_pu && u(rng) < 0.25) g.lc.domain = LossDomain::kPu;
  g.b.resize(9);
  for (Index k = 0; k < 9; ++k) g.b[k] = 0.05 + 0.9 * u(rng);
  return g;
}

inline GradCheck check_gradient(const GradInstance& g) {
  const LossModel model(g.target, g.cfg, g.lc);
  Eigen::VectorXd analytic;
  model.eval(g.b, &analytic);
  const auto kink = model.near_kink(g.b, kKinkMargin);
  GradCheck out;
  for (Index k = 0; k < g.b.size(); ++k) {
    if (kink[static_cast<std::size_t>(k)]) {
      ++out.skipped;
      continue;
    }
    Eigen::VectorXd hi = g.b, lo = g.b;
    hi[k] += kFdStep;
    lo[k] -= kFdStep;
    const double fd = (model.eval(hi).total - model.eval(lo).total) / (2 * kFdStep);
    const double scale = std::max({std::abs(fd), std::abs(analytic[k]), kGradFloor});
    out.max_rel = std::max(out.max_rel, std::abs(fd - analytic[k]) / scale);
    ++out.checked;
  }
  return out;
}

}  // namespace dimlab::oracle
