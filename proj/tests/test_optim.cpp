#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "dimlab/dimmers.hpp"
#include "dimlab/optim.hpp"
#include "support/gradcheck.hpp"

using namespace dimlab;

namespace {

HdrImage random_target(Index h, Index w, std::mt19937_64& rng, double hi = 4000.0) {
  return HdrImage({oracle::random_raster(h, w, rng, 0, hi), oracle::random_raster(h, w, rng, 0, hi),
                   oracle::random_raster(h, w, rng, 0, hi)},
                  1.0);
}

// Straight transcription of the loss on top of a direct convolution.
double scalar_loss(const Eigen::VectorXd& b, const HdrImage& target, const DisplayConfig& cfg, const LossConfig& lc) {
  const auto& l = *cfg.layout;
  Raster s = Raster::Zero(l.panel_height(), l.panel_width());
  for (Index k = 0; k < b.size(); ++k) {
    s(l.centers()[static_cast<std::size_t>(k)].row, l.centers()[static_cast<std::size_t>(k)].col) =
        b[k] * l.max_drive_nits();
  }
  const Raster d = oracle::direct_conv(s, cfg.psf.kernel(), cfg.boundary);
  long double sum = 0;
  for (int c = 0; c < 3; ++c) {
    for (Index y = 0; y < d.rows(); ++y) {
      for (Index x = 0; x < d.cols(); ++x) {
        const double dv = std::max(d(y, x), 0.0);
        const double in = target.channel(c)(y, x);
        const double shown = dv < 1e-6 ? dv : std::min(std::max(in, cfg.leak_floor * dv), dv);
        const double r = (shown - in) / cfg.peak_nits;
        sum += std::abs(r) < lc.delta ? 0.5 * r * r / lc.delta : std::abs(r) - 0.5 * lc.delta;
      }
    }
  }
  const double reg = static_cast<double>(sum / (3.0L * static_cast<long double>(d.size())));
  return reg + lc.p_a * lc.beta * b.sum() / static_cast<double>(b.size());
}

}  // namespace

TEST_CASE("smooth L1") {
  CHECK(smooth_l1(0.5, 1.0) == 0.125);
  CHECK(smooth_l1(-2.0, 1.0) == 1.5);
  CHECK(smooth_l1(0.2, 0.1) == doctest::Approx(0.15));
}

TEST_CASE("loss is zero when the backlight covers the target") {
  auto cfg = default_display(40, 48, 3, 4, 4000.0, 0.0);
  std::mt19937_64 rng(1);
  const Backlight b = Backlight::constant(cfg.layout, 0.8);
  // Anything below D is reproduced exactly when eps = 0.
  const HdrImage raw = random_target(40, 48, rng);
  const HdrImage target = simulate(raw, b, cfg);
  LossConfig lc;
  CHECK(loss(b, target, cfg, lc) <= 1e-25);
}

TEST_CASE("all-on backlight has unit magnitude term") {
  const auto cfg = default_display(30, 30, 3, 3);
  std::mt19937_64 rng(2);
  const HdrImage target = random_target(30, 30, rng);
  LossConfig lc;
  lc.p_a = 1.0;
  const auto t = loss_terms(Backlight::constant(cfg.layout, 1.0), target, cfg, lc);
  CHECK(t.mag == 1.0);
  CHECK(t.total - t.reg == 20.0);
}

TEST_CASE("loss matches a scalar re-implementation") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    auto g = oracle::random_grad_instance(rng, false);
    if (trial % 2) g.cfg.boundary = Boundary::kCircular;
    const double got = LossModel(g.target, g.cfg, g.lc).eval(g.b).total;
    CHECK(std::abs(got - scalar_loss(g.b, g.target, g.cfg, g.lc)) <= 1e-12);
  }
}

TEST_CASE("loss properties") {
  std::mt19937_64 rng(4);
  const auto cfg = default_display(24, 24, 2, 2);
  const HdrImage target = random_target(24, 24, rng);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd v(4);
    for (auto& x : v) x = u(rng);
    const Backlight b(cfg.layout, v);
    double prev = -1;
    for (double pa : {0.0, 0.3, 0.6, 1.0, 1.25}) {
      LossConfig lc;
      lc.p_a = pa;
      const auto t = loss_terms(b, target, cfg, lc);
      CHECK(t.total >= 0.0);
      CHECK(t.mag >= 0.0);
      CHECK(t.mag <= 1.0);
      CHECK(t.total >= prev);
      prev = t.total;
    }
  }
  LossConfig bad;
  bad.p_a = 1.5;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = {};
  bad.delta = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  CHECK_THROWS_AS(LossModel(scaled(target, 2.0), cfg, LossConfig{}), InvalidArgument);
}

TEST_CASE("gradient of a black target is the power term") {
  const auto cfg = default_display(30, 40, 3, 4, 4000.0, 0.0);
  const HdrImage black(40, 30);
  black.validate();
  HdrImage target = black;
  target.set_calibration(1.0);
  LossConfig lc;
  lc.p_a = 0.7;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.01, 1);
  Eigen::VectorXd v(12);
  for (auto& x : v) x = u(rng);
  const Eigen::VectorXd g = loss_grad(Backlight(cfg.layout, v), target, cfg, lc);
  CHECK((g.array() == 0.7 * 20.0 / 12.0).all());
}

TEST_CASE("doubling beta doubles the magnitude component") {
  std::mt19937_64 rng(6);
  const auto cfg = default_display(32, 32, 3, 3);
  const HdrImage target = random_target(32, 32, rng);
  const Backlight b = Backlight::constant(cfg.layout, 0.4);
  LossConfig lc;
  lc.p_a = 0.5;
  LossConfig none = lc;
  none.p_a = 0.0;
  const Eigen::VectorXd reg = loss_grad(b, target, cfg, none);
  const Eigen::VectorXd g1 = loss_grad(b, target, cfg, lc);
  lc.beta *= 2;
  const Eigen::VectorXd g2 = loss_grad(b, target, cfg, lc);
  for (Index k = 0; k < 9; ++k) {
    const double m1 = g1[k] - reg[k], m2 = g2[k] - reg[k];
    // Exact up to the rounding of the subtraction above.
    CHECK(std::abs(m2 - 2 * m1) <= 4e-16 * std::abs(m2) + 4e-16 * std::abs(reg[k]));
  }
}

TEST_CASE("analytic gradient matches central differences") {
  std::mt19937_64 rng(7);
  int checked = 0;
  for (int trial = 0; trial < 40; ++trial) {
    auto g = oracle::random_grad_instance(rng, false);
    if (trial % 3 == 0) g.cfg.boundary = Boundary::kCircular;
    const auto r = oracle::check_gradient(g);
    CHECK(r.max_rel <= 1e-4);
    checked += r.checked;
  }
  CHECK(checked > 300);
}

TEST_CASE("PU-domain gradient matches central differences") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    auto g = oracle::random_grad_instance(rng, false);
    g.lc.domain = LossDomain::kPu;
    CHECK(oracle::check_gradient(g).max_rel <= 1e-3);
  }
}

TEST_CASE("Adam step") {
  Adam adam(2, 0.1, 0.9, 0.99);
  Eigen::VectorXd p(2), g(2);
  p << 1.0, 1.0;
  g << 3.0, -0.01;
  adam.step(p, g);
  // First bias-corrected step moves every coordinate by lr against the gradient sign.
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(1.1).epsilon(1e-5));
}

TEST_CASE("optimizer drives a black target to zero") {
  auto cfg = default_display(32, 32, 3, 3, 4000.0, 0.0);
  HdrImage target(32, 32);
  target.set_calibration(1.0);
  LossConfig lc;
  lc.p_a = 0.5;
  OptimConfig oc;
  oc.init = InitKind::kConstant;
  oc.init_value = 0.8;
  oc.max_iters = 3000;
  const auto res = optimize_backlight(target, cfg, lc, oc);
  CHECK(res.converged);
  CHECK(res.backlight.values().maxCoeff() == 0.0);
  for (std::size_t i = 1; i < res.trace.size(); ++i) {
    CHECK(res.trace[i].terms.total <= res.trace[i - 1].terms.total);
  }
}

TEST_CASE("optimizer beats the baselines and respects the box") {
  std::mt19937_64 rng(9);
  const auto cfg = default_display(48, 64, 3, 4);
  for (int trial = 0; trial < 3; ++trial) {
    const HdrImage target = random_target(48, 64, rng, 1000.0 + 1500.0 * trial);
    LossConfig lc;
    OptimConfig oc;
    oc.max_iters = 400;
    const auto res = optimize_backlight(target, cfg, lc, oc);
    CHECK(res.backlight.values().minCoeff() >= 0.0);
    CHECK(res.backlight.values().maxCoeff() <= 1.0);
    const double got = loss(res.backlight, target, cfg, lc);
    CHECK(got == res.trace[static_cast<std::size_t>(res.best_iteration)].terms.total);
    CHECK(got <= loss(dim_max(target, cfg), target, cfg, lc) + 1e-6);
    CHECK(got <= loss(dim_avg(target, cfg), target, cfg, lc) + 1e-6);
  }
}

TEST_CASE("mean drive falls as the power weight rises") {
  std::mt19937_64 rng(10);
  const auto cfg = default_display(48, 64, 3, 4);
  const HdrImage target = random_target(48, 64, rng, 600.0);
  OptimConfig oc;
  oc.max_iters = 600;
  double prev = 2.0;
  for (double pa : {0.0, 0.01, 0.05, 0.25, 1.0}) {
    LossConfig lc;
    lc.p_a = pa;
    const double mean = optimize_backlight(target, cfg, lc, oc).backlight.values().mean();
    CHECK(mean <= prev + 1e-3);
    prev = mean;
  }
}

TEST_CASE("non-finite loss aborts with the trace") {
  const auto cfg = default_display(16, 16, 2, 2);
  std::mt19937_64 rng(11);
  LossConfig lc;
  lc.p_a = 1.0;
  lc.m_max = 1e-320;
  OptimConfig oc;
  try {
    optimize_backlight(random_target(16, 16, rng), cfg, lc, oc);
    FAIL("expected OptimizationError");
  } catch (const OptimizationError& e) {
    CHECK(e.trace().size() == 1);
  }
}

TEST_CASE("trace CSV") {
  const auto path = std::filesystem::temp_directory_path() / "dimlab_trace.csv";
  write_trace_csv(path, {{0, {1.5, 0.5, 0.05}}, {1, {1.0, 0.25, 0.0375}}});
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "iteration,L,L_reg,L_mag");
  std::getline(in, line);
  CHECK(line == "0,1.5,0.5,0.050000000000000003");
  std::filesystem::remove(path);
  CHECK(parse_init_kind("from_avg") == InitKind::kFromAvg);
  CHECK(parse_loss_domain("pu") == LossDomain::kPu);
}
