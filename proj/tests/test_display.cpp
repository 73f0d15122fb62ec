#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "dimlab/display.hpp"
#include "dimlab/display_io.hpp"
#include "support/oracles.hpp"

using namespace dimlab;

namespace {

LayoutPtr grid(Index lr, Index lc, Index h, Index w, double drive = 4000.0) {
  return std::make_shared<const BacklightLayout>(lr, lc, h, w, drive);
}

DisplayConfig small_display(Index h, Index w, Index lr, Index lc, const Psf& psf, double eps = 0.001) {
  DisplayConfig cfg;
  cfg.layout = grid(lr, lc, h, w);
  cfg.psf = psf;
  cfg.leak_floor = eps;
  cfg.peak_nits = 4000.0;
  return cfg;
}

Backlight random_backlight(const LayoutPtr& l, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::VectorXd v(l->size());
  for (Index k = 0; k < v.size(); ++k) v[k] = u(rng);
  return Backlight(l, v);
}

HdrImage random_target(Index h, Index w, std::mt19937_64& rng, double peak = 4000.0) {
  return HdrImage({oracle::random_raster(h, w, rng, 0, peak), oracle::random_raster(h, w, rng, 0, peak),
                   oracle::random_raster(h, w, rng, 0, peak)},
                  1.0);
}


}  // namespace

TEST_CASE("grid layout tiles the panel with one centre per segment") {
  for (auto [lr, lc, h, w] : {std::array<Index, 4>{12, 22, 1080, 1920}, {3, 3, 32, 32}, {5, 7, 23, 50}, {1, 1, 4, 9}}) {
    const BacklightLayout l(lr, lc, h, w, 100.0);
    CHECK(l.size() == lr * lc);
    const auto map = l.segment_map();
    std::vector<Index> counts(static_cast<std::size_t>(l.size()), 0);
    for (Index r = 0; r < h; ++r) {
      for (Index c = 0; c < w; ++c) {
        const auto k = map(r, c);
        REQUIRE(k >= 0);
        REQUIRE(k < l.size());
        ++counts[static_cast<std::size_t>(k)];
        if ((r * 31 + c) % 17 == 0) CHECK(l.segment_of(r, c) == k);
      }
    }
    Index total = 0;
    for (Index k = 0; k < l.size(); ++k) {
      CHECK(counts[static_cast<std::size_t>(k)] > 0);
      total += counts[static_cast<std::size_t>(k)];
      const auto& ctr = l.centers()[static_cast<std::size_t>(k)];
      CHECK(map(ctr.row, ctr.col) == k);
    }
    CHECK(total == h * w);
  }
  CHECK_THROWS_AS(BacklightLayout(0, 3, 10, 10, 1.0), InvalidArgument);
  CHECK_THROWS_AS(BacklightLayout(11, 3, 10, 10, 1.0), InvalidArgument);
  CHECK_THROWS_AS(BacklightLayout(2, 2, 10, 10, 0.0), InvalidArgument);
}

TEST_CASE("default 1920x1080 layout has ~87x90 pixel segments") {
  const BacklightLayout l(12, 22, 1080, 1920, 4000.0);
  CHECK(l.size() == 264);
  CHECK(l.row_edge(1) == 90);
  CHECK(l.col_edge(1) == 87);
  CHECK(l.centers()[0] == PixelCoord{45, 43});
}

TEST_CASE("backlight values are confined to [0, 1]") {
  const auto l = grid(2, 2, 8, 8);
  CHECK_THROWS_AS(Backlight(l, Eigen::VectorXd::Constant(4, 1.0001)), InvalidArgument);
  CHECK_THROWS_AS(Backlight(l, Eigen::VectorXd::Constant(4, -1e-12)), InvalidArgument);
  CHECK_THROWS_AS(Backlight(l, Eigen::VectorXd::Constant(3, 0.5)), InvalidArgument);
  CHECK_NOTHROW(Backlight(l, Eigen::VectorXd::Constant(4, 1.0)));
}

TEST_CASE("sparse backlight raster") {
  const auto l = grid(3, 4, 30, 40, 250.0);
  CHECK((sparse_backlight_raster(Backlight::constant(l, 0.0)) == 0.0).all());

  Eigen::VectorXd one = Eigen::VectorXd::Zero(12);
  one[5] = 1.0;
  const Raster r1 = sparse_backlight_raster(Backlight(l, one));
  CHECK((r1 != 0.0).count() == 1);
  const auto c5 = l->centers()[5];
  CHECK(r1(c5.row, c5.col) == 250.0);

  std::mt19937_64 rng(1);
  const Backlight b = random_backlight(l, rng);
  const Raster r = sparse_backlight_raster(b);
  CHECK((r != 0.0).count() == 12);
  std::set<std::pair<Index, Index>> coords;
  for (Index k = 0; k < 12; ++k) {
    const auto c = l->centers()[static_cast<std::size_t>(k)];
    coords.insert({c.row, c.col});
    CHECK(r(c.row, c.col) == b[k] * 250.0);
  }
  for (Index y = 0; y < 30; ++y) {
    for (Index x = 0; x < 40; ++x) {
      if (r(y, x) != 0.0) CHECK(coords.count({y, x}) == 1);
    }
  }
}

TEST_CASE("diffuse") {
  std::mt19937_64 rng(2);
  SUBCASE("zero backlight gives zero") {
    const auto cfg = small_display(32, 32, 3, 3, Psf::gaussian(2.0, 3.0));
    CHECK((diffuse(Backlight::constant(cfg.layout, 0.0), cfg) == 0.0).all());
  }
  SUBCASE("delta PSF reproduces the sparse raster") {
    const auto cfg = small_display(32, 32, 3, 3, Psf::delta());
    Eigen::VectorXd v = Eigen::VectorXd::Zero(9);
    v[4] = 1.0;
    const Backlight b(cfg.layout, v);
    CHECK(oracle::rel_err(diffuse(b, cfg), sparse_backlight_raster(b)) < 1e-12);
  }
  SUBCASE("3x3 LEDs with a 7x7 PSF match direct convolution") {
    for (Boundary bd : {Boundary::kZeroPad, Boundary::kCircular}) {
      Raster k = oracle::random_raster(7, 7, rng);
      auto cfg = small_display(32, 32, 3, 3, Psf(k));
      cfg.boundary = bd;
      const Backlight b = random_backlight(cfg.layout, rng);
      const Raster want = oracle::direct_conv(sparse_backlight_raster(b), k, bd);
      CHECK(oracle::rel_err(diffuse(b, cfg), want) < 1e-6);
    }
  }
  SUBCASE("raising an LED never lowers any pixel") {
    const auto cfg = small_display(24, 24, 3, 3, Psf(oracle::random_raster(9, 9, rng)));
    for (int trial = 0; trial < 10; ++trial) {
      const Backlight b = random_backlight(cfg.layout, rng);
      Eigen::VectorXd up = b.values();
      const Index k = trial % 9;
      up[k] = std::min(1.0, up[k] + 0.3);
      const Raster d0 = diffuse(b, cfg), d1 = diffuse(Backlight(cfg.layout, up), cfg);
      CHECK((d1 - d0).minCoeff() >= -1e-9 * d0.maxCoeff());
    }
  }
  SUBCASE("layout mismatch is rejected") {
    const auto cfg = small_display(24, 24, 3, 3, Psf::delta());
    CHECK_THROWS_AS(diffuse(Backlight::constant(grid(2, 2, 24, 24), 0.5), cfg), InvalidArgument);
  }
}

TEST_CASE("ideal transmittance and reconstruction") {
  const auto cfg = small_display(4, 4, 1, 1, Psf::delta(), 0.001);
  SUBCASE("leakage through a closed cell") {
    const HdrImage black(4, 4);
    const Raster d = Raster::Constant(4, 4, 1000.0);
    const auto t = ideal_transmittance(black, d, cfg);
    CHECK(reconstruct(d, t).channel(1)(2, 2) == 1.0);
  }
  SUBCASE("dark backlight falls back to full transmittance") {
    const HdrImage img = HdrImage::from_gray(Raster::Constant(4, 4, 7.0), 1.0);
    Raster d = Raster::Constant(4, 4, 10.0);
    d(1, 2) = 0.0;
    d(3, 3) = 5e-7;
    const auto t = ideal_transmittance(img, d, cfg);
    for (int c = 0; c < 3; ++c) {
      CHECK(t[static_cast<std::size_t>(c)](1, 2) == 1.0);
      CHECK(t[static_cast<std::size_t>(c)](3, 3) == 1.0);
      CHECK(t[static_cast<std::size_t>(c)](0, 0) == doctest::Approx(0.7));
    }
  }
  SUBCASE("reconstruct is the per-pixel product") {
    std::mt19937_64 rng(5);
    const Raster d = oracle::random_raster(5, 6, rng, 0, 100);
    Transmittance ones{Raster::Ones(5, 6), Raster::Ones(5, 6), Raster::Ones(5, 6)};
    const HdrImage rep = reconstruct(d, ones);
    for (int c = 0; c < 3; ++c) CHECK((rep.channel(c) == d).all());
    Transmittance zeros{Raster::Zero(5, 6), Raster::Zero(5, 6), Raster::Zero(5, 6)};
    CHECK(reconstruct(d, zeros).max_value() == 0.0);
    Transmittance t{oracle::random_raster(5, 6, rng), oracle::random_raster(5, 6, rng), oracle::random_raster(5, 6, rng)};
    const HdrImage out = reconstruct(d, t);
    for (int c = 0; c < 3; ++c) {
      for (Index y = 0; y < 5; ++y) {
        for (Index x = 0; x < 6; ++x) CHECK(out.channel(c)(y, x) == d(y, x) * t[static_cast<std::size_t>(c)](y, x));
      }
    }
    CHECK_THROWS_AS(reconstruct(Raster::Ones(4, 6), t), InvalidArgument);
  }
}

TEST_CASE("simulate equals the clamp closed form") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 40; ++trial) {
    const Index h = 16 + trial % 9, w = 20 + trial % 5;
    const double eps = trial % 3 == 0 ? 0.0 : 0.001 * (trial % 4 + 1);
    auto cfg = small_display(h, w, 3, 4, Psf(oracle::random_raster(5 + trial % 3 * 2, 7, rng)), eps);
    cfg.psf = normalize_psf_to_peak(cfg.psf, *cfg.layout, cfg.peak_nits);
    const HdrImage target = random_target(h, w, rng);
    const Backlight b = random_backlight(cfg.layout, rng);
    const Simulation s = simulate_full(target, b, cfg);
    const double scale = s.diffusion.maxCoeff();
    for (int c = 0; c < 3; ++c) {
      const Raster& in = target.channel(c);
      const Raster closed = in.max(eps * s.diffusion).min(s.diffusion);
      // Where D falls under the dark threshold the fallback t = 1 shows D itself.
      const Raster want = (s.diffusion < kDarkBacklight).select(s.diffusion, closed);
      CHECK((s.displayed.channel(c) - want).abs().maxCoeff() <= 1e-9 * scale);
      CHECK(s.displayed.channel(c).minCoeff() >= 0.0);
      CHECK(s.displayed.channel(c).maxCoeff() <= scale);
    }
  }
}

TEST_CASE("simulate edge cases") {
  std::mt19937_64 rng(7);
  auto cfg = small_display(20, 20, 2, 2, Psf::box(21, 21), 0.0);
  const HdrImage target = random_target(20, 20, rng, 100.0);
  const HdrImage zero = simulate(target, Backlight::constant(cfg.layout, 0.0), cfg);
  CHECK(zero.max_value() == 0.0);

  // Each LED's 21x21 box covers the whole panel at 4 x 4000 nits >> 100.
  const Simulation full = simulate_full(target, Backlight::constant(cfg.layout, 1.0), cfg);
  CHECK(clipping_fraction(target, full.diffusion) == 0.0);
  for (int c = 0; c < 3; ++c) {
    for (Index i = 0; i < target.channel(c).size(); ++i) {
      CHECK(full.displayed.channel(c).data()[i] == target.channel(c).data()[i]);
    }
  }
}

TEST_CASE("segment statistics") {
  const auto l = grid(2, 2, 20, 20);
  const auto s = segment_stats(Raster::Constant(20, 20, 0.3), *l);
  CHECK((s.max.array() == 0.3).all());
  CHECK(((s.avg.array() - 0.3).abs() < 1e-15).all());

  Raster one = Raster::Zero(20, 20);
  one(13, 4) = 1.0;
  const auto s1 = segment_stats(one, *l);
  CHECK(s1.max[2] == 1.0);
  CHECK(s1.avg[2] == 0.01);
  CHECK(s1.max[0] == 0.0);

  std::mt19937_64 rng(8);
  const auto l2 = grid(3, 5, 23, 41);
  const Raster r = oracle::random_raster(23, 41, rng);
  const auto st = segment_stats(r, *l2);
  const auto map = l2->segment_map();
  std::vector<double> mx(15, -1.0), sum(15, 0.0);
  std::vector<double> cnt(15, 0.0);
  for (Index y = 0; y < 23; ++y) {
    for (Index x = 0; x < 41; ++x) {
      const auto k = static_cast<std::size_t>(map(y, x));
      mx[k] = std::max(mx[k], r(y, x));
      sum[k] += r(y, x);
      cnt[k] += 1.0;
    }
  }
  for (Index k = 0; k < 15; ++k) {
    CHECK(st.max[k] == mx[static_cast<std::size_t>(k)]);
    CHECK(st.avg[k] == sum[static_cast<std::size_t>(k)] / cnt[static_cast<std::size_t>(k)]);
  }
}

TEST_CASE("clipping fraction") {
  std::mt19937_64 rng(9);
  const HdrImage img = random_target(10, 12, rng, 50.0);
  CHECK(clipping_fraction(img, Raster::Constant(10, 12, 50.0)) == 0.0);
  const HdrImage pos = HdrImage::from_gray(Raster::Constant(10, 12, 0.1), 1.0);
  CHECK(clipping_fraction(pos, Raster::Zero(10, 12)) == 1.0);

  const Raster d = oracle::random_raster(10, 12, rng, 0, 50);
  Index count = 0;
  for (int c = 0; c < 3; ++c) {
    for (Index y = 0; y < 10; ++y) {
      for (Index x = 0; x < 12; ++x) count += img.channel(c)(y, x) > d(y, x) ? 1 : 0;
    }
  }
  CHECK(clipping_fraction(img, d, 0.0) == static_cast<double>(count) / 360.0);
}

TEST_CASE("display units") {
  HdrImage raw = HdrImage::from_gray(Raster::Constant(3, 3, 2.0));
  raw.channel_mut(0)(1, 1) = 10.0;
  // Max luminance 0.2126 * 10 + 0.7874 * 2 = 3.7008 maps to 4000; red then clips.
  const HdrImage scaled_img = to_display_nits(raw, 4000.0);
  CHECK(scaled_img.calibrated());
  CHECK(scaled_img.channel(0)(1, 1) == 4000.0);
  CHECK(scaled_img.channel(1)(1, 1) == doctest::Approx(2.0 * 4000.0 / 3.7008));
  CHECK(scaled_img.max_value() <= 4000.0);
  const HdrImage gray = to_display_nits(HdrImage::from_gray(Raster::Constant(2, 3, 0.25)), 4000.0);
  CHECK((gray.channel(1) - 4000.0).abs().maxCoeff() < 1e-9);

  const HdrImage cal = HdrImage::from_gray(Raster::Constant(2, 2, 30.0), 179.0);
  const HdrImage nits = to_display_nits(cal, 4000.0);
  CHECK((nits.channel(0) == 4000.0).all());
  const HdrImage dim = to_display_nits(HdrImage::from_gray(Raster::Constant(2, 2, 3.0), 179.0), 4000.0);
  CHECK((dim.channel(2) == 3.0 * 179.0).all());
}

TEST_CASE("PSF normalisation puts peak_nits at the panel centre") {
  for (auto [lr, lc, h, w] : {std::array<Index, 4>{3, 3, 32, 32}, {8, 8, 128, 128}, {4, 6, 60, 90}}) {
    const DisplayConfig cfg = default_display(h, w, lr, lc, 4000.0);
    CHECK(cfg.psf.rows() % 2 == 1);
    const DiffusionMap d = diffuse(Backlight::constant(cfg.layout, 1.0), cfg);
    CHECK(d(h / 2, w / 2) == doctest::Approx(4000.0).epsilon(1e-9));
  }
  const DisplayConfig hd = default_display(1080, 1920);
  CHECK(hd.layout->size() == 264);
  const double sigma = 0.6 * std::sqrt(90.0 * 1920.0 / 22.0);
  CHECK(hd.psf.rows() == 2 * static_cast<Index>(std::ceil(3 * sigma)) + 1);
}

TEST_CASE("backlight files round-trip") {
  std::mt19937_64 rng(10);
  const auto l = grid(3, 5, 30, 50, 1234.5);
  const Backlight b = random_backlight(l, rng);
  const Backlight j = backlight_from_json(backlight_to_json(b));
  CHECK(j.layout() == *l);
  CHECK(j.values() == b.values());
  const Backlight c = backlight_from_csv(backlight_to_csv(b), l);
  CHECK(c.values() == b.values());
  CHECK(layout_from_json(layout_to_json(*l)) == *l);

  CHECK_THROWS_AS(backlight_from_csv(backlight_to_csv(b), grid(2, 2, 30, 50)), InvalidArgument);
  CHECK_THROWS_AS(backlight_from_json("{\"values\": [1]}"), InvalidArgument);
  CHECK_THROWS_AS(backlight_from_json("not json"), InvalidArgument);

  const auto path = std::filesystem::temp_directory_path() / "dimlab_bl.json";
  write_backlight(b, path);
  CHECK(read_backlight(path).values() == b.values());
  CHECK_THROWS_AS(read_backlight(path, grid(3, 5, 30, 51)), InvalidArgument);
  std::filesystem::remove(path);
}
