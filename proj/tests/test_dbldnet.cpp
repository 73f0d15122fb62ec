#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "dimlab/dbldnet.hpp"
#include "dimlab/hdrio.hpp"
#include "dimlab/synth.hpp"
#include "support/layercheck.hpp"

using namespace dimlab;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

using oracle::Graph;
using oracle::layer_grad_error;
using oracle::random_tensor;
using T = Tensor<double>;

NetConfig tiny_config() {
  NetConfig nc;
  nc.stages = 2;
  nc.widths = {3, 4};
  nc.seed = 5;
  return nc;
}

HdrImage random_unit_image(Index h, Index w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::array<Raster, 3> rgb;
  for (auto& c : rgb) {
    c.resize(h, w);
    for (Index i = 0; i < c.size(); ++i) c.data()[i] = u(rng);
  }
  return HdrImage(std::move(rgb), 1.0);
}

}  // namespace

TEST_CASE("per-layer gradients match central differences") {
  std::mt19937_64 rng(1);
  SUBCASE("conv 3x3") {
    const Graph g = [](Tape<double>& t, const std::vector<Var>& v) { return ad::conv2d(t, v[0], v[1], v[2], 3); };
    CHECK(layer_grad_error(g, {random_tensor(2, 5, 6, rng), random_tensor(3, 1, 18, rng), random_tensor(3, 1, 1, rng)},
                           rng) <= 1e-3);
  }
  SUBCASE("conv 3x3 stride 2") {
    const Graph g = [](Tape<double>& t, const std::vector<Var>& v) { return ad::conv2d(t, v[0], v[1], v[2], 3, 2); };
    CHECK(layer_grad_error(g, {random_tensor(2, 6, 7, rng), random_tensor(3, 1, 18, rng), random_tensor(3, 1, 1, rng)},
                           rng) <= 1e-3);
  }
  SUBCASE("conv 1x1") {
    const Graph g = [](Tape<double>& t, const std::vector<Var>& v) { return ad::conv2d(t, v[0], v[1], v[2], 1); };
    CHECK(layer_grad_error(g, {random_tensor(3, 4, 4, rng), random_tensor(2, 1, 3, rng), random_tensor(2, 1, 1, rng)},
                           rng) <= 1e-3);
  }
  SUBCASE("instance norm") {
    const Graph g = [](Tape<double>& t, const std::vector<Var>& v) { return ad::instance_norm(t, v[0], v[1], v[2], 1e-5); };
    CHECK(layer_grad_error(g, {random_tensor(3, 4, 5, rng), random_tensor(3, 1, 1, rng), random_tensor(3, 1, 1, rng)},
                           rng) <= 1e-3);
  }
  SUBCASE("relu") {
    const Graph g = [](Tape<double>& t, const std::vector<Var>& v) { return ad::relu(t, v[0]); };
    CHECK(layer_grad_error(g, {random_tensor(2, 5, 5, rng)}, rng) <= 1e-3);
  }
  SUBCASE("sigmoid") {
    const Graph g = [](Tape<double>& t, const std::vector<Var>& v) { return ad::sigmoid(t, v[0]); };
    CHECK(layer_grad_error(g, {random_tensor(2, 4, 4, rng, -4, 4)}, rng) <= 1e-3);
  }
  SUBCASE("bilinear upsampling") {
    const Graph g = [](Tape<double>& t, const std::vector<Var>& v) { return ad::upsample2x(t, v[0]); };
    CHECK(layer_grad_error(g, {random_tensor(2, 3, 4, rng)}, rng) <= 1e-3);
  }
  SUBCASE("concatenation") {
    const Graph g = [](Tape<double>& t, const std::vector<Var>& v) { return ad::concat(t, v[0], v[1]); };
    CHECK(layer_grad_error(g, {random_tensor(2, 3, 4, rng), random_tensor(1, 3, 4, rng)}, rng) <= 1e-3);
  }
  SUBCASE("residual addition") {
    const Graph g = [](Tape<double>& t, const std::vector<Var>& v) { return ad::add(t, v[0], v[1]); };
    CHECK(layer_grad_error(g, {random_tensor(2, 3, 4, rng), random_tensor(2, 3, 4, rng)}, rng) <= 1e-3);
  }
  SUBCASE("input reused by two branches") {
    const Graph g = [](Tape<double>& t, const std::vector<Var>& v) {
      return ad::add(t, ad::relu(t, v[0]), ad::sigmoid(t, v[0]));
    };
    CHECK(layer_grad_error(g, {random_tensor(2, 3, 3, rng)}, rng) <= 1e-3);
  }
}

TEST_CASE("two-layer composition matches whole-graph differences") {
  std::mt19937_64 rng(2);
  const Graph g = [](Tape<double>& t, const std::vector<Var>& v) {
    Var h = ad::relu(t, ad::instance_norm(t, ad::conv2d(t, v[0], v[1], v[2], 3), v[3], v[4], 1e-5));
    return ad::sigmoid(t, ad::conv2d(t, ad::upsample2x(t, h), v[5], v[6], 1));
  };
  const double err = layer_grad_error(g,
                                      {random_tensor(2, 4, 4, rng), random_tensor(3, 1, 18, rng),
                                       random_tensor(3, 1, 1, rng), random_tensor(3, 1, 1, rng),
                                       random_tensor(3, 1, 1, rng), random_tensor(1, 1, 3, rng),
                                       random_tensor(1, 1, 1, rng)},
                                      rng);
  CHECK(err <= 1e-3);
}

TEST_CASE("end-to-end network gradient matches central differences") {
  std::mt19937_64 rng(3);
  NetParams p = NetParams::initialize(tiny_config());
  const HdrImage img = random_unit_image(8, 8, rng);
  Raster w(8, 8);
  std::normal_distribution<double> n(0, 1);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = n(rng);
  auto objective = [&](const NetParams& q) {
    auto f = forward_tape<double>(q, img, 0.4);
    const auto& o = f.tape.value(f.map);
    double s = 0;
    for (Index y = 0; y < 8; ++y) {
      for (Index x = 0; x < 8; ++x) s += w(y, x) * o.m(0, y * o.w + x);
    }
    return s;
  };
  auto f = forward_tape<double>(p, img, 0.4);
  const Eigen::VectorXd g = backward(f, w);
  REQUIRE(g.size() == p.parameter_count());
  std::uniform_int_distribution<Index> pick(0, p.parameter_count() - 1);
  double worst = 0;
  for (int i = 0; i < 80; ++i) {
    const Index k = i < 3 ? p.parameter_count() - 1 - i : pick(rng);
    NetParams hi = p, lo = p;
    hi.values()[k] += 1e-6;
    lo.values()[k] -= 1e-6;
    const double fd = (objective(hi) - objective(lo)) / 2e-6;
    worst = std::max(worst, std::abs(fd - g[k]) / std::max({std::abs(fd), std::abs(g[k]), 1e-7}));
  }
  CHECK(worst <= 1e-3);
}

TEST_CASE("tape semantics") {
  std::mt19937_64 rng(4);
  NetParams p = NetParams::initialize(tiny_config());
  const HdrImage img = random_unit_image(8, 8, rng);
  auto f = forward_tape<double>(p, img, 0.2);
  const Eigen::VectorXd g = backward(f, Raster::Zero(8, 8));
  CHECK(g.cwiseAbs().maxCoeff() == 0.0);
  CHECK(f.tape.consumed());
  CHECK_THROWS_AS(backward(f, Raster::Zero(8, 8)), ad::TapeError);

  auto f2 = forward_tape<double>(p, img, 0.2);
  const std::size_t ops = f2.tape.size() - f2.params.size() - 1;
  backward(f2, Raster::Ones(8, 8));
  CHECK(f2.tape.visited() == ops);
  CHECK_THROWS_AS(backward(f2, Raster::Ones(4, 8)), ShapeError);
}

TEST_CASE("instance normalisation standardises each channel") {
  std::mt19937_64 rng(5);
  Tape<float> t;
  Tensor<float> x(3, 16, 16);
  std::normal_distribution<float> n(5.0f, 3.0f);
  for (Index i = 0; i < x.m.size(); ++i) x.m.data()[i] = n(rng);
  Tensor<float> gamma(3, 1, 1), beta(3, 1, 1);
  gamma.m.setOnes();
  const Var y = ad::instance_norm(t, t.constant(x), t.constant(gamma), t.constant(beta), 1e-5);
  for (Index c = 0; c < 3; ++c) {
    const auto row = t.value(y).m.row(c).cast<double>();
    const double mean = row.mean();
    CHECK(std::abs(mean) <= 1e-5);
    CHECK(std::abs((row.array() - mean).square().mean() - 1.0) <= 1e-3);
  }
}

TEST_CASE("forward is deterministic, bounded, and sees the power plane") {
  std::mt19937_64 rng(6);
  const NetParams p = NetParams::initialize(NetConfig{});
  const HdrImage img = random_unit_image(32, 48, rng);
  const Raster a = predict_map(p, img, 0.3), b = predict_map(p, img, 0.3);
  CHECK((a == b).all());
  CHECK(a.minCoeff() > 0.0);
  CHECK(a.maxCoeff() < 1.0);
  CHECK(!(predict_map(p, img, 0.9) == a).all());

  const auto in = network_input<float>(img, 0.3, 3);
  CHECK(in.c == 4);
  CHECK((in.m.row(3).array() == 0.3f).all());
  CHECK(in.m(0, 5) == static_cast<float>(img.channel(0)(0, 5)));
}

TEST_CASE("inputs not divisible by the stage factor are padded and cropped") {
  std::mt19937_64 rng(7);
  const NetParams p = NetParams::initialize(tiny_config());
  const HdrImage img = random_unit_image(13, 21, rng);
  const auto in = network_input<float>(img, 0.5, 2);
  CHECK(in.h == 16);
  CHECK(in.w == 24);
  const Raster m = predict_map(p, img, 0.5);
  CHECK(m.rows() == 13);
  CHECK(m.cols() == 21);
  auto f = forward_tape<double>(p, img, 0.5);
  CHECK(backward(f, Raster::Ones(13, 21)).allFinite());
}

TEST_CASE("untrained network output is nearly flat") {
  const NetParams p = NetParams::initialize(NetConfig{});
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    const HdrImage img = normalize_for_net(to_display_nits(synth_scene(64, 64, seed), 4000.0), 4000.0);
    const Raster m = predict_map(p, img, 0.5);
    CHECK(std::sqrt((m - m.mean()).square().mean()) < 0.2);
  }
}

TEST_CASE("parameter table") {
  const NetParams p = NetParams::initialize(NetConfig{});
  CHECK(p.tensors().front().name == "stem.w");
  CHECK(p.info("stem.w").shape == std::vector<Index>{16, 4, 3, 3});
  CHECK(p.info("dec0.w").shape == std::vector<Index>{16, 48, 3, 3});
  CHECK(p.info("mid.c1.w").shape == std::vector<Index>{64, 64, 3, 3});
  CHECK(p.info("head.w").shape == std::vector<Index>{1, 16, 1, 1});
  const auto& g = p.info("enc1.n1.g");
  CHECK((p.values().segment(g.offset, g.size).array() == 1.0).all());
  const auto& w = p.info("enc0.c1.w");
  const double bound = std::sqrt(6.0 / 144.0);
  CHECK(p.values().segment(w.offset, w.size).cwiseAbs().maxCoeff() <= bound);
  NetConfig bad;
  bad.widths = {16, 32};
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("checkpoint roundtrip") {
  const auto dir = std::filesystem::temp_directory_path();
  NetConfig nc = tiny_config();
  nc.norm_eps = 2e-5;
  const NetParams p = NetParams::initialize(nc);
  const auto path = dir / "dimlab_net.ckpt";
  save_checkpoint(path, p);
  const NetParams q = load_checkpoint(path);
  CHECK(q.values() == p.values());
  CHECK(q.config().widths == nc.widths);
  CHECK(q.config().norm_eps == nc.norm_eps);

  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("X", 1);
  }
  CHECK_THROWS_AS(load_checkpoint(path), IoError);
  save_checkpoint(path, p);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  CHECK_THROWS_AS(load_checkpoint(path), IoError);
  std::filesystem::remove(path);
}

TEST_CASE("training is reproducible and reduces the loss on a tiny problem") {
  const auto data = synth_dataset(32, 32, 3, 40);
  DisplayConfig cfg;
  cfg.layout = std::make_shared<const BacklightLayout>(4, 4, 32, 32, 4000.0);
  cfg.psf = normalize_psf_to_peak(Psf::gaussian(3.0, 9.0), *cfg.layout, 4000.0);
  LossConfig lc;
  OptimConfig oc;
  oc.max_iters = 10;
  const auto a = train(data, cfg, lc, tiny_config(), oc);
  const auto b = train(data, cfg, lc, tiny_config(), oc);
  REQUIRE(a.history.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(a.history[i].terms.total == b.history[i].terms.total);
    CHECK(a.history[i].p_a == b.history[i].p_a);
    CHECK(a.history[i].p_a >= 0.0);
    CHECK(a.history[i].p_a < 1.0);
  }
  CHECK(a.params.values() == b.params.values());

  const auto path = std::filesystem::temp_directory_path() / "dimlab_hist.csv";
  write_history_csv(path, a.history);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "iteration,image,p_a,L,L_reg,L_mag");
  std::filesystem::remove(path);

  CHECK_THROWS_AS(train({}, cfg, lc, tiny_config(), oc), InvalidArgument);
  CHECK_THROWS_AS(train(synth_dataset(16, 16, 1, 1), cfg, lc, tiny_config(), oc), InvalidArgument);
}

TEST_CASE("centre sampling and its adjoint") {
  const auto layout = std::make_shared<const BacklightLayout>(2, 3, 10, 12, 100.0);
  Raster m(10, 12);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(i) / 200.0;
  const Backlight b = sample_centers(m, layout);
  Eigen::VectorXd g(6);
  g << 1, 2, 3, 4, 5, 6;
  const Raster s = scatter_centers(g, *layout);
  // <sample(m), g> == <m, scatter(g)>
  CHECK(b.values().dot(g) == doctest::Approx((m * s).sum()).epsilon(1e-14));
  CHECK(s.sum() == 21.0);
}
