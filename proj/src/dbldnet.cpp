#include "dimlab/dbldnet.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <random>

#include "dimlab/hdrio.hpp"
#include "json.hpp"

namespace dimlab {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

using ad::Tape;
using ad::Tensor;
using ad::Var;

void NetConfig::validate() const {
  if (in_channels != 4) throw InvalidArgument("net: in_channels must be 4 (RGB + power plane)");
  if (stages < 1) throw InvalidArgument("net: stages must be >= 1");
  if (static_cast<int>(widths.size()) != stages) throw InvalidArgument("net: need one width per stage");
  for (int w : widths) {
    if (w < 1) throw InvalidArgument("net: widths must be positive");
  }
  if (!(norm_eps > 0.0)) throw InvalidArgument("net: norm_eps must be > 0");
}

// --- parameters -----------------------------------------------------------

namespace {

struct LayoutBuilder {
  std::vector<ParamInfo> infos;
  Index offset = 0;

  void add(std::string name, std::vector<Index> shape) {
    Index n = 1;
    for (Index d : shape) n *= d;
    infos.push_back({std::move(name), std::move(shape), offset, n});
    offset += n;
  }
  void conv(const std::string& name, Index out, Index in, Index k) {
    add(name + ".w", {out, in, k, k});
    add(name + ".b", {out});
  }
  void norm(const std::string& name, Index c) {
    add(name + ".g", {c});
    add(name + ".b", {c});
  }
  void resblock(const std::string& name, Index c) {
    conv(name + ".c1", c, c, 3);
    norm(name + ".n1", c);
    conv(name + ".c2", c, c, 3);
    norm(name + ".n2", c);
  }
};

std::vector<ParamInfo> build_layout(const NetConfig& nc) {
  LayoutBuilder b;
  b.conv("stem", nc.width(0), nc.in_channels, 3);
  for (int s = 0; s < nc.stages; ++s) {
    const std::string e = "enc" + std::to_string(s);
    b.resblock(e, nc.width(s));
    b.conv("down" + std::to_string(s), nc.width(s + 1), nc.width(s), 3);
    b.norm("down" + std::to_string(s) + ".n", nc.width(s + 1));
  }
  b.resblock("mid", nc.width(nc.stages));
  for (int s = nc.stages - 1; s >= 0; --s) {
    const std::string d = "dec" + std::to_string(s);
    b.conv(d, nc.width(s), nc.width(s + 1) + nc.width(s), 3);
    if (s > 0) b.norm(d + ".n", nc.width(s));
  }
  b.conv("head", 1, nc.width(0), 1);
  return b.infos;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

NetParams::NetParams(const NetConfig& config) : config_(config) {
  config.validate();
  infos_ = build_layout(config);
  const auto& last = infos_.back();
  values_ = Eigen::VectorXd::Zero(last.offset + last.size);
}

NetParams NetParams::initialize(const NetConfig& config) {
  NetParams p(config);
  std::mt19937_64 rng(config.seed);
  for (const auto& info : p.infos_) {
    auto seg = p.values_.segment(info.offset, info.size);
    if (info.shape.size() == 4) {
      const double fan_in = static_cast<double>(info.shape[1] * info.shape[2] * info.shape[3]);
      // The head feeds a sigmoid, not a rectifier.
      const double bound = info.name == "head.w" ? std::sqrt(1.0 / fan_in) : std::sqrt(6.0 / fan_in);
      std::uniform_real_distribution<double> u(-bound, bound);
      for (auto& v : seg) v = u(rng);
    } else if (ends_with(info.name, ".g")) {
      seg.setOnes();
    }
  }
  return p;
}

const ParamInfo& NetParams::info(const std::string& name) const {
  for (const auto& i : infos_) {
    if (i.name == name) return i;
  }
  throw InvalidArgument("net: no parameter named '" + name + "'");
}

void NetParams::validate() const {
  config_.validate();
  const auto want = build_layout(config_);
  if (want.size() != infos_.size()) throw ShapeError("net: parameter table does not match the config");
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (want[i].name != infos_[i].name || want[i].shape != infos_[i].shape || want[i].offset != infos_[i].offset) {
      throw ShapeError("net: parameter '" + infos_[i].name + "' does not match the config");
    }
  }
  if (values_.size() != want.back().offset + want.back().size) throw ShapeError("net: wrong parameter count");
  if (!values_.allFinite()) throw InvalidArgument("net: non-finite parameter");
}

// --- checkpoint -----------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'D', 'B', 'L', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NetParams& params) {
  params.validate();
  const auto& nc = params.config();
  nlohmann::json j;
  j["config"] = {{"in_channels", nc.in_channels}, {"stages", nc.stages}, {"widths", nc.widths},
                 {"norm_eps", nc.norm_eps}, {"seed", nc.seed}};
  j["tensors"] = nlohmann::json::array();
  for (const auto& i : params.tensors()) j["tensors"].push_back({{"name", i.name}, {"shape", i.shape}});
  const std::string header = j.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const auto len = static_cast<std::uint32_t>(header.size());
  out.write(kMagic, 8);
  out.write(reinterpret_cast<const char*>(&kVersion), 4);
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(params.values().data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(params.parameter_count())));
  if (!out) throw IoError("write failed: " + path.string());
}

NetParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[8];
  std::uint32_t version = 0, len = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&len), 4);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw IoError(path.string() + ": not a checkpoint");
  if (version != kVersion) throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  std::string header(len, '\0');
  in.read(header.data(), len);
  if (!in) throw IoError(path.string() + ": truncated header");
  NetConfig nc;
  std::vector<std::pair<std::string, std::vector<Index>>> table;
  try {
    const auto j = nlohmann::json::parse(header);
    const auto& c = j.at("config");
    nc.in_channels = c.at("in_channels").get<int>();
    nc.stages = c.at("stages").get<int>();
    nc.widths = c.at("widths").get<std::vector<int>>();
    nc.norm_eps = c.at("norm_eps").get<double>();
    nc.seed = c.at("seed").get<std::uint64_t>();
    for (const auto& t : j.at("tensors")) {
      table.emplace_back(t.at("name").get<std::string>(), t.at("shape").get<std::vector<Index>>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": bad checkpoint header: " + e.what());
  }
  NetParams p(nc);
  if (table.size() != p.tensors().size()) throw ShapeError(path.string() + ": tensor table does not match its config");
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (table[i].first != p.tensors()[i].name || table[i].second != p.tensors()[i].shape) {
      throw ShapeError(path.string() + ": tensor '" + table[i].first + "' does not match its config");
    }
  }
  in.read(reinterpret_cast<char*>(p.values().data()),
          static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p.parameter_count())));
  if (!in) throw IoError(path.string() + ": truncated tensor data");
  p.validate();
  return p;
}

// --- forward / backward ---------------------------------------------------

template <typename S>
Tensor<S> network_input(const HdrImage& image01, double p_a, int stages) {
  const Index m = Index{1} << stages;
  const Index h = image01.height(), w = image01.width();
  const Index ph = (h + m - 1) / m * m, pw = (w + m - 1) / m * m;
  Tensor<S> t(4, ph, pw);
  for (int c = 0; c < 3; ++c) {
    const Raster& src = image01.channel(c);
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) t.m(c, y * pw + x) = static_cast<S>(src(y, x));
    }
  }
  t.m.row(3).setConstant(static_cast<S>(p_a));
  return t;
}

namespace {

template <typename S>
struct Builder {
  const NetParams& params;
  NetForward<S>& f;
  std::map<std::string, Var> by_name;

  Var p(const std::string& name) const { return by_name.at(name); }

  Var conv(Var x, const std::string& name, Index k, Index stride = 1) {
    return ad::conv2d(f.tape, x, p(name + ".w"), p(name + ".b"), k, stride);
  }
  Var norm(Var x, const std::string& name) {
    return ad::instance_norm(f.tape, x, p(name + ".g"), p(name + ".b"), params.config().norm_eps);
  }
  Var resblock(Var x, const std::string& name) {
    Var y = ad::relu(f.tape, norm(conv(x, name + ".c1", 3), name + ".n1"));
    y = norm(conv(y, name + ".c2", 3), name + ".n2");
    return ad::relu(f.tape, ad::add(f.tape, x, y));
  }
};

}  // namespace

template <typename S>
NetForward<S> forward_tape(const NetParams& params, const HdrImage& image01, double p_a) {
  params.validate();
  if (image01.empty()) throw ShapeError("net: empty input");
  const NetConfig& nc = params.config();
  NetForward<S> f;
  f.height = image01.height();
  f.width = image01.width();
  Builder<S> b{params, f, {}};
  for (const auto& info : params.tensors()) {
    Tensor<S> t;
    if (info.shape.size() == 4) {
      t = Tensor<S>(info.shape[0], 1, info.shape[1] * info.shape[2] * info.shape[3]);
    } else {
      t = Tensor<S>(info.shape[0], 1, 1);
    }
    t.m = Eigen::Map<const ad::Mat<double>>(params.values().data() + info.offset, t.m.rows(), t.m.cols())
              .template cast<S>();
    const Var v = f.tape.leaf(std::move(t));
    f.params.push_back(v);
    b.by_name[info.name] = v;
  }
  f.input = f.tape.constant(network_input<S>(image01, p_a, nc.stages));

  // The stem and the last decoder conv skip normalisation: instance
  // normalisation would cancel the constant power plane.
  Var h = ad::relu(f.tape, b.conv(f.input, "stem", 3));
  std::vector<Var> skips;
  for (int s = 0; s < nc.stages; ++s) {
    h = b.resblock(h, "enc" + std::to_string(s));
    skips.push_back(h);
    const std::string d = "down" + std::to_string(s);
    h = ad::relu(f.tape, b.norm(b.conv(h, d, 3, 2), d + ".n"));
  }
  h = b.resblock(h, "mid");
  for (int s = nc.stages - 1; s >= 0; --s) {
    const std::string d = "dec" + std::to_string(s);
    h = ad::concat(f.tape, ad::upsample2x(f.tape, h), skips[static_cast<std::size_t>(s)]);
    h = b.conv(h, d, 3);
    if (s > 0) h = b.norm(h, d + ".n");
    h = ad::relu(f.tape, h);
  }
  f.map = ad::sigmoid(f.tape, b.conv(h, "head", 1));
  return f;
}

template <typename S>
Eigen::VectorXd backward(NetForward<S>& fwd, const Raster& upstream) {
  if (upstream.rows() != fwd.height || upstream.cols() != fwd.width) {
    throw ShapeError("net: upstream gradient size differs from the input");
  }
  const Tensor<S>& out = fwd.tape.value(fwd.map);
  Tensor<S> up(1, out.h, out.w);
  for (Index y = 0; y < fwd.height; ++y) {
    for (Index x = 0; x < fwd.width; ++x) up.m(0, y * out.w + x) = static_cast<S>(upstream(y, x));
  }
  fwd.tape.backward(fwd.map, up);
  Index total = 0;
  for (Var v : fwd.params) total += fwd.tape.value(v).m.size();
  Eigen::VectorXd g(total);
  Index off = 0;
  for (Var v : fwd.params) {
    const Tensor<S> gv = fwd.tape.grad(v);
    g.segment(off, gv.m.size()) = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(gv.m.data(), gv.m.size())
                                      .template cast<double>();
    off += gv.m.size();
  }
  return g;
}

template ad::Tensor<float> network_input<float>(const HdrImage&, double, int);
template ad::Tensor<double> network_input<double>(const HdrImage&, double, int);
template NetForward<float> forward_tape<float>(const NetParams&, const HdrImage&, double);
template NetForward<double> forward_tape<double>(const NetParams&, const HdrImage&, double);
template Eigen::VectorXd backward<float>(NetForward<float>&, const Raster&);
template Eigen::VectorXd backward<double>(NetForward<double>&, const Raster&);

namespace {

template <typename S>
Raster cropped_map(const NetForward<S>& f) {
  const Tensor<S>& out = f.tape.value(f.map);
  Raster r(f.height, f.width);
  for (Index y = 0; y < f.height; ++y) {
    for (Index x = 0; x < f.width; ++x) r(y, x) = static_cast<double>(out.m(0, y * out.w + x));
  }
  return r;
}

}  // namespace

Raster predict_map(const NetParams& params, const HdrImage& image01, double p_a) {
  return cropped_map(forward_tape<float>(params, image01, p_a));
}

Backlight sample_centers(const Raster& map, const LayoutPtr& layout) {
  if (map.rows() != layout->panel_height() || map.cols() != layout->panel_width()) {
    throw ShapeError("net: map size differs from the panel");
  }
  Eigen::VectorXd v(layout->size());
  for (Index k = 0; k < v.size(); ++k) {
    const auto& c = layout->centers()[static_cast<std::size_t>(k)];
    v[k] = std::clamp(map(c.row, c.col), 0.0, 1.0);
  }
  return Backlight(layout, std::move(v));
}

Raster scatter_centers(const Eigen::VectorXd& grad, const BacklightLayout& layout) {
  Raster r = Raster::Zero(layout.panel_height(), layout.panel_width());
  for (Index k = 0; k < grad.size(); ++k) {
    const auto& c = layout.centers()[static_cast<std::size_t>(k)];
    r(c.row, c.col) += grad[k];
  }
  return r;
}

HdrImage normalize_for_net(const HdrImage& target_nits, double peak_nits) {
  HdrImage out = scaled(target_nits, target_nits.nits_per_unit() / peak_nits);
  out.set_calibration(1.0);
  return out;
}

Backlight predict_backlight(const NetParams& params, const HdrImage& target_nits, double p_a, const DisplayConfig& cfg) {
  cfg.validate();
  return sample_centers(predict_map(params, normalize_for_net(target_nits, cfg.peak_nits), p_a), cfg.layout);
}

// --- training -------------------------------------------------------------

TrainResult train(const std::vector<HdrImage>& dataset, const DisplayConfig& cfg, const LossConfig& lc,
                  const NetConfig& nc, const OptimConfig& oc, const TrainProgress& progress,
                  std::optional<NetParams> start) {
  if (dataset.empty()) throw InvalidArgument("train: empty dataset");
  cfg.validate();
  lc.validate();
  oc.validate();
  for (const auto& img : dataset) {
    if (img.height() != cfg.panel_height() || img.width() != cfg.panel_width()) {
      throw InvalidArgument("train: dataset image size differs from the panel");
    }
  }
  TrainResult res{start ? std::move(*start) : NetParams::initialize(nc), {}};
  res.params.validate();
  std::seed_seq seq{nc.seed, std::uint64_t{0x747261696e}};
  std::mt19937_64 rng(seq);
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
  std::uniform_real_distribution<double> peak_draw(3000.0, 5000.0), power_draw(0.0, 1.0);
  Adam adam(res.params.parameter_count(), oc.lr, oc.beta1, oc.beta2, oc.adam_eps);

  for (int it = 0; it < oc.max_iters; ++it) {
    const std::size_t idx = pick(rng);
    const double top = peak_draw(rng);
    const double p_a = power_draw(rng);
    const HdrImage& src = dataset[idx];
    const double mx = src.max_value();
    std::array<Raster, 3> rgb;
    for (int c = 0; c < 3; ++c) {
      rgb[static_cast<std::size_t>(c)] = (src.channel(c) * (mx > 0 ? top / mx : 0.0)).min(cfg.peak_nits);
    }
    const HdrImage target(std::move(rgb), 1.0);

    auto fwd = forward_tape<float>(res.params, normalize_for_net(target, cfg.peak_nits), p_a);
    const Backlight b = sample_centers(cropped_map(fwd), cfg.layout);
    LossConfig step_lc = lc;
    step_lc.p_a = p_a;
    Eigen::VectorXd gb;
    const LossTerms terms = LossModel(target, cfg, step_lc).eval(b.values(), &gb);
    res.history.push_back({it, idx, p_a, terms});
    if (!std::isfinite(terms.total)) {
      throw TrainingError("train: non-finite loss at iteration " + std::to_string(it), res.history);
    }
    const Eigen::VectorXd g = backward(fwd, scatter_centers(gb, *cfg.layout));
    if (!g.allFinite()) throw TrainingError("train: non-finite gradient at iteration " + std::to_string(it), res.history);
    adam.step(res.params.values(), g);
    if (progress) progress(res.history.back());
  }
  return res;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "iteration,image,p_a,L,L_reg,L_mag\n";
  char buf[192];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%d,%zu,%.17g,%.17g,%.17g,%.17g\n", r.iteration, r.image, r.p_a, r.terms.total,
                  r.terms.reg, r.terms.mag);
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace dimlab
