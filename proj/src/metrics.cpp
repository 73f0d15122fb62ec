#include "dimlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "dimlab/hdrio.hpp"

namespace dimlab {

namespace {

constexpr double kPuGamma = 1.0 / 2.2;

// code = A + B ln L for L <= 1, C L^g + D above.
struct PuAnalytic {
  double a, b, c, d;
  PuAnalytic() {
    c = 255.0 / (std::pow(80.0, kPuGamma) + kPuGamma * std::log(10.0) - 1.0);
    b = c * kPuGamma;
    a = b * std::log(10.0);
    d = a - c;
  }
  double operator()(double l) const { return l <= 1.0 ? a + b * std::log(l) : c * std::pow(l, kPuGamma) + d; }
};

PuCurve build_standard() {
  const PuAnalytic f;
  std::vector<double> lum;
  constexpr int kPerDecade = 32;
  for (int i = -5 * kPerDecade; i <= 8 * kPerDecade; ++i) {
    lum.push_back(std::pow(10.0, static_cast<double>(i) / kPerDecade));
  }
  for (double anchor : {0.1, 1.0, 80.0}) lum.push_back(anchor);
  std::sort(lum.begin(), lum.end());
  // pow(10, -32/32) etc. may land a hair off the exact anchors; drop near duplicates.
  std::vector<double> uniq;
  for (double l : lum) {
    if (!uniq.empty() && std::abs(l / uniq.back() - 1.0) < 1e-9) {
      if (l == 0.1 || l == 1.0 || l == 80.0) uniq.back() = l;
      continue;
    }
    uniq.push_back(l);
  }
  uniq.front() = 1e-5;
  uniq.back() = 1e8;
  std::vector<double> code;
  code.reserve(uniq.size());
  for (double l : uniq) code.push_back(f(l));
  // Pin the anchors exactly.
  for (std::size_t i = 0; i < uniq.size(); ++i) {
    if (uniq[i] == 0.1) code[i] = 0.0;
    if (uniq[i] == 80.0) code[i] = 255.0;
  }
  return PuCurve(std::move(uniq), std::move(code));
}

// 1-D valid correlation with a symmetric kernel, rows then columns.
Raster filter_valid(const Raster& x, const Eigen::VectorXd& w) {
  const Index n = w.size();
  const Index h = x.rows(), wd = x.cols();
  Raster tmp(h, wd - n + 1);
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < tmp.cols(); ++c) {
      double acc = 0.0;
      for (Index k = 0; k < n; ++k) acc += w[k] * x(r, c + k);
      tmp(r, c) = acc;
    }
  }
  Raster out(h - n + 1, tmp.cols());
  for (Index r = 0; r < out.rows(); ++r) {
    for (Index c = 0; c < out.cols(); ++c) {
      double acc = 0.0;
      for (Index k = 0; k < n; ++k) acc += w[k] * tmp(r + k, c);
      out(r, c) = acc;
    }
  }
  return out;
}

Eigen::VectorXd gaussian_window() {
  Eigen::VectorXd w(11);
  for (Index i = 0; i < 11; ++i) {
    const double d = static_cast<double>(i - 5);
    w[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
  }
  return w / w.sum();
}

Raster downsample2(const Raster& x) {
  Raster out(x.rows() / 2, x.cols() / 2);
  for (Index r = 0; r < out.rows(); ++r) {
    for (Index c = 0; c < out.cols(); ++c) {
      out(r, c) = 0.25 * (x(2 * r, 2 * c) + x(2 * r, 2 * c + 1) + x(2 * r + 1, 2 * c) + x(2 * r + 1, 2 * c + 1));
    }
  }
  return out;
}

void require_same_dims(const HdrImage& a, const HdrImage& b, const char* what) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw InvalidArgument(std::string(what) + ": image dimensions differ");
  }
}

}  // namespace

// --- PU curve ---------------------------------------------------------------

PuCurve::PuCurve(std::vector<double> luminance, std::vector<double> code) : lum_(std::move(luminance)), code_(std::move(code)) {
  if (lum_.size() < 2 || lum_.size() != code_.size()) {
    throw InvalidArgument("PuCurve: need at least two (luminance, code) points");
  }
  for (std::size_t i = 0; i < lum_.size(); ++i) {
    if (!(lum_[i] > 0.0) || !std::isfinite(lum_[i]) || !std::isfinite(code_[i])) {
      throw InvalidArgument("PuCurve: luminance must be positive and finite");
    }
    if (i > 0 && !(lum_[i] > lum_[i - 1] && code_[i] > code_[i - 1])) {
      throw InvalidArgument("PuCurve: points must be strictly increasing");
    }
  }
  log_lum_.resize(lum_.size());
  for (std::size_t i = 0; i < lum_.size(); ++i) log_lum_[i] = std::log(lum_[i]);
}

const PuCurve& PuCurve::standard() {
  static const PuCurve curve = build_standard();
  return curve;
}

PuCurve PuCurve::load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open PU table " + path.string());
  std::vector<double> lum, code;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    double l, c;
    if (!(ss >> l >> c)) {
      if (first) {
        first = false;
        continue;
      }
      throw InvalidArgument("PU table " + path.string() + ": bad line '" + line + "'");
    }
    first = false;
    lum.push_back(l);
    code.push_back(c);
  }
  return PuCurve(std::move(lum), std::move(code));
}

std::size_t PuCurve::segment(double log_l) const {
  const auto it = std::upper_bound(log_lum_.begin(), log_lum_.end(), log_l);
  const auto i = static_cast<std::size_t>(it - log_lum_.begin());
  return std::clamp<std::size_t>(i, 1, log_lum_.size() - 1) - 1;
}

double PuCurve::encode(double nits) const {
  if (!(nits > lum_.front())) return code_.front();
  if (nits >= lum_.back()) return code_.back();
  const double x = std::log(nits);
  const std::size_t i = segment(x);
  const double t = (x - log_lum_[i]) / (log_lum_[i + 1] - log_lum_[i]);
  return code_[i] + t * (code_[i + 1] - code_[i]);
}

double PuCurve::slope(double nits) const {
  if (!(nits > lum_.front()) || nits >= lum_.back()) return 0.0;
  const std::size_t i = segment(std::log(nits));
  return (code_[i + 1] - code_[i]) / (log_lum_[i + 1] - log_lum_[i]) / nits;
}

double PuCurve::decode(double code) const {
  if (code <= code_.front()) return lum_.front();
  if (code >= code_.back()) return lum_.back();
  const auto it = std::upper_bound(code_.begin(), code_.end(), code);
  const std::size_t i = static_cast<std::size_t>(it - code_.begin()) - 1;
  const double t = (code - code_[i]) / (code_[i + 1] - code_[i]);
  return std::exp(log_lum_[i] + t * (log_lum_[i + 1] - log_lum_[i]));
}

Raster PuCurve::encode(const Raster& nits) const {
  Raster out(nits.rows(), nits.cols());
  for (Index i = 0; i < nits.size(); ++i) out.data()[i] = encode(nits.data()[i]);
  return out;
}

double QualityOptions::code_range() const {
  const PuCurve& c = pu();
  return c.encode(peak_nits) - c.encode(0.1);
}

// --- metrics ----------------------------------------------------------------

Raster pu_luminance(const HdrImage& image, const PuCurve& curve) {
  return curve.encode(luminance(image) * image.nits_per_unit());
}

double pu_psnr(const HdrImage& a, const HdrImage& b, const QualityOptions& opts) {
  require_same_dims(a, b, "pu_psnr");
  const Raster pa = pu_luminance(a, opts.pu()), pb = pu_luminance(b, opts.pu());
  const double mse = (pa - pb).square().mean();
  const double peak = opts.code_range();
  if (!(mse > 0.0)) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

MsSsimResult ms_ssim(const Raster& x0, const Raster& y0, double range, int scales) {
  if (x0.rows() != y0.rows() || x0.cols() != y0.cols()) throw InvalidArgument("ms_ssim: plane dimensions differ");
  if (scales < 1 || scales > 5) throw InvalidArgument("ms_ssim: scales must be in [1, 5]");
  const Index side = std::min(x0.rows(), x0.cols());
  int usable = 0;
  while (usable < scales && side >= (Index{11} << usable)) ++usable;
  if (usable == 0) throw InvalidArgument("ms_ssim: images must be at least 11x11");

  const Eigen::VectorXd win = gaussian_window();
  const double c1 = (0.01 * range) * (0.01 * range);
  const double c2 = (0.03 * range) * (0.03 * range);
  double wsum = 0.0;
  for (int s = 0; s < usable; ++s) wsum += kMsSsimWeights[s];

  MsSsimResult res;
  res.scales = usable;
  Raster x = x0, y = y0;
  double score = 1.0;
  for (int s = 0; s < usable; ++s) {
    const Raster mx = filter_valid(x, win), my = filter_valid(y, win);
    const Raster sxx = filter_valid(x * x, win) - mx * mx;
    const Raster syy = filter_valid(y * y, win) - my * my;
    const Raster sxy = filter_valid(x * y, win) - mx * my;
    const double l = ((2.0 * mx * my + c1) / (mx * mx + my * my + c1)).mean();
    const double cs = ((2.0 * sxy + c2) / (sxx + syy + c2)).mean();
    res.luminance.push_back(l);
    res.contrast.push_back(cs);
    const double w = kMsSsimWeights[s] / wsum;
    score *= std::pow(std::max(cs, 0.0), w);
    if (s == usable - 1) score *= std::pow(std::max(l, 0.0), w);
    if (s + 1 < usable) {
      x = downsample2(x);
      y = downsample2(y);
    }
  }
  res.score = score;
  return res;
}

MsSsimResult pu_ms_ssim_detail(const HdrImage& a, const HdrImage& b, const QualityOptions& opts) {
  require_same_dims(a, b, "pu_ms_ssim");
  return ms_ssim(pu_luminance(a, opts.pu()), pu_luminance(b, opts.pu()), opts.code_range(), opts.scales);
}

double pu_ms_ssim(const HdrImage& a, const HdrImage& b, const QualityOptions& opts) {
  return pu_ms_ssim_detail(a, b, opts).score;
}

double psr(const Backlight& b) {
  return 100.0 * (1.0 - b.values().sum() / static_cast<double>(b.size()));
}

MetricReport evaluate(const HdrImage& target, const Backlight& b, const Simulation& sim, const QualityOptions& opts) {
  MetricReport r;
  r.pu_psnr = pu_psnr(target, sim.displayed, opts);
  const MsSsimResult ms = pu_ms_ssim_detail(target, sim.displayed, opts);
  r.pu_ms_ssim = ms.score;
  r.ms_ssim_scales = ms.scales;
  r.psr = psr(b);
  r.clipping_fraction = clipping_fraction(target, sim.diffusion);
  return r;
}

}  // namespace dimlab
