#include "dimlab/display.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dimlab/hdrio.hpp"

namespace dimlab {

namespace {

std::vector<Index> edges(Index count, Index extent) {
  std::vector<Index> e(static_cast<std::size_t>(count) + 1);
  for (Index i = 0; i <= count; ++i) e[static_cast<std::size_t>(i)] = i * extent / count;
  return e;
}

void require_same_size(const Raster& a, Index rows, Index cols, const char* what) {
  if (a.rows() != rows || a.cols() != cols) {
    throw InvalidArgument(std::string(what) + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                          ", got " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
  }
}

Index floor_mod(Index v, Index n) {
  v %= n;
  return v < 0 ? v + n : v;
}

// Kernel weight linking a source pixel to a destination pixel under the
// centred convolution convention, honouring the boundary rule.
double kernel_weight(const Raster& k, Index dst_r, Index dst_c, Index src_r, Index src_c, Index rows, Index cols,
                     Boundary boundary) {
  const Index a0 = dst_r - src_r + k.rows() / 2;
  const Index b0 = dst_c - src_c + k.cols() / 2;
  if (boundary == Boundary::kZeroPad) {
    if (a0 < 0 || a0 >= k.rows() || b0 < 0 || b0 >= k.cols()) return 0.0;
    return k(a0, b0);
  }
  double w = 0.0;
  for (Index a = floor_mod(a0, rows); a < k.rows(); a += rows) {
    for (Index b = floor_mod(b0, cols); b < k.cols(); b += cols) w += k(a, b);
  }
  return w;
}

}  // namespace

// --- layout ---------------------------------------------------------------

BacklightLayout::BacklightLayout(Index led_rows, Index led_cols, Index panel_height, Index panel_width,
                                 double max_drive_nits)
    : led_rows_(led_rows),
      led_cols_(led_cols),
      panel_height_(panel_height),
      panel_width_(panel_width),
      max_drive_nits_(max_drive_nits) {
  if (led_rows < 1 || led_cols < 1) throw InvalidArgument("BacklightLayout: LED grid must be at least 1x1");
  if (panel_height < led_rows || panel_width < led_cols) {
    throw InvalidArgument("BacklightLayout: panel must have at least one pixel per LED segment");
  }
  if (!(max_drive_nits > 0.0) || !std::isfinite(max_drive_nits)) {
    throw InvalidArgument("BacklightLayout: max_drive_nits must be positive");
  }
  row_edges_ = edges(led_rows, panel_height);
  col_edges_ = edges(led_cols, panel_width);
  centers_.reserve(static_cast<std::size_t>(size()));
  for (Index i = 0; i < led_rows; ++i) {
    for (Index j = 0; j < led_cols; ++j) {
      const Index r0 = row_edge(i), r1 = row_edge(i + 1);
      const Index c0 = col_edge(j), c1 = col_edge(j + 1);
      centers_.push_back({r0 + (r1 - r0) / 2, c0 + (c1 - c0) / 2});
    }
  }
}

Index BacklightLayout::segment_of(Index row, Index col) const {
  if (row < 0 || row >= panel_height_ || col < 0 || col >= panel_width_) {
    throw InvalidArgument("segment_of: pixel outside the panel");
  }
  const auto i = std::upper_bound(row_edges_.begin(), row_edges_.end(), row) - row_edges_.begin() - 1;
  const auto j = std::upper_bound(col_edges_.begin(), col_edges_.end(), col) - col_edges_.begin() - 1;
  return static_cast<Index>(i) * led_cols_ + static_cast<Index>(j);
}

Eigen::Array<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> BacklightLayout::segment_map() const {
  Eigen::Array<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> m(panel_height_, panel_width_);
  for (Index i = 0; i < led_rows_; ++i) {
    for (Index j = 0; j < led_cols_; ++j) {
      const Index r0 = row_edge(i), c0 = col_edge(j);
      m.block(r0, c0, row_edge(i + 1) - r0, col_edge(j + 1) - c0).setConstant(static_cast<std::int32_t>(i * led_cols_ + j));
    }
  }
  return m;
}

bool BacklightLayout::operator==(const BacklightLayout& o) const {
  return led_rows_ == o.led_rows_ && led_cols_ == o.led_cols_ && panel_height_ == o.panel_height_ &&
         panel_width_ == o.panel_width_ && max_drive_nits_ == o.max_drive_nits_;
}

// --- backlight ------------------------------------------------------------

Backlight::Backlight(LayoutPtr layout, Eigen::VectorXd values) : layout_(std::move(layout)), values_(std::move(values)) {
  if (!layout_) throw InvalidArgument("Backlight: null layout");
  if (values_.size() != layout_->size()) {
    throw InvalidArgument("Backlight: " + std::to_string(values_.size()) + " values for a layout of " +
                          std::to_string(layout_->size()) + " LEDs");
  }
  if (!values_.allFinite() || (values_.array() < 0.0).any() || (values_.array() > 1.0).any()) {
    throw InvalidArgument("Backlight: values must lie in [0, 1]");
  }
}

Backlight Backlight::constant(LayoutPtr layout, double value) {
  const Index n = layout ? layout->size() : 0;
  return Backlight(std::move(layout), Eigen::VectorXd::Constant(n, value));
}

// --- psf ------------------------------------------------------------------

Psf::Psf(Raster kernel) : kernel_(std::move(kernel)) {
  if (kernel_.size() == 0) throw InvalidArgument("Psf: empty kernel");
  if (!kernel_.allFinite() || (kernel_ < 0.0).any()) {
    throw InvalidArgument("Psf: kernel entries must be finite and non-negative");
  }
}

Psf Psf::gaussian(double sigma, double radius) {
  if (!(sigma > 0.0) || !(radius >= 0.0)) throw InvalidArgument("Psf::gaussian: sigma must be > 0, radius >= 0");
  const Index half = static_cast<Index>(std::ceil(radius));
  Raster k(2 * half + 1, 2 * half + 1);
  const double s2 = 2.0 * sigma * sigma;
  for (Index a = 0; a < k.rows(); ++a) {
    for (Index b = 0; b < k.cols(); ++b) {
      const double y = static_cast<double>(a - half), x = static_cast<double>(b - half);
      k(a, b) = std::exp(-(x * x + y * y) / s2);
    }
  }
  return Psf(std::move(k));
}

Psf Psf::box(Index rows, Index cols, double value) {
  if (rows < 1 || cols < 1) throw InvalidArgument("Psf::box: size must be >= 1");
  return Psf(Raster::Constant(rows, cols, value));
}

Psf Psf::load(const std::filesystem::path& path) { return Psf(read_pfm_gray(path)); }

// --- config ---------------------------------------------------------------

void DisplayConfig::validate() const {
  if (!layout) throw InvalidArgument("DisplayConfig: missing layout");
  if (!(peak_nits > 0.0) || !std::isfinite(peak_nits)) throw InvalidArgument("DisplayConfig: peak_nits must be > 0");
  if (!(leak_floor >= 0.0 && leak_floor < 1.0)) throw InvalidArgument("DisplayConfig: leak_floor must be in [0, 1)");
}

Psf normalize_psf_to_peak(const Psf& psf, const BacklightLayout& layout, double peak_nits, Boundary boundary) {
  const Index h = layout.panel_height(), w = layout.panel_width();
  const Index cr = h / 2, cc = w / 2;
  double response = 0.0;
  for (const auto& c : layout.centers()) {
    response += kernel_weight(psf.kernel(), cr, cc, c.row, c.col, h, w, boundary);
  }
  response *= layout.max_drive_nits();
  if (!(response > 0.0)) {
    throw InvalidArgument("normalize_psf_to_peak: the PSF does not reach the panel centre from any LED");
  }
  return psf.scaled(peak_nits / response);
}

DisplayConfig default_display(Index panel_height, Index panel_width, Index led_rows, Index led_cols,
                              double peak_nits, double leak_floor) {
  DisplayConfig cfg;
  cfg.layout = std::make_shared<const BacklightLayout>(led_rows, led_cols, panel_height, panel_width, peak_nits);
  cfg.peak_nits = peak_nits;
  cfg.leak_floor = leak_floor;
  const double pitch = std::sqrt(cfg.layout->pitch_rows() * cfg.layout->pitch_cols());
  const double sigma = 0.6 * pitch;
  cfg.psf = normalize_psf_to_peak(Psf::gaussian(sigma, 3.0 * sigma), *cfg.layout, peak_nits, cfg.boundary);
  cfg.validate();
  return cfg;
}

HdrImage to_display_nits(const HdrImage& image, double peak_nits) {
  if (!(peak_nits > 0.0)) throw InvalidArgument("to_display_nits: peak_nits must be > 0");
  double factor = image.nits_per_unit();
  if (!image.calibrated()) {
    const double ymax = luminance(image).maxCoeff();
    factor = ymax > 0.0 ? peak_nits / ymax : 1.0;
  }
  std::array<Raster, 3> rgb;
  for (int c = 0; c < 3; ++c) rgb[static_cast<std::size_t>(c)] = (image.channel(c) * factor).min(peak_nits);
  return HdrImage(std::move(rgb), 1.0);
}

// --- optical chain --------------------------------------------------------

Raster sparse_backlight_raster(const Backlight& b) {
  const auto& layout = b.layout();
  Raster r = Raster::Zero(layout.panel_height(), layout.panel_width());
  const double drive = layout.max_drive_nits();
  for (Index k = 0; k < b.size(); ++k) {
    const auto& c = layout.centers()[static_cast<std::size_t>(k)];
    r(c.row, c.col) = b[k] * drive;
  }
  return r;
}

DiffusionMap diffuse(const Backlight& b, const DisplayConfig& cfg) {
  cfg.validate();
  if (!(b.layout() == *cfg.layout)) throw InvalidArgument("diffuse: backlight layout differs from the display layout");
  return conv2_large(sparse_backlight_raster(b), cfg.psf.kernel(), cfg.boundary).max(0.0);
}

Transmittance ideal_transmittance(const HdrImage& target, const DiffusionMap& d, const DisplayConfig& cfg) {
  require_same_size(d, target.height(), target.width(), "ideal_transmittance");
  const double eps = cfg.leak_floor;
  Transmittance t;
  for (int c = 0; c < 3; ++c) {
    const Raster& in = target.channel(c);
    Raster& out = t[static_cast<std::size_t>(c)];
    out.resize(d.rows(), d.cols());
    for (Index i = 0; i < d.size(); ++i) {
      const double dv = d.data()[i];
      out.data()[i] = dv < kDarkBacklight ? 1.0 : std::clamp(in.data()[i] / dv, eps, 1.0);
    }
  }
  return t;
}

HdrImage reconstruct(const DiffusionMap& d, const Transmittance& t) {
  std::array<Raster, 3> rgb;
  for (int c = 0; c < 3; ++c) {
    const auto& tc = t[static_cast<std::size_t>(c)];
    require_same_size(tc, d.rows(), d.cols(), "reconstruct");
    rgb[static_cast<std::size_t>(c)] = d * tc;
  }
  return HdrImage(std::move(rgb), 1.0);
}

Simulation simulate_full(const HdrImage& target, const Backlight& b, const DisplayConfig& cfg) {
  Simulation s;
  s.diffusion = diffuse(b, cfg);
  s.transmittance = ideal_transmittance(target, s.diffusion, cfg);
  // clamp(I, eps D, D) equals D * t in exact arithmetic and avoids the
  // rounding of the I / D round trip, so a fully covered pixel shows I exactly.
  std::array<Raster, 3> shown;
  for (int c = 0; c < 3; ++c) {
    const Raster& in = target.channel(c);
    Raster& out = shown[static_cast<std::size_t>(c)];
    out.resize(in.rows(), in.cols());
    for (Index i = 0; i < in.size(); ++i) {
      const double d = s.diffusion.data()[i];
      out.data()[i] = d < kDarkBacklight ? d : std::clamp(in.data()[i], cfg.leak_floor * d, d);
    }
  }
  s.displayed = HdrImage(std::move(shown), 1.0);
  return s;
}

HdrImage simulate(const HdrImage& target, const Backlight& b, const DisplayConfig& cfg) {
  return simulate_full(target, b, cfg).displayed;
}

SegmentStats segment_stats(const Raster& plane, const BacklightLayout& layout) {
  require_same_size(plane, layout.panel_height(), layout.panel_width(), "segment_stats");
  SegmentStats s;
  s.max.resize(layout.size());
  s.avg.resize(layout.size());
  for (Index i = 0; i < layout.led_rows(); ++i) {
    for (Index j = 0; j < layout.led_cols(); ++j) {
      const Index r0 = layout.row_edge(i), c0 = layout.col_edge(j);
      const Index r1 = layout.row_edge(i + 1), c1 = layout.col_edge(j + 1);
      double mx = plane(r0, c0), sum = 0.0;
      for (Index r = r0; r < r1; ++r) {
        for (Index c = c0; c < c1; ++c) {
          mx = std::max(mx, plane(r, c));
          sum += plane(r, c);
        }
      }
      const Index k = i * layout.led_cols() + j;
      s.max[k] = mx;
      s.avg[k] = sum / static_cast<double>((r1 - r0) * (c1 - c0));
    }
  }
  return s;
}

double clipping_fraction(const HdrImage& target, const DiffusionMap& d, double rel_tol) {
  require_same_size(d, target.height(), target.width(), "clipping_fraction");
  const Raster limit = d * (1.0 + rel_tol);
  Index clipped = 0;
  for (int c = 0; c < 3; ++c) clipped += (target.channel(c) > limit).count();
  return static_cast<double>(clipped) / static_cast<double>(3 * d.size());
}

}  // namespace dimlab
