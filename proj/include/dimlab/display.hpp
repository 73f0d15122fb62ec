#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "dimlab/fftconv.hpp"
#include "dimlab/image.hpp"

namespace dimlab {

struct PixelCoord {
  Index row = 0;
  Index col = 0;
  bool operator==(const PixelCoord&) const = default;
};

/// Rectangular LED grid behind the panel. LED k sits in grid cell
/// (k / led_cols, k % led_cols); cell edges are floor(i * extent / count),
/// so segments tile the panel and differ in size by at most one pixel.
class BacklightLayout {
 public:
  BacklightLayout(Index led_rows, Index led_cols, Index panel_height, Index panel_width, double max_drive_nits);

  Index led_rows() const { return led_rows_; }
  Index led_cols() const { return led_cols_; }
  Index size() const { return led_rows_ * led_cols_; }
  Index panel_height() const { return panel_height_; }
  Index panel_width() const { return panel_width_; }
  double max_drive_nits() const { return max_drive_nits_; }

  /// Segment midpoints: start + extent / 2 along each axis.
  const std::vector<PixelCoord>& centers() const { return centers_; }

  /// Segment bounds, half-open [row_edge(i), row_edge(i + 1)).
  Index row_edge(Index i) const { return row_edges_[static_cast<std::size_t>(i)]; }
  Index col_edge(Index j) const { return col_edges_[static_cast<std::size_t>(j)]; }

  /// LED index owning pixel (row, col).
  Index segment_of(Index row, Index col) const;

  /// Per-pixel LED index over the whole panel.
  Eigen::Array<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> segment_map() const;

  /// Mean segment extent (rows, cols).
  double pitch_rows() const { return static_cast<double>(panel_height_) / static_cast<double>(led_rows_); }
  double pitch_cols() const { return static_cast<double>(panel_width_) / static_cast<double>(led_cols_); }

  bool operator==(const BacklightLayout& o) const;

 private:
  Index led_rows_, led_cols_, panel_height_, panel_width_;
  double max_drive_nits_;
  std::vector<Index> row_edges_, col_edges_;
  std::vector<PixelCoord> centers_;
};

using LayoutPtr = std::shared_ptr<const BacklightLayout>;

/// Per-LED drive levels in [0, 1].
class Backlight {
 public:
  Backlight(LayoutPtr layout, Eigen::VectorXd values);
  static Backlight constant(LayoutPtr layout, double value);

  const BacklightLayout& layout() const { return *layout_; }
  const LayoutPtr& layout_ptr() const { return layout_; }
  const Eigen::VectorXd& values() const { return values_; }
  Index size() const { return values_.size(); }
  double operator[](Index k) const { return values_[k]; }

 private:
  LayoutPtr layout_;
  Eigen::VectorXd values_;
};

/// Non-negative diffusion kernel.
class Psf {
 public:
  Psf() : kernel_(Raster::Ones(1, 1)) {}
  explicit Psf(Raster kernel);

  /// Isotropic Gaussian, size 2 * ceil(radius) + 1 on each axis, peak 1.
  static Psf gaussian(double sigma, double radius);
  /// rows x cols of `value`.
  static Psf box(Index rows, Index cols, double value = 1.0);
  static Psf delta() { return Psf(); }
  /// Grayscale PFM (`Pf`, or `PF` with equal channels).
  static Psf load(const std::filesystem::path& path);

  const Raster& kernel() const { return kernel_; }
  Index rows() const { return kernel_.rows(); }
  Index cols() const { return kernel_.cols(); }
  double gain() const { return kernel_.sum(); }

  Psf scaled(double factor) const { return Psf(kernel_ * factor); }

 private:
  Raster kernel_;
};

using DiffusionMap = Raster;

/// Per-channel LC transmittance, each plane in [leak_floor, 1].
using Transmittance = std::array<Raster, 3>;

struct DisplayConfig {
  LayoutPtr layout;
  Psf psf;
  double leak_floor = 0.001;
  double peak_nits = 4000.0;
  Boundary boundary = Boundary::kZeroPad;

  /// Throws InvalidArgument on violated invariants.
  void validate() const;

  Index panel_height() const { return layout->panel_height(); }
  Index panel_width() const { return layout->panel_width(); }
};

/// Default display for a panel: led_rows x led_cols grid driven at peak_nits,
/// Gaussian PSF with sigma = 0.6 x mean pitch truncated to a 6 sigma wide
/// support, normalised with normalize_psf_to_peak.
DisplayConfig default_display(Index panel_height, Index panel_width, Index led_rows = 12, Index led_cols = 22,
                              double peak_nits = 4000.0, double leak_floor = 0.001);

/// Rescales the PSF so that an all-on backlight yields exactly peak_nits at
/// the panel centre pixel (height / 2, width / 2).
Psf normalize_psf_to_peak(const Psf& psf, const BacklightLayout& layout, double peak_nits,
                          Boundary boundary = Boundary::kZeroPad);

/// Brings an image into display units: calibrated images are converted to
/// cd/m^2; uncalibrated ones are scaled so their maximum luminance equals
/// peak_nits. Every channel is then clipped at peak_nits. The result is
/// calibrated with nits_per_unit = 1.
HdrImage to_display_nits(const HdrImage& image, double peak_nits);

/// Zero except B_k * max_drive_nits at each LED centre.
Raster sparse_backlight_raster(const Backlight& b);

/// D = g * sparse_backlight_raster(b), floored at 0.
DiffusionMap diffuse(const Backlight& b, const DisplayConfig& cfg);

/// t_c = clamp(I_c / D, leak_floor, 1), with t_c = 1 where D < kDarkBacklight.
Transmittance ideal_transmittance(const HdrImage& target, const DiffusionMap& d, const DisplayConfig& cfg);

inline constexpr double kDarkBacklight = 1e-6;

/// I~_c = D * t_c. Output calibrated in cd/m^2.
HdrImage reconstruct(const DiffusionMap& d, const Transmittance& t);

struct Simulation {
  DiffusionMap diffusion;
  Transmittance transmittance;
  HdrImage displayed;
};

/// diffuse -> ideal_transmittance -> reconstruct. `target` must already be in
/// display nits (see to_display_nits). `displayed` is evaluated as
/// clamp(I_c, leak_floor * D, D) (D itself where D < kDarkBacklight), which is
/// reconstruct(D, t) without the rounding of I / D * D.
HdrImage simulate(const HdrImage& target, const Backlight& b, const DisplayConfig& cfg);
Simulation simulate_full(const HdrImage& target, const Backlight& b, const DisplayConfig& cfg);

struct SegmentStats {
  Eigen::VectorXd max;
  Eigen::VectorXd avg;
};

SegmentStats segment_stats(const Raster& plane, const BacklightLayout& layout);

/// Fraction of channel-pixels where I_c > D. A relative slack of `rel_tol`
/// (I_c > D * (1 + rel_tol)) keeps floating-point noise in D from counting.
double clipping_fraction(const HdrImage& target, const DiffusionMap& d, double rel_tol = 1e-9);

}  // namespace dimlab
