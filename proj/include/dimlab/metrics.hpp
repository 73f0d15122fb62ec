#pragma once

#include <filesystem>
#include <vector>

#include "dimlab/display.hpp"

namespace dimlab {

/// Monotone luminance -> code mapping, piecewise linear in log-luminance
/// between control points. Inputs outside the table are clamped to its ends.
class PuCurve {
 public:
  /// Points must be strictly increasing in both coordinates.
  PuCurve(std::vector<double> luminance, std::vector<double> code);

  /// Built-in table over [1e-5, 1e8] cd/m^2: logarithmic below 1 cd/m^2, a
  /// 1/2.2 power law above, joined with matching slope, anchored at
  /// PU(0.1) = 0 and PU(80) = 255.
  static const PuCurve& standard();

  /// Two columns (luminance, code); a non-numeric first line is a header.
  static PuCurve load_csv(const std::filesystem::path& path);

  double encode(double nits) const;
  /// d code / d nits; 0 outside the table.
  double slope(double nits) const;
  double decode(double code) const;

  Raster encode(const Raster& nits) const;

  double min_luminance() const { return lum_.front(); }
  double max_luminance() const { return lum_.back(); }
  const std::vector<double>& luminance_points() const { return lum_; }
  const std::vector<double>& code_points() const { return code_; }

 private:
  std::size_t segment(double log_l) const;

  std::vector<double> lum_, log_lum_, code_;
};

struct QualityOptions {
  double peak_nits = 4000.0;
  const PuCurve* curve = nullptr;  // null: PuCurve::standard()
  int scales = 5;

  const PuCurve& pu() const { return curve ? *curve : PuCurve::standard(); }
  /// PU(peak_nits) - PU(0.1).
  double code_range() const;
};

inline constexpr double kPsnrCap = 120.0;

/// Luminance in cd/m^2 (values times nits_per_unit) through the PU curve.
Raster pu_luminance(const HdrImage& image, const PuCurve& curve);

/// PSNR of PU-encoded luminance with peak = code_range(); capped at 120 dB.
double pu_psnr(const HdrImage& a, const HdrImage& b, const QualityOptions& opts = {});

/// Standard five-scale exponents for multi-scale SSIM.
inline constexpr double kMsSsimWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

struct MsSsimResult {
  double score = 0.0;
  int scales = 0;                 // may be fewer than requested on small images
  std::vector<double> luminance;  // l term per scale
  std::vector<double> contrast;   // cs term per scale
};

/// Multi-scale SSIM on PU-encoded luminance: 11x11 Gaussian window
/// (sigma 1.5) with valid-region filtering, 2x2 mean downsampling between
/// scales, K1 = 0.01, K2 = 0.03 relative to code_range(). Uses as many scales
/// (up to opts.scales) as the smaller image side allows (11 * 2^(s-1)), with
/// the used weights renormalised to sum to one.
MsSsimResult pu_ms_ssim_detail(const HdrImage& a, const HdrImage& b, const QualityOptions& opts = {});
double pu_ms_ssim(const HdrImage& a, const HdrImage& b, const QualityOptions& opts = {});

/// Multi-scale SSIM on two code planes with dynamic range `range`.
MsSsimResult ms_ssim(const Raster& x, const Raster& y, double range, int scales = 5);

/// Power saving ratio in percent: 100 (1 - sum B_k / N).
double psr(const Backlight& b);

struct MetricReport {
  double pu_psnr = 0.0;
  double pu_ms_ssim = 0.0;
  int ms_ssim_scales = 0;
  double psr = 0.0;
  double clipping_fraction = 0.0;
};

/// Scores a simulation against its (display-nits) target.
MetricReport evaluate(const HdrImage& target, const Backlight& b, const Simulation& sim,
                      const QualityOptions& opts = {});

}  // namespace dimlab
