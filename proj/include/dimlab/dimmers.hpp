#pragma once

#include <string>

#include "dimlab/display.hpp"

namespace dimlab {

enum class DimmerKind { kMax, kAvg, kLp, kImf };

/// Per-pixel statistic the dimmers aggregate. kMaxRgb (max over channels) is
/// the default because a luminance statistic under-drives saturated colours;
/// kLuminance uses the Rec. 709 plane.
enum class StatPlane { kMaxRgb, kLuminance };

struct DimmerSpec {
  DimmerKind kind = DimmerKind::kMax;
  double lp_c = 0.5;
  double imf_w = 0.5;
  int imf_bins = 256;
  StatPlane plane = StatPlane::kMaxRgb;

  void validate() const;
};

const char* to_string(DimmerKind kind);
const char* to_string(StatPlane plane);
DimmerKind parse_dimmer_kind(const std::string& name);
StatPlane parse_stat_plane(const std::string& name);

/// Stat plane divided by peak_nits.
Raster normalized_stat_plane(const HdrImage& target, double peak_nits, StatPlane plane = StatPlane::kMaxRgb);

/// Targets are in display nits, already clipped at cfg.peak_nits. Outputs
/// are clamped into [0, 1].
Backlight dim_max(const HdrImage& target, const DisplayConfig& cfg, StatPlane plane = StatPlane::kMaxRgb);
Backlight dim_avg(const HdrImage& target, const DisplayConfig& cfg, StatPlane plane = StatPlane::kMaxRgb);
/// B_k = avg_k + c (max_k - avg_k).
Backlight dim_lp(const HdrImage& target, const DisplayConfig& cfg, double c = 0.5,
                 StatPlane plane = StatPlane::kMaxRgb);
/// B_k = F^-1(w max_k + (1 - w) avg_k), F the global histogram CDF.
Backlight dim_imf(const HdrImage& target, const DisplayConfig& cfg, double w = 0.5, int bins = 256,
                  StatPlane plane = StatPlane::kMaxRgb);

Backlight run_dimmer(const HdrImage& target, const DisplayConfig& cfg, const DimmerSpec& spec);

/// Histogram-based inverse CDF over values in [0, 1].
///
/// Each bin keeps the smallest and largest sample it saw. F^-1(q) takes the
/// first bin whose cumulative share reaches q and interpolates linearly
/// between that bin's extremes by the share of q falling inside it; q <= 0
/// maps to 0. Exact on constant data, within one bin width on smooth data.
class InverseCdf {
 public:
  InverseCdf(const Raster& values, int bins);
  double operator()(double q) const;
  int bins() const { return static_cast<int>(count_.size()); }

 private:
  std::vector<double> cum_;  // cumulative share through bin i
  std::vector<double> count_;
  std::vector<double> lo_, hi_;
};

}  // namespace dimlab
