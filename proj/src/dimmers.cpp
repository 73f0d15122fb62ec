#include "dimlab/dimmers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dimlab {

namespace {

Eigen::VectorXd unit_clamp(const Eigen::VectorXd& v) { return v.cwiseMax(0.0).cwiseMin(1.0); }

SegmentStats normalized_stats(const HdrImage& target, const DisplayConfig& cfg, StatPlane plane) {
  cfg.validate();
  return segment_stats(normalized_stat_plane(target, cfg.peak_nits, plane), *cfg.layout);
}

}  // namespace

void DimmerSpec::validate() const {
  if (!(lp_c >= 0.0 && lp_c <= 1.0)) throw InvalidArgument("dimmer: lp_c must be in [0, 1]");
  if (!(imf_w >= 0.0 && imf_w <= 1.0)) throw InvalidArgument("dimmer: imf_w must be in [0, 1]");
  if (imf_bins < 2) throw InvalidArgument("dimmer: imf_bins must be >= 2");
}

const char* to_string(DimmerKind kind) {
  switch (kind) {
    case DimmerKind::kMax: return "max";
    case DimmerKind::kAvg: return "avg";
    case DimmerKind::kLp: return "lp";
    case DimmerKind::kImf: return "imf";
  }
  return "?";
}

const char* to_string(StatPlane plane) { return plane == StatPlane::kMaxRgb ? "max_rgb" : "luminance"; }

DimmerKind parse_dimmer_kind(const std::string& name) {
  for (DimmerKind k : {DimmerKind::kMax, DimmerKind::kAvg, DimmerKind::kLp, DimmerKind::kImf}) {
    if (name == to_string(k)) return k;
  }
  throw InvalidArgument("unknown dimmer '" + name + "' (expected max, avg, lp or imf)");
}

StatPlane parse_stat_plane(const std::string& name) {
  if (name == "max_rgb") return StatPlane::kMaxRgb;
  if (name == "luminance") return StatPlane::kLuminance;
  throw InvalidArgument("unknown stat plane '" + name + "' (expected max_rgb or luminance)");
}

Raster normalized_stat_plane(const HdrImage& target, double peak_nits, StatPlane plane) {
  const Raster p = plane == StatPlane::kMaxRgb ? max_channel(target) : luminance(target);
  return (p * target.nits_per_unit()) / peak_nits;
}

Backlight dim_max(const HdrImage& target, const DisplayConfig& cfg, StatPlane plane) {
  return Backlight(cfg.layout, unit_clamp(normalized_stats(target, cfg, plane).max));
}

Backlight dim_avg(const HdrImage& target, const DisplayConfig& cfg, StatPlane plane) {
  return Backlight(cfg.layout, unit_clamp(normalized_stats(target, cfg, plane).avg));
}

Backlight dim_lp(const HdrImage& target, const DisplayConfig& cfg, double c, StatPlane plane) {
  if (!(c >= 0.0 && c <= 1.0)) throw InvalidArgument("dim_lp: c must be in [0, 1]");
  const SegmentStats s = normalized_stats(target, cfg, plane);
  // Convex combination, pinned between its endpoints against rounding.
  const Eigen::VectorXd mix = ((1.0 - c) * s.avg + c * s.max).cwiseMax(s.avg).cwiseMin(s.max);
  return Backlight(cfg.layout, unit_clamp(mix));
}

Backlight dim_imf(const HdrImage& target, const DisplayConfig& cfg, double w, int bins, StatPlane plane) {
  if (!(w >= 0.0 && w <= 1.0)) throw InvalidArgument("dim_imf: w must be in [0, 1]");
  cfg.validate();
  const Raster p = normalized_stat_plane(target, cfg.peak_nits, plane).min(1.0);
  const SegmentStats s = segment_stats(p, *cfg.layout);
  const InverseCdf inv(p, bins);
  Eigen::VectorXd b(s.max.size());
  for (Index k = 0; k < b.size(); ++k) b[k] = inv(w * s.max[k] + (1.0 - w) * s.avg[k]);
  return Backlight(cfg.layout, unit_clamp(b));
}

Backlight run_dimmer(const HdrImage& target, const DisplayConfig& cfg, const DimmerSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case DimmerKind::kMax: return dim_max(target, cfg, spec.plane);
    case DimmerKind::kAvg: return dim_avg(target, cfg, spec.plane);
    case DimmerKind::kLp: return dim_lp(target, cfg, spec.lp_c, spec.plane);
    case DimmerKind::kImf: return dim_imf(target, cfg, spec.imf_w, spec.imf_bins, spec.plane);
  }
  throw InvalidArgument("run_dimmer: unknown kind");
}

InverseCdf::InverseCdf(const Raster& values, int bins) {
  if (bins < 2) throw InvalidArgument("InverseCdf: bins must be >= 2");
  if (values.size() == 0) throw InvalidArgument("InverseCdf: no samples");
  const auto n = static_cast<std::size_t>(bins);
  count_.assign(n, 0.0);
  lo_.assign(n, std::numeric_limits<double>::infinity());
  hi_.assign(n, -std::numeric_limits<double>::infinity());
  for (Index i = 0; i < values.size(); ++i) {
    const double v = std::clamp(values.data()[i], 0.0, 1.0);
    const auto b = std::min(n - 1, static_cast<std::size_t>(v * static_cast<double>(bins)));
    count_[b] += 1.0;
    lo_[b] = std::min(lo_[b], v);
    hi_[b] = std::max(hi_[b], v);
  }
  const double total = static_cast<double>(values.size());
  cum_.resize(n);
  double acc = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    count_[b] /= total;
    acc += count_[b];
    cum_[b] = acc;
  }
  cum_.back() = 1.0;
}

double InverseCdf::operator()(double q) const {
  if (!(q > 0.0)) return 0.0;
  q = std::min(q, 1.0);
  const auto it = std::lower_bound(cum_.begin(), cum_.end(), q);
  std::size_t b = std::min(static_cast<std::size_t>(it - cum_.begin()), cum_.size() - 1);
  // Rounding in the running sum can leave q just past the last occupied bin.
  while (count_[b] == 0.0 && b > 0) --b;
  const double before = cum_[b] - count_[b];
  const double frac = std::clamp((q - before) / count_[b], 0.0, 1.0);
  return lo_[b] + frac * (hi_[b] - lo_[b]);
}

}  // namespace dimlab
