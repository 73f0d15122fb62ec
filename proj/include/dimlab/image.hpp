#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace dimlab {

using Index = Eigen::Index;

/// Single-channel dense raster, row-major (row = y, col = x).
template <typename Scalar>
using Plane = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Raster = Plane<double>;

/// Luminance plane. Same dimensions as its source image, non-negative.
using LumaMap = Raster;

/// Thrown when a caller violates a documented precondition.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Linear-radiance RGB raster.
///
/// Stored planar (one Raster per channel). Every value is finite and
/// non-negative; construction enforces this. `nits_per_unit` is set only
/// for images whose values carry an absolute luminance calibration.
class HdrImage {
 public:
  HdrImage() = default;
  HdrImage(Index width, Index height);
  explicit HdrImage(std::array<Raster, 3> rgb, std::optional<double> nits_per_unit = std::nullopt);

  /// Same value in all three channels.
  static HdrImage from_gray(const Raster& gray, std::optional<double> nits_per_unit = std::nullopt);

  Index width() const { return rgb_[0].cols(); }
  Index height() const { return rgb_[0].rows(); }
  Index pixel_count() const { return width() * height(); }
  bool empty() const { return rgb_[0].size() == 0; }

  const Raster& channel(int c) const { return rgb_[static_cast<std::size_t>(c)]; }
  const std::array<Raster, 3>& channels() const { return rgb_; }

  /// Mutable access; call validate() afterwards if values may have gone
  /// negative or non-finite.
  Raster& channel_mut(int c) { return rgb_[static_cast<std::size_t>(c)]; }

  bool calibrated() const { return nits_per_unit_.has_value(); }
  /// cd/m^2 represented by a stored value of 1.0 (1.0 when uncalibrated).
  double nits_per_unit() const { return nits_per_unit_.value_or(1.0); }
  const std::optional<double>& calibration() const { return nits_per_unit_; }
  void set_calibration(std::optional<double> nits_per_unit) { nits_per_unit_ = nits_per_unit; }

  double max_value() const;

  /// Throws InvalidArgument unless dimensions agree and values are finite and >= 0.
  void validate() const;

 private:
  std::array<Raster, 3> rgb_;
  std::optional<double> nits_per_unit_;
};

inline constexpr double kLumaR = 0.2126;
inline constexpr double kLumaG = 0.7152;
inline constexpr double kLumaB = 0.0722;

/// Rec. 709 luminance.
LumaMap luminance(const HdrImage& image);

/// Per-pixel maximum over the three channels.
Raster max_channel(const HdrImage& image);

HdrImage scaled(const HdrImage& image, double factor);

}  // namespace dimlab
