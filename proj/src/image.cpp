#include "dimlab/image.hpp"

#include <cmath>

namespace dimlab {

HdrImage::HdrImage(Index width, Index height) {
  if (width < 1 || height < 1) {
    throw InvalidArgument("HdrImage: dimensions must be >= 1");
  }
  for (auto& c : rgb_) {
    c = Raster::Zero(height, width);
  }
}

HdrImage::HdrImage(std::array<Raster, 3> rgb, std::optional<double> nits_per_unit)
    : rgb_(std::move(rgb)), nits_per_unit_(nits_per_unit) {
  validate();
}

HdrImage HdrImage::from_gray(const Raster& gray, std::optional<double> nits_per_unit) {
  return HdrImage({gray, gray, gray}, nits_per_unit);
}

double HdrImage::max_value() const {
  double m = 0.0;
  for (const auto& c : rgb_) {
    if (c.size() > 0) m = std::max(m, c.maxCoeff());
  }
  return m;
}

void HdrImage::validate() const {
  const Index h = rgb_[0].rows();
  const Index w = rgb_[0].cols();
  if (w < 1 || h < 1) {
    throw InvalidArgument("HdrImage: dimensions must be >= 1");
  }
  for (const auto& c : rgb_) {
    if (c.rows() != h || c.cols() != w) {
      throw InvalidArgument("HdrImage: channel dimensions disagree");
    }
    if (!c.allFinite() || (c < 0.0).any()) {
      throw InvalidArgument("HdrImage: channel values must be finite and non-negative");
    }
  }
  if (nits_per_unit_ && !(std::isfinite(*nits_per_unit_) && *nits_per_unit_ > 0.0)) {
    throw InvalidArgument("HdrImage: nits_per_unit must be positive");
  }
}

LumaMap luminance(const HdrImage& image) {
  return kLumaR * image.channel(0) + kLumaG * image.channel(1) + kLumaB * image.channel(2);
}

Raster max_channel(const HdrImage& image) {
  return image.channel(0).max(image.channel(1)).max(image.channel(2));
}

HdrImage scaled(const HdrImage& image, double factor) {
  if (!(factor >= 0.0) || !std::isfinite(factor)) {
    throw InvalidArgument("scaled: factor must be finite and >= 0");
  }
  return HdrImage({image.channel(0) * factor, image.channel(1) * factor, image.channel(2) * factor},
                  image.calibration());
}

}  // namespace dimlab
