#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "dimlab/image.hpp"

namespace dimlab {

enum class DecodeErrorKind {
  kIo,
  kMalformedHeader,
  kTruncated,
  kUnsupportedOrientation,
  kSizeMismatch,
  kInvalidSample,
};

const char* to_string(DecodeErrorKind kind);

class DecodeError : public std::runtime_error {
 public:
  DecodeError(DecodeErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  DecodeErrorKind kind() const { return kind_; }

 private:
  DecodeErrorKind kind_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Rgbe = std::array<std::uint8_t, 4>;

/// Shared-exponent encoding. Values below 1e-32 encode as (0,0,0,0).
Rgbe float_to_rgbe(double r, double g, double b);

/// c = m / 256 * 2^(E - 128); E = 0 decodes to black.
std::array<double, 3> rgbe_to_float(const Rgbe& px);

/// Radiance RGBE (.hdr). Flat, new-style RLE and old-style RLE scanlines
/// are accepted; the four Y-major orientations are normalised to a
/// top-left origin. A `NITSPERUNIT=` header line restores calibration.
HdrImage read_hdr(const std::filesystem::path& path);
HdrImage decode_hdr(const std::string& bytes);

struct HdrWriteOptions {
  bool run_length = true;  // ignored (flat) for widths outside [8, 32767]
};

void write_hdr(const HdrImage& image, const std::filesystem::path& path, HdrWriteOptions opts = {});
std::string encode_hdr(const HdrImage& image, HdrWriteOptions opts = {});

/// Portable float map. `PF` is RGB, `Pf` grayscale (replicated to RGB).
/// Negative scale means little-endian; rows are stored bottom-to-top.
HdrImage read_pfm(const std::filesystem::path& path);
HdrImage decode_pfm(const std::string& bytes);

/// Grayscale view of a PFM: `Pf` as is, `PF` only if all channels agree.
Raster read_pfm_gray(const std::filesystem::path& path);

/// Writes little-endian `PF`.
void write_pfm(const HdrImage& image, const std::filesystem::path& path);
/// Writes little-endian `Pf`.
void write_pfm(const Raster& gray, const std::filesystem::path& path);
std::string encode_pfm(const HdrImage& image);
std::string encode_pfm(const Raster& gray);

/// Dispatches on extension (.hdr/.pic/.rgbe vs .pfm).
HdrImage read_image(const std::filesystem::path& path);
void write_image(const HdrImage& image, const std::filesystem::path& path);

}  // namespace dimlab
