#pragma once

#include <atomic>
#include <cstdint>
#include <list>
#include <memory>
#include <shared_mutex>

#include "dimlab/fft.hpp"
#include "dimlab/image.hpp"

namespace dimlab {

enum class Boundary {
  kZeroPad,   // linear convolution, image treated as zero outside its support
  kCircular,  // periodic image, kernel folded onto the image torus
};

/// Index convention (both modes):
///   out(i, j) = sum_{a, b} kernel(a, b) * image(i - a + kernel_rows / 2, j - b + kernel_cols / 2)
/// i.e. a "same"-size convolution whose kernel anchor is its centre element.
struct ConvGeometry {
  Index rows = 0;
  Index cols = 0;
  Index kernel_rows = 0;
  Index kernel_cols = 0;
  Index padded_rows = 0;
  Index padded_cols = 0;
  Boundary boundary = Boundary::kZeroPad;

  Index anchor_row() const { return kernel_rows / 2; }
  Index anchor_col() const { return kernel_cols / 2; }

  static ConvGeometry make(Index rows, Index cols, Index kernel_rows, Index kernel_cols, Boundary boundary);
};

/// Transform state for convolving rasters of one size with one kernel.
/// Immutable after construction; apply() may run concurrently.
class LargeConvolver {
 public:
  LargeConvolver(const Raster& kernel, Index rows, Index cols, Boundary boundary);

  const ConvGeometry& geometry() const { return geo_; }

  Raster apply(const Raster& image) const;

  /// Adjoint of apply(): <apply(x), y> = <x, apply_adjoint(y)>.
  Raster apply_adjoint(const Raster& upstream) const;

 private:
  Raster run(const Raster& input, bool adjoint) const;

  ConvGeometry geo_;
  RealFft2<double> fft_;
  Spectrum<double> kernel_spectrum_;
};

/// Kernel transforms keyed by (kernel content, image size, boundary). Lookups
/// take a shared lock; insertion is single-writer. Oldest entries are evicted
/// beyond `capacity`.
class KernelSpectrumCache {
 public:
  explicit KernelSpectrumCache(std::size_t capacity = 8) : capacity_(capacity) {}

  std::shared_ptr<const LargeConvolver> get(const Raster& kernel, Index rows, Index cols, Boundary boundary);

  std::size_t size() const;
  std::size_t hits() const;
  std::size_t misses() const;
  void clear();

 private:
  struct Key {
    std::uint64_t hash;
    Index kernel_rows, kernel_cols, rows, cols;
    Boundary boundary;
    bool operator==(const Key&) const = default;
  };
  struct Entry {
    Key key;
    Raster kernel;  // guards against hash collisions
    std::shared_ptr<const LargeConvolver> conv;
  };

  std::size_t capacity_;
  mutable std::shared_mutex mutex_;
  std::list<Entry> entries_;
  std::atomic<std::size_t> hits_{0};
  std::size_t misses_ = 0;
};

KernelSpectrumCache& default_kernel_cache();

std::uint64_t content_hash(const Raster& r);

/// Large-kernel convolution through the convolution theorem. Zero-pad mode
/// pads to at least (H + Hg - 1) x (W + Wg - 1), rounded to fast FFT sizes,
/// and crops back to the image size.
Raster conv2_large(const Raster& image, const Raster& kernel, Boundary boundary = Boundary::kZeroPad);

/// Adjoint of conv2_large with respect to the image (a correlation).
Raster correlate_large(const Raster& upstream, const Raster& kernel, Boundary boundary = Boundary::kZeroPad);

}  // namespace dimlab
