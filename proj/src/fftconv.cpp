#include "dimlab/fftconv.hpp"

#include <cstring>
#include <mutex>

namespace dimlab {

namespace {

void require_finite(const Raster& r, const char* what) {
  if (r.size() == 0) throw InvalidArgument(std::string(what) + " is empty");
  if (!r.allFinite()) throw InvalidArgument(std::string(what) + " contains non-finite values");
}

Index wrap(Index v, Index n) {
  v %= n;
  return v < 0 ? v + n : v;
}

}  // namespace

ConvGeometry ConvGeometry::make(Index rows, Index cols, Index kernel_rows, Index kernel_cols, Boundary boundary) {
  if (rows < 1 || cols < 1 || kernel_rows < 1 || kernel_cols < 1) {
    throw InvalidArgument("ConvGeometry: dimensions must be >= 1");
  }
  ConvGeometry g;
  g.rows = rows;
  g.cols = cols;
  g.kernel_rows = kernel_rows;
  g.kernel_cols = kernel_cols;
  g.boundary = boundary;
  if (boundary == Boundary::kCircular) {
    g.padded_rows = rows;
    g.padded_cols = cols;
  } else {
    g.padded_rows = next_fast_size(rows + kernel_rows - 1);
    g.padded_cols = next_fast_size(cols + kernel_cols - 1, /*even=*/true);
  }
  return g;
}

LargeConvolver::LargeConvolver(const Raster& kernel, Index rows, Index cols, Boundary boundary)
    : geo_(ConvGeometry::make(rows, cols, kernel.rows(), kernel.cols(), boundary)),
      fft_(geo_.padded_rows, geo_.padded_cols) {
  require_finite(kernel, "kernel");
  // Place the kernel so that its anchor lands on the origin; circular mode
  // folds kernels larger than the image onto the torus.
  Raster placed = Raster::Zero(geo_.padded_rows, geo_.padded_cols);
  const Index ar = geo_.anchor_row();
  const Index ac = geo_.anchor_col();
  for (Index a = 0; a < kernel.rows(); ++a) {
    const Index r = wrap(a - ar, geo_.padded_rows);
    for (Index b = 0; b < kernel.cols(); ++b) {
      placed(r, wrap(b - ac, geo_.padded_cols)) += kernel(a, b);
    }
  }
  fft_.forward(placed, kernel_spectrum_);
}

Raster LargeConvolver::run(const Raster& input, bool adjoint) const {
  if (input.rows() != geo_.rows || input.cols() != geo_.cols) {
    throw InvalidArgument("LargeConvolver: input is " + std::to_string(input.rows()) + "x" +
                          std::to_string(input.cols()) + ", expected " + std::to_string(geo_.rows) + "x" +
                          std::to_string(geo_.cols));
  }
  require_finite(input, "image");
  Spectrum<double> s;
  fft_.forward(input, s);
  if (adjoint) {
    s *= kernel_spectrum_.conjugate();
  } else {
    s *= kernel_spectrum_;
  }
  Raster out;
  fft_.inverse(s, geo_.rows, geo_.cols, out);
  return out;
}

Raster LargeConvolver::apply(const Raster& image) const { return run(image, false); }

Raster LargeConvolver::apply_adjoint(const Raster& upstream) const { return run(upstream, true); }

std::uint64_t content_hash(const Raster& r) {
  // 64-bit FNV-1a over 8-byte words, finished with a murmur-style mix.
  std::uint64_t h = 1469598103934665603ULL ^ static_cast<std::uint64_t>(r.rows() * 1000003 + r.cols());
  const double* d = r.data();
  for (Index i = 0; i < r.size(); ++i) {
    std::uint64_t w;
    std::memcpy(&w, d + i, sizeof w);
    h = (h ^ w) * 1099511628211ULL;
  }
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdULL;
  h ^= h >> 33;
  return h;
}

std::shared_ptr<const LargeConvolver> KernelSpectrumCache::get(const Raster& kernel, Index rows, Index cols,
                                                              Boundary boundary) {
  const Key key{content_hash(kernel), kernel.rows(), kernel.cols(), rows, cols, boundary};
  {
    std::shared_lock lock(mutex_);
    for (const auto& e : entries_) {
      if (e.key == key && (e.kernel == kernel).all()) {
        hits_.fetch_add(1, std::memory_order_relaxed);
        return e.conv;
      }
    }
  }
  auto conv = std::make_shared<const LargeConvolver>(kernel, rows, cols, boundary);
  std::unique_lock lock(mutex_);
  for (const auto& e : entries_) {
    if (e.key == key && (e.kernel == kernel).all()) return e.conv;
  }
  ++misses_;
  entries_.push_back(Entry{key, kernel, conv});
  while (entries_.size() > capacity_) entries_.pop_front();
  return conv;
}

std::size_t KernelSpectrumCache::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

std::size_t KernelSpectrumCache::hits() const { return hits_.load(std::memory_order_relaxed); }

std::size_t KernelSpectrumCache::misses() const {
  std::shared_lock lock(mutex_);
  return misses_;
}

void KernelSpectrumCache::clear() {
  std::unique_lock lock(mutex_);
  entries_.clear();
  hits_ = 0;
  misses_ = 0;
}

KernelSpectrumCache& default_kernel_cache() {
  static KernelSpectrumCache cache;
  return cache;
}

Raster conv2_large(const Raster& image, const Raster& kernel, Boundary boundary) {
  require_finite(image, "image");
  require_finite(kernel, "kernel");
  return default_kernel_cache().get(kernel, image.rows(), image.cols(), boundary)->apply(image);
}

Raster correlate_large(const Raster& upstream, const Raster& kernel, Boundary boundary) {
  require_finite(upstream, "upstream");
  require_finite(kernel, "kernel");
  return default_kernel_cache().get(kernel, upstream.rows(), upstream.cols(), boundary)->apply_adjoint(upstream);
}

}  // namespace dimlab
