#pragma once

// Mixed-radix Stockham FFT over batches of interleaved sequences, with a
// Bluestein fallback for lengths that carry a large prime factor.
//
// Layout: a plan of length n transforms `lanes` sequences at once; element k
// of lane b lives at data[k * lanes + b]. lanes = 1 is an ordinary 1-D
// transform; lanes = width transforms every column of a row-major matrix
// without a transpose.

#include <cmath>
#include <complex>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "dimlab/image.hpp"

namespace dimlab {

template <typename Scalar>
using Spectrum = Eigen::Array<std::complex<Scalar>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// True if n has no prime factor above 7.
bool is_fast_size(Index n);

/// Smallest fast size >= n (optionally even).
Index next_fast_size(Index n, bool even = false);

/// Prime factorisation in ascending order.
std::vector<Index> prime_factors(Index n);

namespace detail {

template <typename T>
inline std::complex<T> cmul(const std::complex<T>& a, const std::complex<T>& b) {
  return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
}

// Multiply by i * sigma.
template <typename T>
inline std::complex<T> rot(const std::complex<T>& a, T sigma) {
  return {-sigma * a.imag(), sigma * a.real()};
}

template <typename T>
inline std::complex<T> polar_unit(long double turns) {
  const long double a = 2.0L * std::numbers::pi_v<long double> * turns;
  return {static_cast<T>(std::cos(a)), static_cast<T>(std::sin(a))};
}

}  // namespace detail

template <typename T>
class FftPlan {
 public:
  using Complex = std::complex<T>;

  static constexpr Index kMaxDirectPrime = 37;

  explicit FftPlan(Index n) : n_(n) {
    if (n < 1) throw InvalidArgument("FftPlan: length must be >= 1");
    const auto primes = prime_factors(n);
    if (!primes.empty() && primes.back() > kMaxDirectPrime) {
      init_bluestein();
    } else {
      init_stages(primes);
    }
  }

  Index size() const { return n_; }

  /// Unnormalised forward transform, exponent sign -1.
  void forward(Complex* data, Index lanes, std::vector<Complex>& scratch) const {
    transform(data, lanes, false, scratch);
  }
  /// Unnormalised inverse transform, exponent sign +1.
  void inverse(Complex* data, Index lanes, std::vector<Complex>& scratch) const {
    transform(data, lanes, true, scratch);
  }
  void forward(Complex* data, Index lanes = 1) const {
    std::vector<Complex> scratch;
    forward(data, lanes, scratch);
  }
  void inverse(Complex* data, Index lanes = 1) const {
    std::vector<Complex> scratch;
    inverse(data, lanes, scratch);
  }

 private:
  struct Stage {
    int radix = 0;
    Index span = 0;     // length of the sub-transforms consumed (L)
    Index out_run = 0;  // r' = n / (L * radix)
    std::vector<Complex> twiddles;  // [j * (radix - 1) + q - 1] = w_{L*radix}^{q j}, forward sign
    std::vector<Complex> roots;     // w_radix^m, forward sign, generic radix only
  };

  struct Bluestein {
    Index m = 0;
    std::unique_ptr<FftPlan> inner;
    std::vector<Complex> chirp;  // exp(-i pi k^2 / n)
    std::vector<Complex> kernel_fwd;
    std::vector<Complex> kernel_inv;
  };

  void init_stages(const std::vector<Index>& primes) {
    // Group pairs of 2s into radix-4 stages.
    std::vector<int> radices;
    Index twos = 0;
    for (Index p : primes) twos += p == 2;
    for (; twos >= 2; twos -= 2) radices.push_back(4);
    if (twos == 1) radices.push_back(2);
    for (Index p : primes) {
      if (p != 2) radices.push_back(static_cast<int>(p));
    }
    Index span = 1;
    for (int p : radices) {
      Stage s;
      s.radix = p;
      s.span = span;
      s.out_run = n_ / (span * p);
      s.twiddles.resize(static_cast<std::size_t>(span * (p - 1)));
      for (Index j = 0; j < span; ++j) {
        for (int q = 1; q < p; ++q) {
          s.twiddles[static_cast<std::size_t>(j * (p - 1) + q - 1)] =
              detail::polar_unit<T>(-static_cast<long double>(q * j) / static_cast<long double>(span * p));
        }
      }
      if (p != 2 && p != 3 && p != 4 && p != 5) {
        s.roots.resize(static_cast<std::size_t>(p));
        for (int m = 0; m < p; ++m) {
          s.roots[static_cast<std::size_t>(m)] = detail::polar_unit<T>(-static_cast<long double>(m) / p);
        }
      }
      stages_.push_back(std::move(s));
      span *= p;
    }
  }

  void init_bluestein() {
    auto b = std::make_unique<Bluestein>();
    b->m = 1;
    while (b->m < 2 * n_ - 1) b->m *= 2;
    b->inner = std::make_unique<FftPlan>(b->m);
    b->chirp.resize(static_cast<std::size_t>(n_));
    const long long two_n = 2LL * n_;
    for (Index k = 0; k < n_; ++k) {
      const long long k2 = (static_cast<long long>(k) * k) % two_n;
      b->chirp[static_cast<std::size_t>(k)] = detail::polar_unit<T>(-static_cast<long double>(k2) / two_n);
    }
    // Filter conj(c_m) for the forward chirp c_m = chirp[m]; the inverse uses conj(chirp).
    const auto make_kernel = [&](bool inv) {
      std::vector<Complex> h(static_cast<std::size_t>(b->m), Complex(0));
      for (Index k = 0; k < n_; ++k) {
        const Complex c = inv ? std::conj(b->chirp[static_cast<std::size_t>(k)]) : b->chirp[static_cast<std::size_t>(k)];
        h[static_cast<std::size_t>(k)] = std::conj(c);
        if (k > 0) h[static_cast<std::size_t>(b->m - k)] = std::conj(c);
      }
      b->inner->forward(h.data(), 1);
      return h;
    };
    b->kernel_fwd = make_kernel(false);
    b->kernel_inv = make_kernel(true);
    bluestein_ = std::move(b);
  }

  void transform(Complex* data, Index lanes, bool inv, std::vector<Complex>& scratch) const {
    if (n_ == 1) return;
    if (bluestein_) {
      transform_bluestein(data, lanes, inv);
      return;
    }
    const std::size_t total = static_cast<std::size_t>(n_ * lanes);
    if (scratch.size() < total) scratch.resize(total);
    Complex* src = data;
    Complex* dst = scratch.data();
    const T sigma = inv ? T(1) : T(-1);
    for (const Stage& s : stages_) {
      run_stage(s, src, dst, lanes, inv, sigma);
      std::swap(src, dst);
    }
    if (src != data) {
      std::copy(src, src + total, data);
    }
  }

  void run_stage(const Stage& s, const Complex* src, Complex* dst, Index lanes, bool inv, T sigma) const {
    const Index span = s.span;
    const int p = s.radix;
    const Index r_out = s.out_run;
    const Index r_in = r_out * p;
    const Index len = r_out * lanes;
    Complex tw[64];
    for (Index j = 0; j < span; ++j) {
      const Complex* in = src + j * r_in * lanes;
      Complex* out = dst + j * r_out * lanes;
      const Index out_step = span * r_out * lanes;
      const bool unit = j == 0;
      if (!unit) {
        for (int q = 1; q < p; ++q) {
          const Complex w = s.twiddles[static_cast<std::size_t>(j * (p - 1) + q - 1)];
          tw[q] = inv ? std::conj(w) : w;
        }
      }
      switch (p) {
        case 2: butterfly2(in, out, len, out_step, unit, tw); break;
        case 3: butterfly3(in, out, len, out_step, unit, tw, sigma); break;
        case 4: butterfly4(in, out, len, out_step, unit, tw, sigma); break;
        case 5: butterfly5(in, out, len, out_step, unit, tw, sigma); break;
        default: butterfly_generic(s, in, out, len, out_step, unit, tw, inv); break;
      }
    }
  }

  static void butterfly2(const Complex* in, Complex* out, Index len, Index os, bool unit, const Complex* tw) {
    const Complex* a0 = in;
    const Complex* a1 = in + len;
    Complex* y0 = out;
    Complex* y1 = out + os;
    if (unit) {
      for (Index i = 0; i < len; ++i) {
        const Complex u = a0[i], v = a1[i];
        y0[i] = u + v;
        y1[i] = u - v;
      }
    } else {
      const Complex w1 = tw[1];
      for (Index i = 0; i < len; ++i) {
        const Complex u = a0[i], v = detail::cmul(a1[i], w1);
        y0[i] = u + v;
        y1[i] = u - v;
      }
    }
  }

  static void butterfly3(const Complex* in, Complex* out, Index len, Index os, bool unit, const Complex* tw, T sigma) {
    const T c = T(-0.5);
    const T s = sigma * static_cast<T>(0.86602540378443864676372317075294L);
    for (Index i = 0; i < len; ++i) {
      Complex a0 = in[i], a1 = in[i + len], a2 = in[i + 2 * len];
      if (!unit) {
        a1 = detail::cmul(a1, tw[1]);
        a2 = detail::cmul(a2, tw[2]);
      }
      const Complex t1 = a1 + a2;
      const Complex t2 = a0 + c * t1;
      const Complex t3 = detail::rot(a1 - a2, s);
      out[i] = a0 + t1;
      out[i + os] = t2 + t3;
      out[i + 2 * os] = t2 - t3;
    }
  }

  static void butterfly4(const Complex* in, Complex* out, Index len, Index os, bool unit, const Complex* tw, T sigma) {
    for (Index i = 0; i < len; ++i) {
      Complex a0 = in[i], a1 = in[i + len], a2 = in[i + 2 * len], a3 = in[i + 3 * len];
      if (!unit) {
        a1 = detail::cmul(a1, tw[1]);
        a2 = detail::cmul(a2, tw[2]);
        a3 = detail::cmul(a3, tw[3]);
      }
      const Complex t0 = a0 + a2;
      const Complex t1 = a0 - a2;
      const Complex t2 = a1 + a3;
      const Complex t3 = detail::rot(a1 - a3, sigma);
      out[i] = t0 + t2;
      out[i + os] = t1 + t3;
      out[i + 2 * os] = t0 - t2;
      out[i + 3 * os] = t1 - t3;
    }
  }

  static void butterfly5(const Complex* in, Complex* out, Index len, Index os, bool unit, const Complex* tw, T sigma) {
    const T c1 = static_cast<T>(0.30901699437494742410229341718281906L);
    const T c2 = static_cast<T>(-0.80901699437494742410229341718281906L);
    const T s1 = static_cast<T>(0.95105651629515357211643933337938214L);
    const T s2 = static_cast<T>(0.58778525229247312916870595463907277L);
    for (Index i = 0; i < len; ++i) {
      Complex a0 = in[i], a1 = in[i + len], a2 = in[i + 2 * len], a3 = in[i + 3 * len], a4 = in[i + 4 * len];
      if (!unit) {
        a1 = detail::cmul(a1, tw[1]);
        a2 = detail::cmul(a2, tw[2]);
        a3 = detail::cmul(a3, tw[3]);
        a4 = detail::cmul(a4, tw[4]);
      }
      const Complex b1 = a1 + a4, b2 = a2 + a3;
      const Complex d1 = a1 - a4, d2 = a2 - a3;
      const Complex t1 = a0 + c1 * b1 + c2 * b2;
      const Complex t2 = a0 + c2 * b1 + c1 * b2;
      const Complex u1 = detail::rot(s1 * d1 + s2 * d2, sigma);
      const Complex u2 = detail::rot(s2 * d1 - s1 * d2, sigma);
      out[i] = a0 + b1 + b2;
      out[i + os] = t1 + u1;
      out[i + 4 * os] = t1 - u1;
      out[i + 2 * os] = t2 + u2;
      out[i + 3 * os] = t2 - u2;
    }
  }

  static void butterfly_generic(const Stage& s, const Complex* in, Complex* out, Index len, Index os, bool unit,
                                const Complex* tw, bool inv) {
    const int p = s.radix;
    Complex a[64];
    Complex roots[64];
    for (int m = 0; m < p; ++m) {
      roots[m] = inv ? std::conj(s.roots[static_cast<std::size_t>(m)]) : s.roots[static_cast<std::size_t>(m)];
    }
    for (Index i = 0; i < len; ++i) {
      a[0] = in[i];
      for (int q = 1; q < p; ++q) {
        a[q] = unit ? in[i + q * len] : detail::cmul(in[i + q * len], tw[q]);
      }
      for (int k = 0; k < p; ++k) {
        Complex acc = a[0];
        int idx = 0;
        for (int q = 1; q < p; ++q) {
          idx += k;
          if (idx >= p) idx -= p;
          acc += detail::cmul(a[q], roots[idx]);
        }
        out[i + k * os] = acc;
      }
    }
  }

  void transform_bluestein(Complex* data, Index lanes, bool inv) const {
    const Bluestein& b = *bluestein_;
    const auto& kernel = inv ? b.kernel_inv : b.kernel_fwd;
    std::vector<Complex> work(static_cast<std::size_t>(b.m));
    std::vector<Complex> scratch;
    const T scale = T(1) / static_cast<T>(b.m);
    for (Index lane = 0; lane < lanes; ++lane) {
      std::fill(work.begin(), work.end(), Complex(0));
      for (Index k = 0; k < n_; ++k) {
        const Complex c = inv ? std::conj(b.chirp[static_cast<std::size_t>(k)]) : b.chirp[static_cast<std::size_t>(k)];
        work[static_cast<std::size_t>(k)] = detail::cmul(data[k * lanes + lane], c);
      }
      b.inner->forward(work.data(), 1, scratch);
      for (Index k = 0; k < b.m; ++k) {
        work[static_cast<std::size_t>(k)] = detail::cmul(work[static_cast<std::size_t>(k)], kernel[static_cast<std::size_t>(k)]);
      }
      b.inner->inverse(work.data(), 1, scratch);
      for (Index k = 0; k < n_; ++k) {
        const Complex c = inv ? std::conj(b.chirp[static_cast<std::size_t>(k)]) : b.chirp[static_cast<std::size_t>(k)];
        data[k * lanes + lane] = detail::cmul(work[static_cast<std::size_t>(k)], c) * scale;
      }
    }
  }

  Index n_;
  std::vector<Stage> stages_;
  std::unique_ptr<Bluestein> bluestein_;
};

/// In-place 2-D transform of a row-major complex array (unnormalised).
template <typename T>
void fft2_inplace(Spectrum<T>& s, bool inverse) {
  const Index rows = s.rows();
  const Index cols = s.cols();
  std::vector<std::complex<T>> scratch;
  const FftPlan<T> row_plan(cols);
  for (Index y = 0; y < rows; ++y) {
    if (inverse) {
      row_plan.inverse(s.data() + y * cols, 1, scratch);
    } else {
      row_plan.forward(s.data() + y * cols, 1, scratch);
    }
  }
  const FftPlan<T> col_plan(rows);
  if (inverse) {
    col_plan.inverse(s.data(), cols, scratch);
  } else {
    col_plan.forward(s.data(), cols, scratch);
  }
}

/// Discrete Fourier transform, unnormalised (S_00 is the plain sum).
template <typename T>
Spectrum<T> fft2(const Plane<T>& x) {
  if (x.size() == 0) throw InvalidArgument("fft2: empty raster");
  Spectrum<T> s = x.template cast<std::complex<T>>();
  fft2_inplace(s, false);
  return s;
}

/// Exception for an inverse transform whose imaginary part is not noise.
class SpectrumLayoutError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inverse of fft2 (scaled by 1 / (rows * cols)). The imaginary residue must
/// stay below `max_imag_ratio` of the largest real magnitude.
template <typename T>
Plane<T> ifft2(const Spectrum<T>& spectrum, T max_imag_ratio = T(1e-6)) {
  if (spectrum.size() == 0) throw InvalidArgument("ifft2: empty spectrum");
  Spectrum<T> s = spectrum;
  fft2_inplace(s, true);
  const T scale = T(1) / static_cast<T>(s.size());
  Plane<T> re = s.real() * scale;
  const T imag = s.imag().abs().maxCoeff() * scale;
  const T ref = std::max(re.abs().maxCoeff(), std::numeric_limits<T>::min());
  if (imag > max_imag_ratio * ref) {
    throw SpectrumLayoutError("ifft2: imaginary residue " + std::to_string(static_cast<double>(imag / ref)) +
                              " of the real magnitude; input is not conjugate-symmetric");
  }
  return re;
}

/// 2-D real-input transform producing the non-redundant half spectrum
/// (rows x (cols/2 + 1)). Even widths use the packed half-length trick.
template <typename T>
class RealFft2 {
 public:
  using Complex = std::complex<T>;

  RealFft2(Index rows, Index cols)
      : rows_(rows), cols_(cols), half_(cols / 2 + 1), col_plan_(rows),
        row_plan_(cols % 2 == 0 ? cols / 2 : cols) {
    if (rows < 1 || cols < 1) throw InvalidArgument("RealFft2: dimensions must be >= 1");
    if (cols % 2 == 0) {
      const Index m = cols / 2;
      post_.resize(static_cast<std::size_t>(m + 1));
      for (Index k = 0; k <= m; ++k) {
        post_[static_cast<std::size_t>(k)] = detail::polar_unit<T>(-static_cast<long double>(k) / cols);
      }
    }
  }

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  Index half_cols() const { return half_; }

  /// Transforms `x` (x_rows x x_cols, top-left aligned, zero elsewhere).
  /// All-zero input rows are skipped.
  void forward(const Plane<T>& x, Spectrum<T>& out) const {
    if (x.rows() > rows_ || x.cols() > cols_) throw InvalidArgument("RealFft2::forward: input larger than plan");
    out.setZero(rows_, half_);
    std::vector<Complex> row(static_cast<std::size_t>(row_plan_.size()));
    std::vector<Complex> scratch;
    const Index xc = x.cols();
    for (Index y = 0; y < x.rows(); ++y) {
      const T* src = x.data() + y * xc;
      bool zero = true;
      for (Index i = 0; i < xc && zero; ++i) zero = src[i] == T(0);
      if (zero) continue;
      Complex* dst = out.data() + y * half_;
      if (cols_ % 2 == 0) {
        const Index m = cols_ / 2;
        std::fill(row.begin(), row.end(), Complex(0));
        for (Index i = 0; i < xc; ++i) {
          auto& z = row[static_cast<std::size_t>(i / 2)];
          if (i % 2 == 0) z.real(src[i]); else z.imag(src[i]);
        }
        row_plan_.forward(row.data(), 1, scratch);
        for (Index k = 0; k <= m; ++k) {
          const Complex zk = row[static_cast<std::size_t>(k == m ? 0 : k)];
          const Complex zc = std::conj(row[static_cast<std::size_t>(k == 0 ? 0 : m - k)]);
          const Complex e = T(0.5) * (zk + zc);
          const Complex o = T(0.5) * (zk - zc);
          // X_k = E_k - i * w^k * O'_k with O'_k = (Z_k - conj Z_{m-k}) / 2
          dst[k] = e + detail::cmul(detail::rot(o, T(-1)), post_[static_cast<std::size_t>(k)]);
        }
      } else {
        for (Index i = 0; i < cols_; ++i) row[static_cast<std::size_t>(i)] = Complex(i < xc ? src[i] : T(0), T(0));
        row_plan_.forward(row.data(), 1, scratch);
        std::copy(row.begin(), row.begin() + half_, dst);
      }
    }
    col_plan_.forward(out.data(), half_, scratch);
  }

  /// Inverse transform; `spec` is consumed. Writes only the top-left
  /// y_rows x y_cols corner, normalised so inverse(forward(x)) = x.
  void inverse(Spectrum<T>& spec, Index y_rows, Index y_cols, Plane<T>& y) const {
    if (spec.rows() != rows_ || spec.cols() != half_) throw InvalidArgument("RealFft2::inverse: spectrum shape");
    if (y_rows > rows_ || y_cols > cols_) throw InvalidArgument("RealFft2::inverse: output larger than plan");
    std::vector<Complex> scratch;
    col_plan_.inverse(spec.data(), half_, scratch);
    y.resize(y_rows, y_cols);
    std::vector<Complex> row(static_cast<std::size_t>(row_plan_.size()));
    for (Index r = 0; r < y_rows; ++r) {
      const Complex* src = spec.data() + r * half_;
      T* dst = y.data() + r * y_cols;
      if (cols_ % 2 == 0) {
        const Index m = cols_ / 2;
        const T scale = T(1) / static_cast<T>(rows_ * m);
        for (Index k = 0; k < m; ++k) {
          const Complex xk = src[k];
          const Complex xc = std::conj(src[m - k]);
          const Complex e = T(0.5) * (xk + xc);
          const Complex o = detail::cmul(T(0.5) * (xk - xc), std::conj(post_[static_cast<std::size_t>(k)]));
          row[static_cast<std::size_t>(k)] = e + detail::rot(o, T(1));
        }
        row_plan_.inverse(row.data(), 1, scratch);
        for (Index i = 0; i < y_cols; ++i) {
          const Complex z = row[static_cast<std::size_t>(i / 2)];
          dst[i] = (i % 2 == 0 ? z.real() : z.imag()) * scale;
        }
      } else {
        const T scale = T(1) / static_cast<T>(rows_ * cols_);
        for (Index k = 0; k < half_; ++k) row[static_cast<std::size_t>(k)] = src[k];
        for (Index k = half_; k < cols_; ++k) row[static_cast<std::size_t>(k)] = std::conj(src[cols_ - k]);
        row_plan_.inverse(row.data(), 1, scratch);
        for (Index i = 0; i < y_cols; ++i) dst[i] = row[static_cast<std::size_t>(i)].real() * scale;
      }
    }
  }

 private:
  Index rows_;
  Index cols_;
  Index half_;
  FftPlan<T> col_plan_;
  FftPlan<T> row_plan_;
  std::vector<Complex> post_;
};

}  // namespace dimlab
