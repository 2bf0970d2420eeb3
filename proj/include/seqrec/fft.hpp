#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include "seqrec/common.hpp"
#include "seqrec/tensor.hpp"

namespace seqrec {

// FFT work always runs in double regardless of the configured tensor real
// type; round-trip and gradient tolerances need the headroom.
using cplx = std::complex<double>;

namespace fftdetail {

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Iterative radix-2 Cooley-Tukey, in place. n must be a power of two.
inline void fft_pow2(std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  if (n < 2) return;
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * 3.14159265358979323846264338327950288 /
                       static_cast<double>(len);
    const cplx wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      cplx w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const cplx u = a[i + j];
        const cplx v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    for (auto& x : a) x /= static_cast<double>(n);
  }
}

// Bluestein chirp-z transform for arbitrary n, via a power-of-two
// convolution. Chirp phases use k^2 mod 2n to keep the angles small.
inline void fft_bluestein(std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  const std::size_t m = next_pow2(2 * n - 1);
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<cplx> chirp(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t sq = (k * k) % (2 * n);
    const double ang = sign * 3.14159265358979323846264338327950288 *
                       static_cast<double>(sq) / static_cast<double>(n);
    chirp[k] = cplx(std::cos(ang), std::sin(ang));
  }
  std::vector<cplx> fa(m, cplx(0, 0)), fb(m, cplx(0, 0));
  for (std::size_t k = 0; k < n; ++k) fa[k] = a[k] * chirp[k];
  fb[0] = std::conj(chirp[0]);
  for (std::size_t k = 1; k < n; ++k)
    fb[k] = fb[m - k] = std::conj(chirp[k]);
  fft_pow2(fa, false);
  fft_pow2(fb, false);
  for (std::size_t i = 0; i < m; ++i) fa[i] *= fb[i];
  fft_pow2(fa, true);
  for (std::size_t k = 0; k < n; ++k) a[k] = fa[k] * chirp[k];
  if (inverse) {
    for (auto& x : a) x /= static_cast<double>(n);
  }
}

inline void fft_inplace(std::vector<cplx>& a, bool inverse) {
  if (a.size() < 2) return;
  if (is_pow2(a.size()))
    fft_pow2(a, inverse);
  else
    fft_bluestein(a, inverse);
}

}  // namespace fftdetail

inline std::size_t rfft_bins(std::size_t signal_len) {
  return signal_len / 2 + 1;
}

// Column-major-friendly container for the per-column real-input spectrum:
// bins() x cols() complex values for a signal of length signal_len.
struct Spectrum {
  std::size_t signal_len = 0;
  std::size_t cols = 0;
  std::vector<cplx> data;  // row-major, bins x cols

  std::size_t bins() const { return rfft_bins(signal_len); }
  cplx& at(std::size_t bin, std::size_t col) {
    return data[bin * cols + col];
  }
  const cplx& at(std::size_t bin, std::size_t col) const {
    return data[bin * cols + col];
  }
};

// Real-input DFT along the sequence (row) axis of an L x d tensor:
// bin k of column j is sum_t x[t,j] * exp(-2*pi*i*k*t/L).
inline Spectrum rfft_seq(const Tensor& x) {
  if (x.ndim() != 2)
    throw shape_error("rfft_seq: expected L x d tensor, got " +
                      detail::shape_str(x.shape()));
  const std::size_t L = x.rows(), d = x.cols();
  Spectrum spec;
  spec.signal_len = L;
  spec.cols = d;
  spec.data.assign(spec.bins() * d, cplx(0, 0));
  std::vector<cplx> buf(L);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t t = 0; t < L; ++t)
      buf[t] = cplx(static_cast<double>(x(t, j)), 0.0);
    fftdetail::fft_inplace(buf, false);
    for (std::size_t k = 0; k < spec.bins(); ++k) spec.at(k, j) = buf[k];
  }
  return spec;
}

// Exact inverse of rfft_seq up to round-off. The full spectrum is rebuilt
// from Hermitian symmetry before the inverse transform.
inline Tensor irfft_seq(const Spectrum& spec, std::size_t L) {
  if (spec.signal_len != L || spec.data.size() != spec.bins() * spec.cols)
    throw shape_error("irfft_seq: spectrum with " +
                      std::to_string(spec.bins()) + " bins for signal length " +
                      std::to_string(spec.signal_len) +
                      " does not match requested length " + std::to_string(L));
  const std::size_t d = spec.cols;
  Tensor out({L, d});
  std::vector<cplx> buf(L);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t k = 0; k < spec.bins(); ++k) buf[k] = spec.at(k, j);
    for (std::size_t k = spec.bins(); k < L; ++k)
      buf[k] = std::conj(spec.at(L - k, j));
    fftdetail::fft_inplace(buf, true);
    for (std::size_t t = 0; t < L; ++t)
      out(t, j) = static_cast<real>(buf[t].real());
  }
  return out;
}

}  // namespace seqrec
