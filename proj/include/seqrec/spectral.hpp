#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "seqrec/common.hpp"
#include "seqrec/fft.hpp"
#include "seqrec/tensor.hpp"

namespace seqrec {

// Frequency-rescaling settings for one encoder layer. cutoff counts the
// lowest-frequency rFFT bins (DC included) assigned to the low-pass band;
// cutoff = 1 keeps only DC. beta starts at beta_init and is learned; with
// beta_per_dim it becomes one weight per embedding dimension.
struct SpectralConfig {
  int cutoff = 1;
  real beta_init = real(0.7);
  bool beta_per_dim = false;

  void validate(std::size_t max_len) const {
    const long hi = static_cast<long>(rfft_bins(max_len));
    if (cutoff < 1 || cutoff > hi)
      throw config_error("spectral.cutoff: " + std::to_string(cutoff) +
                         " outside [1, " + std::to_string(hi) +
                         "] for sequence length " + std::to_string(max_len));
  }
};

namespace spectraldetail {

// Zeroes every rFFT bin at or above cutoff and transforms back. Plain
// (non-recording) helper shared by the forward and backward passes.
inline Tensor lowpass(const Tensor& x, std::size_t cutoff) {
  const std::size_t L = x.rows();
  Spectrum spec = rfft_seq(x);
  for (std::size_t k = cutoff; k < spec.bins(); ++k)
    for (std::size_t j = 0; j < spec.cols; ++j) spec.at(k, j) = cplx(0, 0);
  return irfft_seq(spec, L);
}

inline real beta_for_col(const Tensor& beta, std::size_t j) {
  return beta.numel() == 1 ? beta.at(0) : beta.at(j);
}

}  // namespace spectraldetail

// x_low + beta * x_high, where x_low keeps rFFT bins [0, cutoff) and x_high
// the rest. Band-limiting is an orthogonal projection, so the backward pass
// for x reuses the same low-pass transform; d(beta) is the overlap of the
// upstream gradient with the saved high band.
inline Tensor frequency_rescale(const Tensor& x, const Tensor& beta,
                                int cutoff) {
  if (x.ndim() != 2)
    throw shape_error("frequency_rescale: expected L x d tensor");
  const std::size_t L = x.rows(), d = x.cols();
  const std::size_t bins = rfft_bins(L);
  if (cutoff < 1 || static_cast<std::size_t>(cutoff) > bins)
    throw config_error("frequency_rescale: cutoff " + std::to_string(cutoff) +
                       " outside [1, " + std::to_string(bins) +
                       "] for sequence length " + std::to_string(L));
  if (beta.numel() != 1 && beta.numel() != d)
    throw shape_error("frequency_rescale: beta must be scalar or length-d");

  const bool band_full = static_cast<std::size_t>(cutoff) == bins;
  Tensor low = band_full ? x.clone() : spectraldetail::lowpass(x, cutoff);
  Tensor out(x.shape());
  auto high = std::make_shared<std::vector<real>>(x.numel());
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t j = 0; j < d; ++j) {
      const real h = band_full ? real(0) : x(t, j) - low(t, j);
      (*high)[t * d + j] = h;
      out(t, j) = low(t, j) + spectraldetail::beta_for_col(beta, j) * h;
    }
  detail::check_finite(out, "frequency_rescale");

  if (detail::should_record({&x, &beta})) {
    Tensor xc = x, bc = beta, oc = out;
    const std::size_t cut = static_cast<std::size_t>(cutoff);
    Tape::active().record(
        "frequency_rescale", {x, beta}, out,
        [xc, bc, oc, high, cut, band_full, L, d]() mutable {
          Tensor g(oc.shape(), oc.grad());
          if (bc.requires_grad()) {
            auto& gb = bc.grad();
            for (std::size_t t = 0; t < L; ++t)
              for (std::size_t j = 0; j < d; ++j)
                gb[bc.numel() == 1 ? 0 : j] +=
                    g(t, j) * (*high)[t * d + j];
          }
          if (xc.requires_grad()) {
            Tensor g_low =
                band_full ? g.clone() : spectraldetail::lowpass(g, cut);
            auto& gx = xc.grad();
            for (std::size_t t = 0; t < L; ++t)
              for (std::size_t j = 0; j < d; ++j) {
                const real b = spectraldetail::beta_for_col(bc, j);
                gx[t * d + j] +=
                    g_low(t, j) + b * (g(t, j) - g_low(t, j));
              }
          }
        });
  }
  return out;
}

inline Tensor frequency_rescale(const Tensor& x, const Tensor& beta,
                                const SpectralConfig& cfg) {
  return frequency_rescale(x, beta, cfg.cutoff);
}

// Prefix-limited low-pass weights: row q holds the coefficients of the
// length-(q+1) band limit evaluated at its newest position, so the matrix
// is lower-triangular and applying it never mixes future positions into
// past ones. Prefixes short enough that the cutoff covers their whole
// spectrum get an identity row.
inline const Tensor& causal_lowpass_matrix(std::size_t L, int cutoff) {
  thread_local std::map<std::pair<std::size_t, int>, Tensor> cache;
  auto it = cache.find({L, cutoff});
  if (it != cache.end()) return it->second;
  Tensor W({L, L}, real(0));
  for (std::size_t q = 0; q < L; ++q) {
    const std::size_t n = q + 1;
    if (static_cast<std::size_t>(cutoff) >= rfft_bins(n)) {
      W(q, q) = real(1);
      continue;
    }
    for (std::size_t b = 0; b <= q; ++b) {
      Tensor e({n, 1}, real(0));
      e.at(b) = real(1);
      Spectrum s = rfft_seq(e);
      for (std::size_t k = static_cast<std::size_t>(cutoff); k < s.bins();
           ++k)
        s.at(k, 0) = cplx(0, 0);
      W(q, b) = irfft_seq(s, n)(n - 1, 0);
    }
  }
  return cache.emplace(std::make_pair(L, cutoff), std::move(W))
      .first->second;
}

// Causal form of frequency_rescale used inside encoder layers: position q
// is rescaled within its visible prefix only, so perturbing a later
// position never reaches earlier outputs. The last row coincides with the
// full-sequence transform.
inline Tensor causal_frequency_rescale(const Tensor& x, const Tensor& beta,
                                       int cutoff) {
  if (x.ndim() != 2)
    throw shape_error("causal_frequency_rescale: expected L x d tensor");
  const std::size_t L = x.rows(), d = x.cols();
  const std::size_t bins = rfft_bins(L);
  if (cutoff < 1 || static_cast<std::size_t>(cutoff) > bins)
    throw config_error("causal_frequency_rescale: cutoff " +
                       std::to_string(cutoff) + " outside [1, " +
                       std::to_string(bins) + "] for sequence length " +
                       std::to_string(L));
  if (beta.numel() != 1 && beta.numel() != d)
    throw shape_error(
        "causal_frequency_rescale: beta must be scalar or length-d");

  const Tensor& W = causal_lowpass_matrix(L, cutoff);
  Tensor out(x.shape());
  auto high = std::make_shared<std::vector<real>>(x.numel());
  for (std::size_t q = 0; q < L; ++q)
    for (std::size_t j = 0; j < d; ++j) {
      real low = 0;
      for (std::size_t b = 0; b <= q; ++b) low += W(q, b) * x(b, j);
      const real h = x(q, j) - low;
      (*high)[q * d + j] = h;
      out(q, j) = low + spectraldetail::beta_for_col(beta, j) * h;
    }
  detail::check_finite(out, "causal_frequency_rescale");

  if (detail::should_record({&x, &beta})) {
    Tensor xc = x, bc = beta, oc = out, Wc = W;
    Tape::active().record(
        "causal_frequency_rescale", {x, beta}, out,
        [xc, bc, oc, high, Wc, L, d]() mutable {
          const auto& g = oc.grad();
          if (bc.requires_grad()) {
            auto& gb = bc.grad();
            for (std::size_t q = 0; q < L; ++q)
              for (std::size_t j = 0; j < d; ++j)
                gb[bc.numel() == 1 ? 0 : j] +=
                    g[q * d + j] * (*high)[q * d + j];
          }
          if (xc.requires_grad()) {
            auto& gx = xc.grad();
            // d/dx = W^T g + beta (g - W^T g), columnwise beta
            for (std::size_t j = 0; j < d; ++j) {
              const real b = spectraldetail::beta_for_col(bc, j);
              for (std::size_t t = 0; t < L; ++t) {
                real wtg = 0;
                for (std::size_t q = t; q < L; ++q)
                  wtg += Wc(q, t) * g[q * d + j];
                gx[t * d + j] += wtg + b * (g[t * d + j] - wtg);
              }
            }
          }
        });
  }
  return out;
}

inline Tensor causal_frequency_rescale(const Tensor& x, const Tensor& beta,
                                       const SpectralConfig& cfg) {
  return causal_frequency_rescale(x, beta, cfg.cutoff);
}

}  // namespace seqrec
