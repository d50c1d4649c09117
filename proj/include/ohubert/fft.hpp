#pragma once

// Iterative radix-2 FFT plus an FFT-accelerated linear convolution.

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace ohubert {

inline size_t next_pow2(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// In-place FFT; size must be a power of two. inverse=true applies 1/N.
inline void fft(std::vector<std::complex<double>>& a, bool inverse = false) {
  const size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) {
    throw std::invalid_argument("fft: size must be a power of two");
  }
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) *
                       (inverse ? 1.0 : -1.0);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    for (auto& x : a) x /= static_cast<double>(n);
  }
}

// Magnitude spectrum bins 0..nfft/2 of a real frame zero-padded to nfft.
inline std::vector<double> magnitude_spectrum(const std::vector<double>& frame,
                                              size_t nfft) {
  std::vector<std::complex<double>> a(nfft);
  for (size_t i = 0; i < frame.size() && i < nfft; ++i) a[i] = frame[i];
  fft(a);
  std::vector<double> mag(nfft / 2 + 1);
  for (size_t i = 0; i < mag.size(); ++i) mag[i] = std::abs(a[i]);
  return mag;
}

// Full linear convolution, length |x| + |h| - 1.
inline std::vector<double> fft_convolve(const std::vector<double>& x,
                                        const std::vector<double>& h) {
  if (x.empty() || h.empty()) return {};
  const size_t out_len = x.size() + h.size() - 1;
  const size_t n = next_pow2(out_len);
  std::vector<std::complex<double>> fx(n), fh(n);
  for (size_t i = 0; i < x.size(); ++i) fx[i] = x[i];
  for (size_t i = 0; i < h.size(); ++i) fh[i] = h[i];
  fft(fx);
  fft(fh);
  for (size_t i = 0; i < n; ++i) fx[i] *= fh[i];
  fft(fx, true);
  std::vector<double> out(out_len);
  for (size_t i = 0; i < out_len; ++i) out[i] = fx[i].real();
  return out;
}

}  // namespace ohubert
