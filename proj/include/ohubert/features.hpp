#pragma once

// Log-mel filterbank features for pseudo-label generation.

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "ohubert/corpus.hpp"
#include "ohubert/fft.hpp"

namespace ohubert {

struct FeatureFrames {
  Eigen::MatrixXd frames;  // T x n_mels
  double frame_rate = 0.0;
  std::string source_id;
};

namespace mel_detail {

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

// Triangular mel filterbank over FFT bins 0..nfft/2.
inline Eigen::MatrixXd mel_filterbank(int n_mels, size_t nfft, int sample_rate,
                                      double f_lo = 20.0) {
  const double f_hi = sample_rate / 2.0;
  const int n_bins = static_cast<int>(nfft / 2 + 1);
  const double mel_lo = hz_to_mel(f_lo), mel_hi = hz_to_mel(f_hi);
  std::vector<double> edges(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));
  }
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(n_mels, n_bins);
  for (int m = 0; m < n_mels; ++m) {
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(nfft);
      if (f > edges[m] && f < edges[m + 1]) {
        fb(m, k) = (f - edges[m]) / (edges[m + 1] - edges[m]);
      } else if (f >= edges[m + 1] && f < edges[m + 2]) {
        fb(m, k) = (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1]);
      }
    }
  }
  return fb;
}

}  // namespace mel_detail

// Per frame: Hann window, magnitude spectrum, mel filterbank, log(x + 1e-10).
inline FeatureFrames extract_log_mel(const Waveform& w, int n_mels, size_t window,
                                     size_t hop) {
  if (window > w.samples.size()) {
    throw std::invalid_argument("extract_log_mel: window longer than signal");
  }
  if (hop == 0) throw std::invalid_argument("extract_log_mel: hop must be > 0");
  const size_t n_frames = (w.samples.size() - window) / hop + 1;
  const size_t nfft = next_pow2(window);
  const Eigen::MatrixXd fb = mel_detail::mel_filterbank(n_mels, nfft, w.sample_rate);

  std::vector<double> hann(window);
  for (size_t i = 0; i < window; ++i) {
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                   static_cast<double>(window));
  }

  FeatureFrames out;
  out.source_id = w.source_id;
  out.frame_rate = static_cast<double>(w.sample_rate) / static_cast<double>(hop);
  out.frames.resize(static_cast<Eigen::Index>(n_frames), n_mels);
  std::vector<double> frame(window);
  for (size_t f = 0; f < n_frames; ++f) {
    for (size_t i = 0; i < window; ++i) frame[i] = w.samples[f * hop + i] * hann[i];
    const std::vector<double> mag = magnitude_spectrum(frame, nfft);
    const Eigen::Map<const Eigen::VectorXd> mag_v(mag.data(),
                                                  static_cast<Eigen::Index>(mag.size()));
    Eigen::VectorXd mel = fb * mag_v;
    for (int m = 0; m < n_mels; ++m) {
      out.frames(static_cast<Eigen::Index>(f), m) = std::log(mel(m) + 1e-10);
    }
  }
  if (!out.frames.allFinite()) {
    throw std::runtime_error("extract_log_mel: non-finite feature value");
  }
  return out;
}

}  // namespace ohubert
