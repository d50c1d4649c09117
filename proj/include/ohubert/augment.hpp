#pragma once

// Two-stage data augmentation: in-batch utterance mixing, then synthetic
// reverberation for a random half of the segments.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "ohubert/corpus.hpp"
#include "ohubert/fft.hpp"
#include "ohubert/rng.hpp"

namespace ohubert {

struct ImpulseResponse {
  std::vector<double> taps;  // taps[0] = 1 for synthesized responses
  int sample_rate = 16000;
  double rt60_s = 0.0;
};

struct AugmentPolicy {
  double mix_snr_db_lo = 0.0;
  double mix_snr_db_hi = 10.0;
  double mix_region_fraction_lo = 0.2;
  double mix_region_fraction_hi = 0.6;
  double rt60_lo_s = 0.2;
  double rt60_hi_s = 0.6;
  uint64_t seed = 0;

  void validate() const {
    if (mix_snr_db_lo > mix_snr_db_hi || mix_region_fraction_lo > mix_region_fraction_hi ||
        rt60_lo_s > rt60_hi_s) {
      throw std::invalid_argument("AugmentPolicy: range lo > hi");
    }
  }
};

// Adds a gain-scaled copy of `secondary` into `primary` over [start, start+len),
// with the gain chosen so the region-level SNR equals snr_db. Samples outside
// the region are untouched. A short secondary is extended cyclically.
inline Waveform mix_utterances(const Waveform& primary, const Waveform& secondary,
                               double snr_db, size_t start, size_t len) {
  if (start + len > primary.samples.size()) {
    throw std::invalid_argument("mix_utterances: region outside primary");
  }
  Waveform out = primary;
  if (len == 0) return out;
  if (secondary.samples.empty()) {
    throw std::invalid_argument("mix_utterances: empty secondary");
  }

  double e_p = 0.0, e_s = 0.0;
  for (size_t i = 0; i < len; ++i) {
    const double p = primary.samples[start + i];
    const double s = secondary.samples[i % secondary.samples.size()];
    e_p += p * p;
    e_s += s * s;
  }
  e_p /= static_cast<double>(len);
  e_s /= static_cast<double>(len);
  if (e_s <= 0.0) {
    throw std::invalid_argument("mix_utterances: zero-energy secondary in region");
  }
  const double gain = std::sqrt(e_p / e_s * std::pow(10.0, -snr_db / 10.0));
  for (size_t i = 0; i < len; ++i) {
    out.samples[start + i] += gain * secondary.samples[i % secondary.samples.size()];
  }
  return out;
}

// Exponentially decaying Gaussian noise with a unit direct path. The envelope
// exp(-n / (sr * tau)) with tau = rt60 / (3 ln 10) hits -60 dB at n = rt60*sr.
inline ImpulseResponse synth_rir(double rt60_s, int sample_rate, uint64_t seed) {
  if (rt60_s <= 0.0) throw std::invalid_argument("synth_rir: rt60 must be > 0");
  ImpulseResponse h;
  h.sample_rate = sample_rate;
  h.rt60_s = rt60_s;
  const size_t len =
      static_cast<size_t>(std::ceil(1.5 * rt60_s * static_cast<double>(sample_rate)));
  const double tau = rt60_s / (3.0 * std::log(10.0));
  Rng rng(seed);
  h.taps.resize(len);
  for (size_t i = 0; i < len; ++i) {
    h.taps[i] = rng.normal() * std::exp(-static_cast<double>(i) / (sample_rate * tau));
  }
  h.taps[0] = 1.0;
  return h;
}

// Full convolution truncated to the input length, peak-normalized to the
// original peak of w.
inline Waveform reverberate(const Waveform& w, const ImpulseResponse& h) {
  if (w.sample_rate != h.sample_rate) {
    throw std::invalid_argument("reverberate: sample-rate mismatch");
  }
  if (h.taps.empty()) throw std::invalid_argument("reverberate: empty impulse response");
  Waveform out = w;
  if (w.samples.empty()) return out;
  std::vector<double> conv = fft_convolve(w.samples, h.taps);
  conv.resize(w.samples.size());

  double in_peak = 0.0, conv_peak = 0.0;
  for (double v : w.samples) in_peak = std::max(in_peak, std::abs(v));
  for (double v : conv) conv_peak = std::max(conv_peak, std::abs(v));
  if (conv_peak > 0.0 && in_peak > 0.0) {
    const double scale = in_peak / conv_peak;
    for (double& v : conv) v *= scale;
  }
  out.samples = std::move(conv);
  return out;
}

// A seeded random half of the segments get utterance mixing only; the other
// half get mixing followed by reverberation. Donors come from the clean input
// batch and always have a different source. Labels and roles are untouched.
inline SegmentBatch two_stage_augment(const SegmentBatch& batch,
                                      const AugmentPolicy& policy,
                                      uint64_t salt = 0) {
  policy.validate();
  const size_t n_seg = batch.segments.size();
  if (n_seg < 2) throw std::invalid_argument("two_stage_augment: need >= 2 segments");
  if (batch.n_sources < 2) {
    throw std::invalid_argument("two_stage_augment: single-source batch has no donor");
  }

  Rng rng(mix_seed(policy.seed, salt));
  std::vector<size_t> order(n_seg);
  for (size_t i = 0; i < n_seg; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<bool> reverb_stage(n_seg, false);
  for (size_t i = n_seg / 2; i < n_seg; ++i) reverb_stage[order[i]] = true;

  SegmentBatch out = batch;
  for (size_t i = 0; i < n_seg; ++i) {
    Rng seg_rng = rng.derive(i + 1);
    // donor: uniform over segments of a different source
    std::vector<size_t> donors;
    for (size_t j = 0; j < n_seg; ++j) {
      if (batch.segments[j].source_index != batch.segments[i].source_index) {
        donors.push_back(j);
      }
    }
    const size_t donor = donors[seg_rng.uniform_int(donors.size())];
    const double snr = seg_rng.uniform(policy.mix_snr_db_lo, policy.mix_snr_db_hi);
    const double frac =
        seg_rng.uniform(policy.mix_region_fraction_lo, policy.mix_region_fraction_hi);
    const size_t seg_len = batch.segments[i].wav.samples.size();
    const size_t region_len = static_cast<size_t>(std::lround(frac * seg_len));
    const size_t region_start =
        region_len < seg_len
            ? static_cast<size_t>(seg_rng.uniform_int(seg_len - region_len + 1))
            : 0;
    Waveform mixed = mix_utterances(batch.segments[i].wav,
                                    batch.segments[donor].wav, snr, region_start,
                                    region_len);
    if (reverb_stage[i]) {
      const double rt60 = seg_rng.uniform(policy.rt60_lo_s, policy.rt60_hi_s);
      const ImpulseResponse h =
          synth_rir(rt60, mixed.sample_rate, seg_rng.next_u64());
      mixed = reverberate(mixed, h);
    }
    out.segments[i].wav = std::move(mixed);
  }
  return out;
}

}  // namespace ohubert
