#pragma once

// Synthetic corpus generation, manifests, and key/query segment batches.
//
// A synthetic utterance is the sum of a speaker bed (harmonic series with a
// speaker-specific fundamental, two formant bumps, spectral tilt, and slow
// vibrato) and a content track (a cyclic sequence of five fixed tone/chirp
// phones, ordered by a permutation indexed by content_class). The bed makes
// speakers separable from long-term spectra; the phones give a content target
// that is independent of speaker identity.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ohubert/rng.hpp"
#include "ohubert/wav.hpp"

namespace ohubert {

struct Waveform {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = 16000;
  std::string source_id;
  int speaker_class = -1;  // >= 0 for synthetic sources only
  int content_class = -1;
};

struct ManifestEntry {
  std::string source_id;
  std::string path;  // relative to the manifest file unless absolute
  int speaker_class = -1;
  int content_class = -1;
  double duration_s = 0.0;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::string base_dir;  // directory of the manifest file

  std::string resolve_path(const ManifestEntry& e) const {
    std::filesystem::path p(e.path);
    if (p.is_absolute() || base_dir.empty()) return e.path;
    return (std::filesystem::path(base_dir) / p).string();
  }
};

enum class SegmentRole { kKey, kQuery };

struct Segment {
  Waveform wav;
  int source_index = -1;
  SegmentRole role = SegmentRole::kKey;
  size_t crop_offset = 0;  // sample offset of this segment in the source
};

// 2n segments, keys at even positions, the matching query right after.
struct SegmentBatch {
  std::vector<Segment> segments;
  int n_sources = 0;

  bool issame(size_t i, size_t j) const {
    return i != j && segments[i].source_index == segments[j].source_index;
  }
  size_t sibling(size_t i) const { return i ^ 1; }
};

// ---------------------------------------------------------------------------
// Manifest I/O (JSON lines, one entry per line)

inline void save_manifest(const Manifest& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_manifest: cannot open " + path);
  for (const auto& e : m.entries) {
    nlohmann::json j{{"source_id", e.source_id},
                     {"path", e.path},
                     {"speaker_class", e.speaker_class},
                     {"content_class", e.content_class},
                     {"duration_s", e.duration_s}};
    f << j.dump() << "\n";
  }
}

inline Manifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_manifest: cannot open " + path);
  Manifest m;
  m.base_dir = std::filesystem::path(path).parent_path().string();
  std::string line;
  size_t lineno = 0;
  std::vector<std::string> seen;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    ManifestEntry e;
    e.source_id = j.at("source_id").get<std::string>();
    e.path = j.at("path").get<std::string>();
    e.speaker_class = j.at("speaker_class").get<int>();
    e.content_class = j.at("content_class").get<int>();
    e.duration_s = j.at("duration_s").get<double>();
    if (std::find(seen.begin(), seen.end(), e.source_id) != seen.end()) {
      throw std::runtime_error("load_manifest: duplicate source_id '" +
                               e.source_id + "' at line " + std::to_string(lineno));
    }
    seen.push_back(e.source_id);
    m.entries.push_back(std::move(e));
  }
  return m;
}

inline Waveform load_wav(const std::string& path) {
  WavData d = read_wav(path);
  Waveform w;
  w.samples = std::move(d.samples);
  w.sample_rate = d.sample_rate;
  w.source_id = std::filesystem::path(path).stem().string();
  return w;
}

// ---------------------------------------------------------------------------
// Synthesis

struct SynthParams {
  int n_speakers = 8;
  int n_contents = 5;
  int utterances_per_speaker = 25;
  double duration_s = 2.5;
  int sample_rate = 16000;
  uint64_t seed = 0;
};

namespace synth_detail {

inline constexpr double kPhoneSeconds = 0.1;
inline constexpr int kNumPhones = 5;

// content_class -> permutation of the phone prototypes (Lehmer decode).
inline std::vector<int> phone_permutation(int content_class) {
  std::vector<int> pool{0, 1, 2, 3, 4};
  std::vector<int> perm;
  int code = content_class % 120;
  for (int radix = kNumPhones; radix >= 1; --radix) {
    const int fact = [&] {
      int f = 1;
      for (int i = 2; i < radix; ++i) f *= i;
      return f;
    }();
    const int idx = code / fact;
    code %= fact;
    perm.push_back(pool[idx]);
    pool.erase(pool.begin() + idx);
  }
  return perm;
}

// One 100 ms phone prototype with raised-cosine edges, unit RMS.
inline std::vector<double> phone_prototype(int which, int sample_rate) {
  const int n = static_cast<int>(std::lround(kPhoneSeconds * sample_rate));
  std::vector<double> p(n);
  const double dt = 1.0 / sample_rate;
  for (int i = 0; i < n; ++i) {
    const double t = i * dt;
    double v = 0.0;
    switch (which) {
      case 0: v = std::sin(2.0 * std::numbers::pi * 600.0 * t); break;
      case 1: v = std::sin(2.0 * std::numbers::pi * 1000.0 * t); break;
      case 2: {  // up-chirp 500 -> 1500 Hz
        const double f = 500.0 + 1000.0 * t / kPhoneSeconds * 0.5;
        v = std::sin(2.0 * std::numbers::pi * f * t);
        break;
      }
      case 3: {  // down-chirp 1800 -> 700 Hz
        const double f = 1800.0 - 1100.0 * t / kPhoneSeconds * 0.5;
        v = std::sin(2.0 * std::numbers::pi * f * t);
        break;
      }
      case 4:  // tremolo tone
        v = std::sin(2.0 * std::numbers::pi * 850.0 * t) *
            (1.0 + 0.8 * std::sin(2.0 * std::numbers::pi * 30.0 * t)) / 1.8;
        break;
      default: throw std::invalid_argument("phone_prototype: bad index");
    }
    // 10 ms fade at both edges
    const int fade = sample_rate / 100;
    double env = 1.0;
    if (i < fade) env = 0.5 - 0.5 * std::cos(std::numbers::pi * i / fade);
    if (i >= n - fade) env = 0.5 - 0.5 * std::cos(std::numbers::pi * (n - 1 - i) / fade);
    p[i] = v * env;
  }
  double rms = 0.0;
  for (double v : p) rms += v * v;
  rms = std::sqrt(rms / n);
  for (double& v : p) v /= rms;
  return p;
}

}  // namespace synth_detail

// Deterministic synthesis of one utterance.
inline Waveform synth_utterance(int speaker_class, int content_class,
                                double duration_s, int sample_rate,
                                uint64_t utt_seed, const std::string& source_id) {
  using namespace synth_detail;
  if (duration_s <= 0.0) throw std::invalid_argument("synth_utterance: zero duration");
  const int n = static_cast<int>(std::lround(duration_s * sample_rate));
  if (n <= 0) throw std::invalid_argument("synth_utterance: zero duration");
  Rng rng(utt_seed);

  // Speaker signature parameters, all deterministic functions of the class.
  const double f0 = 95.0 + 14.0 * speaker_class;
  const double formant1 = 400.0 + 60.0 * (speaker_class % 4);
  const double formant2 = 1350.0 + 170.0 * ((speaker_class / 4) % 5);
  const double tilt = 0.55 + 0.2 * (speaker_class % 3);
  const double vib_rate = 4.5 + 0.3 * (speaker_class % 5);
  const double vib_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);

  const int n_harm = std::max(1, static_cast<int>(5500.0 / (f0 * 1.03)));
  std::vector<double> harm_phase(n_harm), harm_amp(n_harm);
  for (int h = 0; h < n_harm; ++h) {
    harm_phase[h] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double f = f0 * (h + 1);
    const double g1 = 2.5 * std::exp(-0.5 * std::pow((f - formant1) / 120.0, 2));
    const double g2 = 2.0 * std::exp(-0.5 * std::pow((f - formant2) / 150.0, 2));
    harm_amp[h] = std::pow(h + 1.0, -tilt) * (1.0 + g1 + g2);
  }

  std::vector<double> bed(n);
  double theta = 0.0;
  const double dt = 1.0 / sample_rate;
  for (int i = 0; i < n; ++i) {
    const double t = i * dt;
    const double inst_f0 =
        f0 * (1.0 + 0.02 * std::sin(2.0 * std::numbers::pi * vib_rate * t + vib_phase));
    theta += 2.0 * std::numbers::pi * inst_f0 * dt;
    double v = 0.0;
    for (int h = 0; h < n_harm; ++h) {
      v += harm_amp[h] * std::sin((h + 1) * theta + harm_phase[h]);
    }
    bed[i] = v;
  }
  double bed_rms = 0.0;
  for (double v : bed) bed_rms += v * v;
  bed_rms = std::sqrt(bed_rms / n);
  for (double& v : bed) v *= 0.15 / bed_rms;

  // Content track: the permuted phone cycle, tiled over the utterance.
  const auto perm = phone_permutation(content_class);
  std::vector<std::vector<double>> protos;
  for (int p = 0; p < kNumPhones; ++p) protos.push_back(phone_prototype(p, sample_rate));
  const int phone_len = static_cast<int>(protos[0].size());
  std::vector<double> track(n);
  for (int start = 0, slot = 0; start < n; start += phone_len, ++slot) {
    const auto& proto = protos[perm[slot % kNumPhones]];
    for (int i = 0; i < phone_len && start + i < n; ++i) track[start + i] = proto[i];
  }
  for (double& v : track) v *= 0.18;

  Waveform w;
  w.sample_rate = sample_rate;
  w.source_id = source_id;
  w.speaker_class = speaker_class;
  w.content_class = content_class;
  w.samples.resize(n);
  double peak = 0.0;
  for (int i = 0; i < n; ++i) {
    w.samples[i] = bed[i] + track[i];
    peak = std::max(peak, std::abs(w.samples[i]));
  }
  if (peak > 0.0) {
    for (double& v : w.samples) v *= 0.9 / peak;
  }
  return w;
}

// Writes WAVs plus manifest.jsonl under out_dir and returns the manifest.
inline Manifest synth_corpus(const SynthParams& p, const std::string& out_dir) {
  if (p.n_speakers < 2) throw std::invalid_argument("synth_corpus: need >= 2 speakers");
  if (p.utterances_per_speaker < 1) {
    throw std::invalid_argument("synth_corpus: need >= 1 utterance per speaker");
  }
  if (p.duration_s <= 0.0) throw std::invalid_argument("synth_corpus: zero duration");
  if (p.n_contents < 1) throw std::invalid_argument("synth_corpus: need >= 1 content class");

  std::filesystem::create_directories(std::filesystem::path(out_dir) / "wavs");
  Manifest m;
  m.base_dir = out_dir;
  for (int spk = 0; spk < p.n_speakers; ++spk) {
    for (int utt = 0; utt < p.utterances_per_speaker; ++utt) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "spk%02d_utt%03d", spk, utt);
      const std::string source_id(buf);
      const int content = utt % p.n_contents;
      const uint64_t utt_seed = mix_seed(p.seed, hash_str(source_id));
      Waveform w = synth_utterance(spk, content, p.duration_s, p.sample_rate,
                                   utt_seed, source_id);
      const std::string rel = "wavs/" + source_id + ".wav";
      write_wav_pcm16((std::filesystem::path(out_dir) / rel).string(), w.samples,
                      w.sample_rate);
      m.entries.push_back({source_id, rel, spk, content, p.duration_s});
    }
  }
  save_manifest(m, (std::filesystem::path(out_dir) / "manifest.jsonl").string());
  return m;
}

// ---------------------------------------------------------------------------
// Key/query splitting and batch assembly

struct KeyQuery {
  Waveform key;
  Waveform query;
  size_t crop_offset = 0;
};

// Splits w into two t-sample segments. Longer inputs take a seeded random 2t
// crop first; shorter ones are right-padded by cyclic repetition so spectral
// statistics survive.
inline KeyQuery split_key_query(const Waveform& w, size_t t, Rng& rng) {
  if (t == 0) throw std::invalid_argument("split_key_query: t must be > 0");
  if (w.samples.empty()) {
    throw std::invalid_argument("split_key_query: empty waveform " + w.source_id);
  }
  std::vector<double> padded;
  const std::vector<double>* src = &w.samples;
  if (w.samples.size() < 2 * t) {
    padded.resize(2 * t);
    for (size_t i = 0; i < 2 * t; ++i) padded[i] = w.samples[i % w.samples.size()];
    src = &padded;
  }
  size_t offset = 0;
  if (src->size() > 2 * t) {
    offset = static_cast<size_t>(rng.uniform_int(src->size() - 2 * t + 1));
  }
  KeyQuery out;
  out.crop_offset = offset;
  for (auto* seg : {&out.key, &out.query}) {
    seg->sample_rate = w.sample_rate;
    seg->source_id = w.source_id;
    seg->speaker_class = w.speaker_class;
    seg->content_class = w.content_class;
  }
  out.key.samples.assign(src->begin() + offset, src->begin() + offset + t);
  out.query.samples.assign(src->begin() + offset + t, src->begin() + offset + 2 * t);
  return out;
}

// Samples n distinct sources and splits each into a key/query pair.
inline SegmentBatch make_batch(const Manifest& manifest, size_t n, size_t t,
                               uint64_t seed) {
  if (n > manifest.entries.size()) {
    throw std::invalid_argument("make_batch: batch size " + std::to_string(n) +
                                " exceeds manifest size " +
                                std::to_string(manifest.entries.size()));
  }
  Rng rng(seed);
  const auto picks = rng.sample_without_replacement(manifest.entries.size(), n);
  SegmentBatch batch;
  batch.n_sources = static_cast<int>(n);
  for (size_t i = 0; i < n; ++i) {
    const ManifestEntry& e = manifest.entries[picks[i]];
    Waveform w = load_wav(manifest.resolve_path(e));
    w.source_id = e.source_id;
    w.speaker_class = e.speaker_class;
    w.content_class = e.content_class;
    Rng crop_rng(mix_seed(seed, hash_str(e.source_id)));
    KeyQuery kq = split_key_query(w, t, crop_rng);
    batch.segments.push_back(
        {std::move(kq.key), static_cast<int>(i), SegmentRole::kKey, kq.crop_offset});
    batch.segments.push_back({std::move(kq.query), static_cast<int>(i),
                              SegmentRole::kQuery, kq.crop_offset + t});
  }
  return batch;
}

}  // namespace ohubert
