#pragma once

// Minimal RIFF/WAVE reader and writer. Mono only; PCM 16-bit or 32-bit float
// in, PCM 16-bit out. Samples are normalized doubles in [-1, 1].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ohubert {

struct WavData {
  std::vector<double> samples;
  int sample_rate = 0;
};

namespace wav_detail {

inline uint16_t read_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

inline uint32_t read_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

inline void write_u16(std::ostream& os, uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

inline void write_u32(std::ostream& os, uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff),
                              static_cast<unsigned char>((v >> 16) & 0xff),
                              static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace wav_detail

inline WavData read_wav(const std::string& path) {
  using namespace wav_detail;
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_wav: cannot open " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0) {
    throw std::runtime_error("read_wav: not a RIFF/WAVE file: " + path);
  }

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  bool have_fmt = false;
  WavData out;

  size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const char* id = reinterpret_cast<const char*>(buf.data() + pos);
    const uint32_t chunk_size = read_u32(buf.data() + pos + 4);
    const size_t body = pos + 8;
    if (body + chunk_size > buf.size()) {
      throw std::runtime_error("read_wav: truncated chunk in " + path);
    }
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (chunk_size < 16) throw std::runtime_error("read_wav: malformed fmt chunk");
      format = read_u16(buf.data() + body);
      channels = read_u16(buf.data() + body + 2);
      sample_rate = read_u32(buf.data() + body + 4);
      bits = read_u16(buf.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) throw std::runtime_error("read_wav: data chunk before fmt");
      if (channels != 1) {
        throw std::runtime_error("read_wav: only mono supported, got " +
                                 std::to_string(channels) + " channels");
      }
      const unsigned char* d = buf.data() + body;
      if (format == 1 && bits == 16) {
        const size_t n = chunk_size / 2;
        out.samples.resize(n);
        for (size_t i = 0; i < n; ++i) {
          const int16_t v = static_cast<int16_t>(read_u16(d + 2 * i));
          out.samples[i] = static_cast<double>(v) / 32768.0;
        }
      } else if (format == 3 && bits == 32) {
        const size_t n = chunk_size / 4;
        out.samples.resize(n);
        for (size_t i = 0; i < n; ++i) {
          uint32_t raw = read_u32(d + 4 * i);
          float v;
          std::memcpy(&v, &raw, 4);
          out.samples[i] = static_cast<double>(v);
        }
      } else {
        throw std::runtime_error("read_wav: unsupported encoding (format " +
                                 std::to_string(format) + ", " +
                                 std::to_string(bits) + " bits)");
      }
      out.sample_rate = static_cast<int>(sample_rate);
      return out;
    }
    pos = body + chunk_size + (chunk_size & 1);  // chunks are word-aligned
  }
  throw std::runtime_error("read_wav: no data chunk in " + path);
}

inline void write_wav_pcm16(const std::string& path,
                            const std::vector<double>& samples,
                            int sample_rate) {
  using namespace wav_detail;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_wav_pcm16: cannot open " + path);

  const uint32_t data_bytes = static_cast<uint32_t>(samples.size() * 2);
  f.write("RIFF", 4);
  write_u32(f, 36 + data_bytes);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  write_u32(f, 16);
  write_u16(f, 1);  // PCM
  write_u16(f, 1);  // mono
  write_u32(f, static_cast<uint32_t>(sample_rate));
  write_u32(f, static_cast<uint32_t>(sample_rate) * 2);
  write_u16(f, 2);
  write_u16(f, 16);
  f.write("data", 4);
  write_u32(f, data_bytes);
  for (double s : samples) {
    long q = std::lround(s * 32768.0);
    q = std::clamp<long>(q, -32768, 32767);
    write_u16(f, static_cast<uint16_t>(static_cast<int16_t>(q)));
  }
  if (!f) throw std::runtime_error("write_wav_pcm16: write failed for " + path);
}

}  // namespace ohubert
