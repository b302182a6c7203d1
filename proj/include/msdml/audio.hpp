#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "msdml/error.hpp"

namespace msdml {

inline constexpr double kCanonicalSampleRate = 44100.0;
inline constexpr double kSegmentSeconds = 2.0;

struct AudioSegment {
  std::vector<float> samples;
  double sample_rate = kCanonicalSampleRate;
  std::string source_id;
  std::string class_label;
};

struct AudioBuffer {
  std::vector<float> samples;  // mono
  double sample_rate = 0.0;
};

// Split a recording into 2 s segments. Short recordings are cyclically
// repeated from the beginning; long ones are cut into non-overlapping
// windows and the sub-2 s tail is dropped.
inline std::vector<AudioSegment> load_and_segment(std::span<const float> audio,
                                                  double sample_rate,
                                                  const std::string& source_id = {},
                                                  const std::string& class_label = {}) {
  require<UsageError>(sample_rate > 0.0, "sample rate must be positive");
  require<DataError>(!audio.empty(), "empty input");
  for (float s : audio) require<DataError>(std::isfinite(s), "corrupt audio: non-finite sample");

  const auto seg_len = static_cast<std::size_t>(std::llround(kSegmentSeconds * sample_rate));
  std::vector<AudioSegment> out;
  auto make = [&](std::vector<float> samples) {
    out.push_back(AudioSegment{std::move(samples), sample_rate, source_id, class_label});
  };

  if (audio.size() < seg_len) {
    std::vector<float> padded(seg_len);
    for (std::size_t i = 0; i < seg_len; ++i) padded[i] = audio[i % audio.size()];
    make(std::move(padded));
    return out;
  }
  const std::size_t n = audio.size() / seg_len;
  for (std::size_t k = 0; k < n; ++k) {
    auto first = audio.begin() + static_cast<std::ptrdiff_t>(k * seg_len);
    make(std::vector<float>(first, first + static_cast<std::ptrdiff_t>(seg_len)));
  }
  return out;
}

// Linear-interpolation resampler.
inline std::vector<float> resample_linear(std::span<const float> in, double from_rate, double to_rate) {
  require<UsageError>(from_rate > 0.0 && to_rate > 0.0, "sample rates must be positive");
  if (in.empty() || from_rate == to_rate) return {in.begin(), in.end()};
  const auto n_out = static_cast<std::size_t>(std::floor(static_cast<double>(in.size()) * to_rate / from_rate));
  std::vector<float> out(std::max<std::size_t>(n_out, 1));
  const double step = from_rate / to_rate;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double pos = static_cast<double>(i) * step;
    const auto i0 = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(i0);
    const float a = in[std::min(i0, in.size() - 1)];
    const float b = in[std::min(i0 + 1, in.size() - 1)];
    out[i] = static_cast<float>(a + (b - a) * frac);
  }
  return out;
}

namespace wav_detail {

inline std::uint32_t u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t u16(const unsigned char* p) { return std::uint16_t(p[0] | (p[1] << 8)); }

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline void put_u16(std::ostream& os, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

}  // namespace wav_detail

// Reads PCM WAV (16/24-bit integer or 32-bit float). Multi-channel input is
// averaged to mono.
inline AudioBuffer read_wav(const std::filesystem::path& path) {
  using namespace wav_detail;
  std::ifstream in(path, std::ios::binary);
  require<DataError>(static_cast<bool>(in), "cannot open audio file ", path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  require<DataError>(bytes.size() >= 12 && std::memcmp(bytes.data(), "RIFF", 4) == 0 &&
                         std::memcmp(bytes.data() + 8, "WAVE", 4) == 0,
                     "corrupt audio: not a RIFF/WAVE file: ", path.string());

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = u32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      require<DataError>(avail >= 16, "corrupt audio: short fmt chunk");
      format = u16(chunk + 8);
      channels = u16(chunk + 10);
      rate = u32(chunk + 12);
      bits = u16(chunk + 22);
      if (format == 0xFFFE && avail >= 26) format = u16(chunk + 8 + 24);  // WAVE_FORMAT_EXTENSIBLE
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = avail;
    }
    pos = body + size + (size & 1u);
  }
  require<DataError>(channels > 0 && rate > 0, "corrupt audio: missing fmt chunk");
  require<DataError>(data != nullptr, "corrupt audio: missing data chunk");
  const bool pcm_int = format == 1 && (bits == 16 || bits == 24);
  const bool pcm_float = format == 3 && bits == 32;
  require<DataError>(pcm_int || pcm_float, "unsupported WAV encoding (format ", format, ", ", bits, " bits)");

  const std::size_t bytes_per = bits / 8;
  const std::size_t frames = data_size / (bytes_per * channels);
  AudioBuffer buf;
  buf.sample_rate = rate;
  buf.samples.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + (f * channels + c) * bytes_per;
      double v = 0.0;
      if (pcm_float) {
        float x;
        std::memcpy(&x, p, 4);
        v = x;
      } else if (bits == 16) {
        v = static_cast<std::int16_t>(u16(p)) / 32768.0;
      } else {
        std::int32_t x = std::int32_t(p[0]) | (std::int32_t(p[1]) << 8) | (std::int32_t(p[2]) << 16);
        if (x & 0x800000) x |= ~0xFFFFFF;
        v = x / 8388608.0;
      }
      acc += v;
    }
    buf.samples[f] = static_cast<float>(acc / channels);
  }
  return buf;
}

// Writes mono 32-bit float WAV.
inline void write_wav(const std::filesystem::path& path, std::span<const float> samples, std::uint32_t rate) {
  using namespace wav_detail;
  std::ofstream os(path, std::ios::binary);
  require<DataError>(static_cast<bool>(os), "cannot write ", path.string());
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 4);
  os.write("RIFF", 4);
  put_u32(os, 36 + data_bytes);
  os.write("WAVEfmt ", 8);
  put_u32(os, 16);
  put_u16(os, 3);
  put_u16(os, 1);
  put_u32(os, rate);
  put_u32(os, rate * 4);
  put_u16(os, 4);
  put_u16(os, 32);
  os.write("data", 4);
  put_u32(os, data_bytes);
  os.write(reinterpret_cast<const char*>(samples.data()), static_cast<std::streamsize>(data_bytes));
  require<DataError>(static_cast<bool>(os), "write failed: ", path.string());
}

// Reads a WAV file, resamples to 44.1 kHz and segments it.
inline std::vector<AudioSegment> load_wav_segments(const std::filesystem::path& path,
                                                   const std::string& source_id,
                                                   const std::string& class_label) {
  AudioBuffer buf = read_wav(path);
  std::vector<float> samples = buf.sample_rate == kCanonicalSampleRate
                                   ? std::move(buf.samples)
                                   : resample_linear(buf.samples, buf.sample_rate, kCanonicalSampleRate);
  return load_and_segment(samples, kCanonicalSampleRate, source_id, class_label);
}

}  // namespace msdml
