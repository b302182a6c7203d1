#pragma once

// Synthetic acoustic classes for desk-scale experiments. Each class has a
// distinct tonal, chirp, percussive or noise signature; per-example
// parameters (pitch, timing, level) are randomised.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "msdml/audio.hpp"
#include "msdml/store.hpp"

namespace msdml::synthetic {

inline constexpr std::array<const char*, 6> kClassNames = {"tone", "chirp", "clicks", "harmonic", "trill", "noiseburst"};

inline std::vector<float> steady_tone(double freq, double seconds, double rate = kCanonicalSampleRate, float amp = 0.5f) {
  std::vector<float> x(static_cast<std::size_t>(seconds * rate));
  for (std::size_t n = 0; n < x.size(); ++n)
    x[n] = amp * static_cast<float>(std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(n) / rate));
  return x;
}

inline std::vector<float> click_train(double rate_hz, double seconds, double rate = kCanonicalSampleRate, float amp = 0.9f) {
  std::vector<float> x(static_cast<std::size_t>(seconds * rate), 0.0f);
  const double period = rate / rate_hz;
  for (double t = 0; t < static_cast<double>(x.size()); t += period) {
    const auto n = static_cast<std::size_t>(t);
    x[n] = amp;
    if (n + 1 < x.size()) x[n + 1] = -amp * 0.5f;
  }
  return x;
}

// One 2 s example of class `cls` (0..5).
inline std::vector<float> synth_example(int cls, std::mt19937_64& rng, double rate = kCanonicalSampleRate) {
  const auto n = static_cast<std::size_t>(kSegmentSeconds * rate);
  std::vector<float> x(n, 0.0f);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  const double level = uni(0.3, 0.8);
  const double two_pi = 2.0 * std::numbers::pi;

  auto envelope = [&](double t, double start, double len) {
    if (t < start || t > start + len) return 0.0;
    const double ramp = std::min(0.01, len / 4);
    return std::min({1.0, (t - start) / ramp, (start + len - t) / ramp});
  };

  switch (cls) {
    case 0: {  // steady tone around 1 kHz
      const double f = uni(900, 1300), len = uni(1.0, 1.8), start = uni(0.0, 2.0 - len);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / rate;
        x[i] = static_cast<float>(level * envelope(t, start, len) * std::sin(two_pi * f * t));
      }
      break;
    }
    case 1: {  // repeated rising chirps 2 -> 6 kHz
      const double f0 = uni(1800, 2500), f1 = uni(5000, 6500), len = uni(0.25, 0.4);
      const int reps = 2 + static_cast<int>(uni(0, 2.99));
      double start = uni(0.0, 0.3);
      for (int r = 0; r < reps && start + len < 2.0; ++r, start += len + uni(0.1, 0.3)) {
        for (std::size_t i = static_cast<std::size_t>(start * rate); i < static_cast<std::size_t>((start + len) * rate) && i < n; ++i) {
          const double tl = static_cast<double>(i) / rate - start;
          const double phase = two_pi * (f0 * tl + 0.5 * (f1 - f0) / len * tl * tl);
          x[i] += static_cast<float>(level * envelope(tl, 0, len) * std::sin(phase));
        }
      }
      break;
    }
    case 2: {  // broadband click train
      const double rate_hz = uni(15, 25), offset = uni(0, 0.05);
      for (double t = offset; t < 2.0; t += 1.0 / rate_hz) {
        const auto i = static_cast<std::size_t>(t * rate);
        for (std::size_t k = 0; k < 20 && i + k < n; ++k)
          x[i + k] += static_cast<float>(level * std::exp(-static_cast<double>(k) / 3.0) * noise(rng));
      }
      break;
    }
    case 3: {  // low harmonic stack
      const double f = uni(300, 450), len = uni(0.8, 1.6), start = uni(0.0, 2.0 - len);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / rate;
        double s = 0;
        for (int h = 1; h <= 6; ++h) s += std::sin(two_pi * f * h * t) / h;
        x[i] = static_cast<float>(0.5 * level * envelope(t, start, len) * s);
      }
      break;
    }
    case 4: {  // 3 kHz trill, amplitude-modulated pulses
      const double f = uni(2800, 3400), am = uni(8, 12);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / rate;
        const double gate = std::max(0.0, std::sin(two_pi * am * t));
        x[i] = static_cast<float>(level * gate * gate * std::sin(two_pi * f * t));
      }
      break;
    }
    default: {  // high band-passed noise bursts
      const int bursts = 3 + static_cast<int>(uni(0, 2.99));
      // Two-pole resonator around 7.5 kHz.
      const double fc = uni(6500, 8500), r = 0.97;
      const double a1 = 2 * r * std::cos(two_pi * fc / rate), a2 = -r * r;
      for (int b = 0; b < bursts; ++b) {
        const double start = uni(0.0, 1.85), len = uni(0.08, 0.15);
        double y1 = 0, y2 = 0;
        for (std::size_t i = static_cast<std::size_t>(start * rate); i < static_cast<std::size_t>((start + len) * rate) && i < n; ++i) {
          const double y = noise(rng) * 0.1 + a1 * y1 + a2 * y2;
          y2 = y1;
          y1 = y;
          x[i] += static_cast<float>(level * 0.5 * y);
        }
      }
      break;
    }
  }
  for (auto& s : x) s += static_cast<float>(0.003 * noise(rng));
  return x;
}

// Writes per_class WAV files for each of the first `classes` signatures and
// a manifest.csv next to them. Returns the manifest path.
inline std::filesystem::path write_dataset(const std::filesystem::path& dir, int per_class, std::uint64_t seed,
                                           int classes = static_cast<int>(kClassNames.size())) {
  std::filesystem::create_directories(dir / "audio");
  std::mt19937_64 rng(seed);
  Manifest m;
  for (int c = 0; c < classes; ++c) {
    for (int k = 0; k < per_class; ++k) {
      const std::string id = std::string(kClassNames[static_cast<std::size_t>(c)]) + "_" + std::to_string(k);
      const auto path = dir / "audio" / (id + ".wav");
      const auto x = synth_example(c, rng);
      write_wav(path, x, static_cast<std::uint32_t>(kCanonicalSampleRate));
      m.rows.push_back({id, path, kClassNames[static_cast<std::size_t>(c)], {}, {}});
    }
  }
  const auto manifest = dir / "manifest.csv";
  write_manifest(m, manifest);
  return manifest;
}

}  // namespace msdml::synthetic
