#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "msdml/audio.hpp"
#include "msdml/error.hpp"

namespace msdml {

struct FeatureConfig {
  double sample_rate = kCanonicalSampleRate;
  double frame_ms = 20.0;
  double overlap = 0.5;
  int fft_size = 1024;
  int mel_bands = 40;
  int frames = 200;
  int harmonic_kernel = 17;   // median length along time
  int percussive_kernel = 17; // median length along frequency
  double mask_power = 2.0;
  double floor_db = -80.0;
  double fmin = 0.0;
  double fmax = 0.0;  // 0 selects Nyquist

  int frame_length() const { return static_cast<int>(std::lround(frame_ms * 1e-3 * sample_rate)); }
  int hop_length() const { return static_cast<int>(std::lround(frame_length() * (1.0 - overlap))); }
  int bins() const { return fft_size / 2 + 1; }
};

// Magnitude spectrogram, rows are frequency bins and columns frames.
struct Spectrogram {
  Eigen::MatrixXf magnitudes;
  double frame_ms = 20.0;
  double overlap = 0.5;
  int fft_size = 1024;

  Eigen::Index bins() const { return magnitudes.rows(); }
  Eigen::Index frames() const { return magnitudes.cols(); }
};

inline constexpr int kMelChannels = 3;

// 40 x 200 x 3 tensor stored row-major as [mel][frame][channel]. Channel 0 is
// the Mel spectrogram, 1 its harmonic part, 2 its percussive part, all in dB
// relative to the channel maximum.
struct MelExample {
  int mel_bands = 40;
  int frames = 200;
  std::vector<float> tensor;
  std::string label;
  std::string example_id;

  static constexpr int channels = kMelChannels;

  std::size_t size() const { return tensor.size(); }
  std::size_t index(int mel, int frame, int channel) const {
    return (static_cast<std::size_t>(mel) * frames + frame) * channels + channel;
  }
  float& at(int mel, int frame, int channel) { return tensor[index(mel, frame, channel)]; }
  float at(int mel, int frame, int channel) const { return tensor[index(mel, frame, channel)]; }
};

inline std::vector<float> hann_window(int length) {
  std::vector<float> w(length);
  for (int n = 0; n < length; ++n)
    w[n] = static_cast<float>(0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / length));
  return w;
}

// Centered STFT (frame_length/2 zeros on each side), Hann window, zero-padded
// to fft_size.
inline Spectrogram stft(std::span<const float> signal, const FeatureConfig& cfg) {
  const int frame_len = cfg.frame_length();
  const int hop = cfg.hop_length();
  require<UsageError>(frame_len > 0 && hop > 0 && cfg.fft_size >= frame_len,
                      "invalid STFT framing: frame ", frame_len, ", hop ", hop, ", fft ", cfg.fft_size);
  const int pad = frame_len / 2;
  const auto n = static_cast<long>(signal.size());
  const long n_frames = 1 + (n + 2 * pad - frame_len) / hop;
  require<DataError>(n_frames > 0, "signal shorter than one frame");

  const auto window = hann_window(frame_len);
  Eigen::FFT<float> fft;
  fft.SetFlag(Eigen::FFT<float>::HalfSpectrum);
  std::vector<float> frame(cfg.fft_size);
  std::vector<std::complex<float>> spectrum;

  Spectrogram spec;
  spec.frame_ms = cfg.frame_ms;
  spec.overlap = cfg.overlap;
  spec.fft_size = cfg.fft_size;
  spec.magnitudes.resize(cfg.bins(), n_frames);
  for (long t = 0; t < n_frames; ++t) {
    std::fill(frame.begin(), frame.end(), 0.0f);
    const long start = t * hop - pad;
    for (int k = 0; k < frame_len; ++k) {
      const long i = start + k;
      if (i >= 0 && i < n) frame[k] = signal[static_cast<std::size_t>(i)] * window[k];
    }
    fft.fwd(spectrum, frame);
    for (int b = 0; b < cfg.bins(); ++b) spec.magnitudes(b, t) = std::abs(spectrum[b]);
  }
  return spec;
}

namespace detail {

// scipy-style "reflect" boundary: (d c b a | a b c d | d c b a).
inline Eigen::Index reflect_index(Eigen::Index i, Eigen::Index n) {
  if (n == 1) return 0;
  const Eigen::Index period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

template <typename Get>
float window_median(Eigen::Index center, Eigen::Index n, int kernel, std::vector<float>& buf, Get get) {
  const int half = kernel / 2;
  buf.resize(kernel);
  for (int k = -half; k <= half; ++k) buf[k + half] = get(reflect_index(center + k, n));
  auto mid = buf.begin() + half;
  std::nth_element(buf.begin(), mid, buf.end());
  return *mid;
}

}  // namespace detail

// Median filter along time (per frequency row).
inline Eigen::MatrixXf median_filter_time(const Eigen::MatrixXf& s, int kernel) {
  require<UsageError>(kernel >= 1 && kernel % 2 == 1, "median kernel must be odd and positive");
  Eigen::MatrixXf out(s.rows(), s.cols());
  std::vector<float> buf;
  for (Eigen::Index r = 0; r < s.rows(); ++r)
    for (Eigen::Index c = 0; c < s.cols(); ++c)
      out(r, c) = detail::window_median(c, s.cols(), kernel, buf, [&](Eigen::Index j) { return s(r, j); });
  return out;
}

// Median filter along frequency (per frame column).
inline Eigen::MatrixXf median_filter_freq(const Eigen::MatrixXf& s, int kernel) {
  require<UsageError>(kernel >= 1 && kernel % 2 == 1, "median kernel must be odd and positive");
  Eigen::MatrixXf out(s.rows(), s.cols());
  std::vector<float> buf;
  for (Eigen::Index c = 0; c < s.cols(); ++c)
    for (Eigen::Index r = 0; r < s.rows(); ++r)
      out(r, c) = detail::window_median(r, s.rows(), kernel, buf, [&](Eigen::Index i) { return s(i, c); });
  return out;
}

struct HarmonicPercussive {
  Spectrogram harmonic;
  Spectrogram percussive;
};

// Median-filtering HPSS with soft masks M_h = H^p / (H^p + P^p), M_p = 1 - M_h.
// Bins where both enhanced spectra vanish use M_h = M_p = 0.5.
inline HarmonicPercussive hpss(const Spectrogram& spec, int harmonic_kernel = 17, int percussive_kernel = 17,
                               double power = 2.0) {
  require<DataError>(spec.magnitudes.size() > 0, "empty spectrogram");
  require<DataError>((spec.magnitudes.array() >= 0.0f).all(), "spectrogram has negative entries");
  const Eigen::MatrixXf h_enh = median_filter_time(spec.magnitudes, harmonic_kernel);
  const Eigen::MatrixXf p_enh = median_filter_freq(spec.magnitudes, percussive_kernel);

  HarmonicPercussive out{spec, spec};
  for (Eigen::Index c = 0; c < spec.frames(); ++c) {
    for (Eigen::Index r = 0; r < spec.bins(); ++r) {
      const double hp = std::pow(static_cast<double>(h_enh(r, c)), power);
      const double pp = std::pow(static_cast<double>(p_enh(r, c)), power);
      const double denom = hp + pp;
      const double mask_h = denom > 0.0 ? hp / denom : 0.5;
      const float s = spec.magnitudes(r, c);
      const float h = static_cast<float>(mask_h * s);
      out.harmonic.magnitudes(r, c) = h;
      out.percussive.magnitudes(r, c) = s - h;
    }
  }
  return out;
}

inline HarmonicPercussive hpss(const Spectrogram& spec, const FeatureConfig& cfg) {
  return hpss(spec, cfg.harmonic_kernel, cfg.percussive_kernel, cfg.mask_power);
}

inline double hz_to_mel(double hz) {
  // Slaney: linear below 1 kHz, logarithmic above.
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return hz < min_log_hz ? hz / f_sp : min_log_mel + std::log(hz / min_log_hz) / logstep;
}

inline double mel_to_hz(double mel) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  const double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return mel < min_log_mel ? mel * f_sp : min_log_hz * std::exp(logstep * (mel - min_log_mel));
}

// Triangular, area-normalized Mel filterbank of shape [mel_bands x bins].
inline Eigen::MatrixXf mel_filterbank(const FeatureConfig& cfg) {
  const double fmax = cfg.fmax > 0.0 ? cfg.fmax : cfg.sample_rate / 2.0;
  require<UsageError>(cfg.mel_bands > 0 && fmax > cfg.fmin, "invalid Mel filterbank range");
  const int bins = cfg.bins();
  std::vector<double> edges(cfg.mel_bands + 2);
  const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(fmax);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / (cfg.mel_bands + 1));

  Eigen::MatrixXf fb = Eigen::MatrixXf::Zero(cfg.mel_bands, bins);
  for (int m = 0; m < cfg.mel_bands; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    const double norm = 2.0 / (right - left);
    for (int b = 0; b < bins; ++b) {
      const double f = b * cfg.sample_rate / cfg.fft_size;
      const double up = (f - left) / (center - left);
      const double down = (right - f) / (right - center);
      const double w = std::max(0.0, std::min(up, down));
      fb(m, b) = static_cast<float>(w * norm);
    }
  }
  return fb;
}

// Frame index for crop/pad to a fixed length: frames are repeated cyclically
// from the beginning when the source is shorter.
inline Eigen::Index cyclic_frame(Eigen::Index t, Eigen::Index available) { return t % available; }

namespace detail {

// Power Mel spectrogram in dB relative to its own maximum, floored at
// floor_db. A silent channel is filled with floor_db.
inline Eigen::MatrixXf to_normalized_db(const Eigen::MatrixXf& mel_power, double floor_db) {
  const float ref = mel_power.maxCoeff();
  Eigen::MatrixXf out(mel_power.rows(), mel_power.cols());
  if (!(ref > 1e-30f)) {
    out.setConstant(static_cast<float>(floor_db));
    return out;
  }
  const double amin = static_cast<double>(ref) * std::pow(10.0, floor_db / 10.0);
  for (Eigen::Index i = 0; i < mel_power.size(); ++i) {
    const double p = std::max(static_cast<double>(mel_power(i)), amin);
    out(i) = static_cast<float>(10.0 * std::log10(p / ref));
  }
  return out;
}

}  // namespace detail

// Linear-domain Mel power of the three channels, before dB conversion.
struct MelPower {
  Eigen::MatrixXf mel, harmonic, percussive;  // [mel_bands x frames]
};

inline MelPower mel_power_channels(std::span<const float> samples, const FeatureConfig& cfg) {
  Spectrogram spec = stft(samples, cfg);
  // Fix the frame axis before separation so all channels share it.
  if (spec.frames() != cfg.frames) {
    Eigen::MatrixXf fixed(spec.bins(), cfg.frames);
    for (Eigen::Index t = 0; t < cfg.frames; ++t) fixed.col(t) = spec.magnitudes.col(cyclic_frame(t, spec.frames()));
    spec.magnitudes = std::move(fixed);
  }
  const HarmonicPercussive hp = hpss(spec, cfg);
  const Eigen::MatrixXf fb = mel_filterbank(cfg);
  auto project = [&](const Eigen::MatrixXf& mag) -> Eigen::MatrixXf { return fb * mag.cwiseAbs2(); };
  return {project(spec.magnitudes), project(hp.harmonic.magnitudes), project(hp.percussive.magnitudes)};
}

// Three-channel (Mel, harmonic Mel, percussive Mel) example. With mel_only the
// harmonic and percussive channels are copies of channel 0.
inline MelExample mel_three_channel(const AudioSegment& seg, bool mel_only = false, const FeatureConfig& cfg = {}) {
  require<DataError>(!seg.samples.empty(), "empty input");
  for (float s : seg.samples) require<DataError>(std::isfinite(s), "corrupt audio: non-finite sample");
  FeatureConfig local = cfg;
  local.sample_rate = seg.sample_rate;

  const MelPower power = mel_power_channels(seg.samples, local);
  const Eigen::MatrixXf db[3] = {
      detail::to_normalized_db(power.mel, cfg.floor_db),
      mel_only ? Eigen::MatrixXf() : detail::to_normalized_db(power.harmonic, cfg.floor_db),
      mel_only ? Eigen::MatrixXf() : detail::to_normalized_db(power.percussive, cfg.floor_db),
  };

  MelExample ex;
  ex.mel_bands = cfg.mel_bands;
  ex.frames = cfg.frames;
  ex.label = seg.class_label;
  ex.example_id = seg.source_id;
  ex.tensor.resize(static_cast<std::size_t>(cfg.mel_bands) * cfg.frames * kMelChannels);
  for (int m = 0; m < cfg.mel_bands; ++m)
    for (int t = 0; t < cfg.frames; ++t)
      for (int c = 0; c < kMelChannels; ++c) ex.at(m, t, c) = db[mel_only ? 0 : c](m, t);
  return ex;
}

// Builds an example from an external Mel matrix [mel_bands x N] (already in
// the caller's scale). Frames are repeated from the beginning up to the fixed
// length; all three channels carry the same matrix.
inline MelExample from_precomputed_mel(const Eigen::MatrixXf& mel, const std::string& id, const std::string& label,
                                       int frames = 200) {
  require<DataError>(mel.rows() > 0 && mel.cols() > 0, "empty pre-computed Mel matrix for ", id);
  require<DataError>(mel.allFinite(), "non-finite pre-computed Mel matrix for ", id);
  MelExample ex;
  ex.mel_bands = static_cast<int>(mel.rows());
  ex.frames = frames;
  ex.label = label;
  ex.example_id = id;
  ex.tensor.resize(static_cast<std::size_t>(ex.mel_bands) * frames * kMelChannels);
  for (int m = 0; m < ex.mel_bands; ++m)
    for (int t = 0; t < frames; ++t)
      for (int c = 0; c < kMelChannels; ++c) ex.at(m, t, c) = mel(m, cyclic_frame(t, mel.cols()));
  return ex;
}

// Mel-only view of a three-channel example (channels 1 and 2 replaced by 0).
inline MelExample mel_only_view(MelExample ex) {
  for (int m = 0; m < ex.mel_bands; ++m)
    for (int t = 0; t < ex.frames; ++t) {
      const float v = ex.at(m, t, 0);
      ex.at(m, t, 1) = v;
      ex.at(m, t, 2) = v;
    }
  return ex;
}

}  // namespace msdml
