#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "msdml/audio.hpp"
#include "msdml/features.hpp"
#include "msdml/synthetic.hpp"

using namespace msdml;

namespace {

AudioSegment segment_of(std::vector<float> x) { return AudioSegment{std::move(x), 44100.0, "s", "c"}; }

// Straightforward median HPSS: symmetric padding by explicit copy, full sort.
HarmonicPercussive hpss_oracle(const Eigen::MatrixXf& s, int kernel, double power) {
  const int half = kernel / 2;
  auto sym = [](int i, int n) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
  };
  Eigen::MatrixXf h(s.rows(), s.cols()), p(s.rows(), s.cols());
  for (int r = 0; r < s.rows(); ++r)
    for (int c = 0; c < s.cols(); ++c) {
      std::vector<float> th, fr;
      for (int k = -half; k <= half; ++k) {
        th.push_back(s(r, sym(c + k, static_cast<int>(s.cols()))));
        fr.push_back(s(sym(r + k, static_cast<int>(s.rows())), c));
      }
      std::sort(th.begin(), th.end());
      std::sort(fr.begin(), fr.end());
      h(r, c) = th[static_cast<std::size_t>(half)];
      p(r, c) = fr[static_cast<std::size_t>(half)];
    }
  Spectrogram hs, ps;
  hs.magnitudes = ps.magnitudes = s;
  for (int i = 0; i < s.size(); ++i) {
    const double a = std::pow(h(i), power), b = std::pow(p(i), power);
    const double m = a + b > 0 ? a / (a + b) : 0.5;
    hs.magnitudes(i) = static_cast<float>(m * s(i));
    ps.magnitudes(i) = s(i) - hs.magnitudes(i);
  }
  return {hs, ps};
}

double energy(const Eigen::MatrixXf& m) { return m.cast<double>().squaredNorm(); }

}  // namespace

TEST(Stft, FramingAndShape) {
  FeatureConfig cfg;
  EXPECT_EQ(cfg.frame_length(), 882);
  EXPECT_EQ(cfg.hop_length(), 441);
  const auto spec = stft(std::vector<float>(88200, 0.0f), cfg);
  EXPECT_EQ(spec.bins(), 513);
  EXPECT_EQ(spec.frames(), 201);
}

TEST(Stft, ToneLandsInItsBin) {
  FeatureConfig cfg;
  const auto spec = stft(synthetic::steady_tone(1000.0, 2.0), cfg);
  Eigen::Index bin = 0;
  spec.magnitudes.col(100).maxCoeff(&bin);
  EXPECT_NEAR(static_cast<double>(bin), 1000.0 * 1024 / 44100.0, 1.0);
  EXPECT_GE(spec.magnitudes.minCoeff(), 0.0f);
}

TEST(Stft, MatchesDirectDft) {
  FeatureConfig cfg;
  std::mt19937_64 rng(1);
  std::normal_distribution<float> g;
  std::vector<float> x(4410);
  for (auto& v : x) v = g(rng);
  const auto spec = stft(x, cfg);
  const auto w = hann_window(882);
  const int frame = 3, start = frame * 441 - 441;
  for (int k : {0, 5, 100, 512}) {
    std::complex<double> acc = 0;
    for (int n = 0; n < 882; ++n) {
      int idx = start + n;
      if (idx < 0 || idx >= static_cast<int>(x.size())) continue;
      acc += static_cast<double>(x[static_cast<std::size_t>(idx)] * w[static_cast<std::size_t>(n)]) *
             std::polar(1.0, -2.0 * std::numbers::pi * k * n / 1024.0);
    }
    EXPECT_NEAR(spec.magnitudes(k, frame), std::abs(acc), 1e-3 * std::max(1.0, std::abs(acc)));
  }
}

TEST(Hpss, MatchesOracle) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Spectrogram s;
  s.magnitudes.resize(40, 30);
  for (int i = 0; i < s.magnitudes.size(); ++i) s.magnitudes(i) = u(rng);
  const auto got = hpss(s, 17, 17, 2.0);
  const auto want = hpss_oracle(s.magnitudes, 17, 2.0);
  EXPECT_LT((got.harmonic.magnitudes - want.harmonic.magnitudes).cwiseAbs().maxCoeff(), 1e-6f);
  EXPECT_LT((got.percussive.magnitudes - want.percussive.magnitudes).cwiseAbs().maxCoeff(), 1e-6f);
}

TEST(Hpss, PartitionSumsToInput) {
  FeatureConfig cfg;
  std::mt19937_64 rng(2);
  const auto x = synthetic::synth_example(3, rng);
  const auto spec = stft(x, cfg);
  const auto hp = hpss(spec, cfg);
  const Eigen::MatrixXf sum = hp.harmonic.magnitudes + hp.percussive.magnitudes;
  EXPECT_LE((sum - spec.magnitudes).cwiseAbs().maxCoeff(), 1e-5f * spec.magnitudes.maxCoeff());
  EXPECT_GE(hp.harmonic.magnitudes.minCoeff(), 0.0f);
  EXPECT_GE(hp.percussive.magnitudes.minCoeff(), -1e-6f);
}

TEST(Hpss, ToneIsHarmonic) {
  FeatureConfig cfg;
  const auto spec = stft(synthetic::steady_tone(1000.0, 2.0), cfg);
  const auto hp = hpss(spec, cfg);
  const auto want = hpss_oracle(spec.magnitudes, 17, 2.0);
  const double share = energy(hp.harmonic.magnitudes) / energy(spec.magnitudes);
  EXPECT_GE(share, 0.8);
  EXPECT_NEAR(share, energy(want.harmonic.magnitudes) / energy(spec.magnitudes), 1e-6);
}

TEST(Hpss, ClickTrainIsPercussive) {
  FeatureConfig cfg;
  const auto spec = stft(synthetic::click_train(20.0, 2.0), cfg);
  const auto hp = hpss(spec, cfg);
  const double share = energy(hp.percussive.magnitudes) / energy(spec.magnitudes);
  EXPECT_GE(share, 0.8);
}

TEST(Hpss, AllZero) {
  Spectrogram s;
  s.magnitudes = Eigen::MatrixXf::Zero(20, 10);
  const auto hp = hpss(s);
  EXPECT_EQ(hp.harmonic.magnitudes.cwiseAbs().maxCoeff(), 0.0f);
  EXPECT_EQ(hp.percussive.magnitudes.cwiseAbs().maxCoeff(), 0.0f);
}

TEST(Hpss, RejectsNegative) {
  Spectrogram s;
  s.magnitudes = Eigen::MatrixXf::Constant(4, 4, -1.0f);
  EXPECT_THROW(hpss(s), DataError);
}

TEST(Mel, SlaneyScale) {
  EXPECT_DOUBLE_EQ(hz_to_mel(0.0), 0.0);
  EXPECT_NEAR(hz_to_mel(1000.0), 15.0, 1e-12);
  for (double f : {50.0, 700.0, 1000.0, 4000.0, 20000.0}) EXPECT_NEAR(mel_to_hz(hz_to_mel(f)), f, 1e-9 * f);
}

TEST(Mel, FilterbankShapeAndArea) {
  FeatureConfig cfg;
  const auto fb = mel_filterbank(cfg);
  EXPECT_EQ(fb.rows(), 40);
  EXPECT_EQ(fb.cols(), 513);
  EXPECT_GE(fb.minCoeff(), 0.0f);
  for (int m = 0; m < 40; ++m) EXPECT_GT(fb.row(m).sum(), 0.0f) << "empty band " << m;
}

TEST(MelExample, ShapeNormalizationAndDeterminism) {
  std::mt19937_64 rng(11);
  const auto x = synthetic::synth_example(1, rng);
  const auto a = mel_three_channel(segment_of(x));
  const auto b = mel_three_channel(segment_of(x));
  EXPECT_EQ(a.tensor.size(), 40u * 200u * 3u);
  EXPECT_EQ(a.tensor, b.tensor);
  for (int c = 0; c < 3; ++c) {
    float mx = -1e9f, mn = 1e9f;
    for (int m = 0; m < 40; ++m)
      for (int t = 0; t < 200; ++t) {
        mx = std::max(mx, a.at(m, t, c));
        mn = std::min(mn, a.at(m, t, c));
      }
    EXPECT_NEAR(mx, 0.0f, 1e-6f);
    EXPECT_GE(mn, -80.0f - 1e-4f);
  }
  for (float v : a.tensor) ASSERT_TRUE(std::isfinite(v));
}

TEST(MelExample, SilenceIsFloor) {
  const auto ex = mel_three_channel(segment_of(std::vector<float>(88200, 0.0f)));
  for (float v : ex.tensor) ASSERT_EQ(v, -80.0f);
}

TEST(MelExample, ToneHarmonicDominatesPercussive) {
  FeatureConfig cfg;
  const auto p = mel_power_channels(synthetic::steady_tone(1000.0, 2.0), cfg);
  EXPECT_EQ(p.mel.rows(), 40);
  EXPECT_EQ(p.mel.cols(), 200);
  EXPECT_GE(p.harmonic.sum(), 4.0 * p.percussive.sum());
}

TEST(MelExample, MelOnlyCopiesChannelZero) {
  std::mt19937_64 rng(5);
  const auto x = synthetic::synth_example(2, rng);
  const auto full = mel_three_channel(segment_of(x));
  const auto mono = mel_three_channel(segment_of(x), true);
  const auto view = mel_only_view(full);
  for (int m = 0; m < 40; ++m)
    for (int t = 0; t < 200; ++t) {
      EXPECT_EQ(mono.at(m, t, 0), full.at(m, t, 0));
      EXPECT_EQ(mono.at(m, t, 1), mono.at(m, t, 0));
      EXPECT_EQ(mono.at(m, t, 2), mono.at(m, t, 0));
      EXPECT_EQ(view.at(m, t, 2), full.at(m, t, 0));
    }
}

TEST(MelExample, RejectsBadSegments) {
  EXPECT_THROW(mel_three_channel(segment_of({})), DataError);
  std::vector<float> x(88200, 0.0f);
  x[10] = std::nanf("");
  EXPECT_THROW(mel_three_channel(segment_of(x)), DataError);
}

TEST(Precomputed, FramesRepeatCyclically) {
  Eigen::MatrixXf mel(40, 7);
  for (int i = 0; i < mel.size(); ++i) mel(i) = static_cast<float>(i);
  const auto ex = from_precomputed_mel(mel, "id", "lab");
  EXPECT_EQ(ex.tensor.size(), 24000u);
  for (int m = 0; m < 40; ++m)
    for (int t = 0; t < 200; ++t)
      for (int c = 0; c < 3; ++c) ASSERT_EQ(ex.at(m, t, c), mel(m, t % 7));
  EXPECT_THROW(from_precomputed_mel(Eigen::MatrixXf(), "x", "y"), DataError);
}
