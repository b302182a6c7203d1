#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>

#include "msdml/audio.hpp"

using namespace msdml;

namespace {

std::vector<float> ramp(std::size_t n) {
  std::vector<float> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<float>(i % 1000) / 1000.0f;
  return v;
}

void put(std::ofstream& f, std::uint32_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) f.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

// Minimal PCM writer for integer formats the library only reads.
void write_pcm(const std::filesystem::path& p, const std::vector<std::int32_t>& frames, int channels, int bits,
               std::uint32_t rate) {
  std::ofstream f(p, std::ios::binary);
  const std::uint32_t bytes = static_cast<std::uint32_t>(frames.size()) * (bits / 8);
  f.write("RIFF", 4);
  put(f, 36 + bytes, 4);
  f.write("WAVEfmt ", 8);
  put(f, 16, 4);
  put(f, 1, 2);
  put(f, static_cast<std::uint32_t>(channels), 2);
  put(f, rate, 4);
  put(f, rate * channels * (bits / 8), 4);
  put(f, static_cast<std::uint32_t>(channels * (bits / 8)), 2);
  put(f, static_cast<std::uint32_t>(bits), 2);
  f.write("data", 4);
  put(f, bytes, 4);
  for (std::int32_t s : frames) put(f, static_cast<std::uint32_t>(s), bits / 8);
}

}  // namespace

TEST(Segment, ShortClipRepeatsFromStart) {
  const auto clip = ramp(22050);  // 0.5 s
  const auto segs = load_and_segment(clip, 44100.0, "a", "x");
  ASSERT_EQ(segs.size(), 1u);
  ASSERT_EQ(segs[0].samples.size(), 88200u);
  for (std::size_t i = 0; i < 88200; ++i) ASSERT_EQ(segs[0].samples[i], clip[i % 22050]);
  EXPECT_EQ(segs[0].source_id, "a");
  EXPECT_EQ(segs[0].class_label, "x");
}

TEST(Segment, FourSecondsGivesTwo) {
  const auto clip = ramp(176400);
  const auto segs = load_and_segment(clip, 44100.0);
  ASSERT_EQ(segs.size(), 2u);
  for (int k = 0; k < 2; ++k)
    for (std::size_t i = 0; i < 88200; ++i) ASSERT_EQ(segs[k].samples[i], clip[k * 88200 + i]);
}

TEST(Segment, TailIsDropped) {
  std::vector<float> clip(220500);
  for (std::size_t i = 0; i < clip.size(); ++i) clip[i] = static_cast<float>(i);
  const auto segs = load_and_segment(clip, 44100.0);
  ASSERT_EQ(segs.size(), 2u);
  // Windows by hand: [0, 88200) and [88200, 176400).
  EXPECT_EQ(segs[0].samples.front(), 0.0f);
  EXPECT_EQ(segs[0].samples.back(), 88199.0f);
  EXPECT_EQ(segs[1].samples.front(), 88200.0f);
  EXPECT_EQ(segs[1].samples.back(), 176399.0f);
}

TEST(Segment, Errors) {
  EXPECT_THROW(load_and_segment(std::vector<float>{}, 44100.0), DataError);
  std::vector<float> bad(100, 0.0f);
  bad[50] = std::numeric_limits<float>::infinity();
  try {
    load_and_segment(bad, 44100.0);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("corrupt audio"), std::string::npos);
  }
  try {
    load_and_segment(std::vector<float>{}, 44100.0);
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("empty input"), std::string::npos);
  }
  EXPECT_THROW(load_and_segment(std::vector<float>{1.0f}, 0.0), UsageError);
}

TEST(Resample, LengthAndEndpoints) {
  std::vector<float> x(22050);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(i);
  const auto y = resample_linear(x, 22050.0, 44100.0);
  EXPECT_EQ(y.size(), 44100u);
  EXPECT_FLOAT_EQ(y[2], 1.0f);
  EXPECT_FLOAT_EQ(y[3], 1.5f);
}

TEST(Wav, FloatRoundTrip) {
  const auto p = std::filesystem::temp_directory_path() / "msdml_f32.wav";
  std::vector<float> x{0.0f, 0.25f, -0.5f, 1.0f};
  write_wav(p, x, 44100);
  const auto b = read_wav(p);
  EXPECT_EQ(b.sample_rate, 44100.0);
  EXPECT_EQ(b.samples, x);
  std::filesystem::remove(p);
}

TEST(Wav, Pcm16StereoMixesToMono) {
  const auto p = std::filesystem::temp_directory_path() / "msdml_s16.wav";
  write_pcm(p, {16384, 0, -32768, 32767 - 32767}, 2, 16, 22050);
  const auto b = read_wav(p);
  ASSERT_EQ(b.samples.size(), 2u);
  EXPECT_FLOAT_EQ(b.samples[0], 0.25f);
  EXPECT_FLOAT_EQ(b.samples[1], -0.5f);
  EXPECT_EQ(b.sample_rate, 22050.0);
  std::filesystem::remove(p);
}

TEST(Wav, Pcm24) {
  const auto p = std::filesystem::temp_directory_path() / "msdml_s24.wav";
  write_pcm(p, {1 << 22, -(1 << 23) & 0xffffff}, 1, 24, 44100);
  const auto b = read_wav(p);
  ASSERT_EQ(b.samples.size(), 2u);
  EXPECT_FLOAT_EQ(b.samples[0], 0.5f);
  EXPECT_FLOAT_EQ(b.samples[1], -1.0f);
  std::filesystem::remove(p);
}

TEST(Wav, GarbageIsDataError) {
  const auto p = std::filesystem::temp_directory_path() / "msdml_bad.wav";
  std::ofstream(p) << "RIFF....nope";
  EXPECT_THROW(read_wav(p), DataError);
  EXPECT_THROW(read_wav(std::filesystem::temp_directory_path() / "msdml_missing.wav"), DataError);
  std::filesystem::remove(p);
}

TEST(Wav, SegmentsResampledTo44k) {
  const auto p = std::filesystem::temp_directory_path() / "msdml_seg.wav";
  write_wav(p, std::vector<float>(22050 * 3, 0.1f), 22050);
  const auto segs = load_wav_segments(p, "id", "lab");
  ASSERT_EQ(segs.size(), 1u);
  EXPECT_EQ(segs[0].samples.size(), 88200u);
  EXPECT_EQ(segs[0].sample_rate, 44100.0);
  std::filesystem::remove(p);
}
