#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "wavegen/audio_io.hpp"

using namespace wavegen;
namespace fs = std::filesystem;

namespace {

void push_u32(std::vector<uint8_t>& v, uint32_t x) {
  for (int i = 0; i < 4; ++i) v.push_back((uint8_t)(x >> (8 * i)));
}
void push_u16(std::vector<uint8_t>& v, uint16_t x) {
  v.push_back((uint8_t)x);
  v.push_back((uint8_t)(x >> 8));
}
void push_tag(std::vector<uint8_t>& v, const char* t) { v.insert(v.end(), t, t + 4); }

// Hand-rolled RIFF writer so the parser is tested against independent bytes.
std::vector<uint8_t> build_wav(const std::vector<int16_t>& samples, int channels, int rate,
                               bool junk_chunks = false, uint16_t format = 1,
                               uint16_t bits = 16) {
  std::vector<uint8_t> v;
  push_tag(v, "RIFF");
  push_u32(v, 0);  // patched below
  push_tag(v, "WAVE");
  if (junk_chunks) {
    push_tag(v, "JUNK");
    push_u32(v, 3);  // odd size: consumes a pad byte
    v.push_back(1);
    v.push_back(2);
    v.push_back(3);
    v.push_back(0);
  }
  push_tag(v, "fmt ");
  push_u32(v, 16);
  push_u16(v, format);
  push_u16(v, (uint16_t)channels);
  push_u32(v, (uint32_t)rate);
  push_u32(v, (uint32_t)(rate * channels * bits / 8));
  push_u16(v, (uint16_t)(channels * bits / 8));
  push_u16(v, bits);
  if (junk_chunks) {
    push_tag(v, "LIST");
    push_u32(v, 4);
    push_tag(v, "INFO");
  }
  push_tag(v, "data");
  push_u32(v, (uint32_t)(samples.size() * 2));
  for (int16_t s : samples) push_u16(v, (uint16_t)s);
  uint32_t riff_size = (uint32_t)(v.size() - 8);
  for (int i = 0; i < 4; ++i) v[(size_t)(4 + i)] = (uint8_t)(riff_size >> (8 * i));
  return v;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("wavegen_audio_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_file(const fs::path& p, const std::vector<uint8_t>& bytes) {
  std::ofstream f(p, std::ios::binary);
  f.write((const char*)bytes.data(), (long)bytes.size());
}

}  // namespace

TEST_CASE("parse maps int16 to float as v/32768") {
  auto bytes = build_wav({0, -32768, 16384, 32767}, 1, 16000);
  auto w = parse_wav(bytes);
  REQUIRE(w.samples.size() == 4);
  CHECK(w.sample_rate == 16000);
  CHECK(w.samples[0] == 0.0f);
  CHECK(w.samples[1] == -1.0f);
  CHECK(w.samples[2] == 0.5f);
  CHECK(w.samples[3] == doctest::Approx(32767.0 / 32768.0).epsilon(1e-12));
}

TEST_CASE("encode maps float to int16 as clamp(round(f*32767))") {
  Waveform w;
  w.sample_rate = 16000;
  w.samples = {0.0f, 0.25f, -1.0f, 1.0f, 2.0f, -2.0f};
  auto bytes = encode_wav(w);
  // canonical 44-byte header produced by the encoder
  std::vector<int16_t> got;
  for (size_t i = 44; i + 1 < bytes.size(); i += 2)
    got.push_back((int16_t)(bytes[i] | (bytes[i + 1] << 8)));
  REQUIRE(got.size() == 6);
  CHECK(got[0] == 0);
  CHECK(got[1] == 8192);  // round(0.25 * 32767) = round(8191.75)
  CHECK(got[2] == -32767);
  CHECK(got[3] == 32767);
  CHECK(got[4] == 32767);   // clamped
  CHECK(got[5] == -32768);  // clamped
}

TEST_CASE("encode/parse round trip stays within quantization error") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  Waveform w;
  w.sample_rate = 16000;
  for (int i = 0; i < 4096; ++i) w.samples.push_back(dist(rng));
  auto back = parse_wav(encode_wav(w));
  REQUIRE(back.samples.size() == w.samples.size());
  CHECK(back.sample_rate == w.sample_rate);
  double max_err = 0;
  for (size_t i = 0; i < w.samples.size(); ++i)
    max_err = std::max(max_err, std::abs((double)w.samples[i] - (double)back.samples[i]));
  CHECK(max_err <= 1.0 / 16384.0);
}

TEST_CASE("multichannel input is averaged to mono") {
  auto bytes = build_wav({1000, 2000, -400, 400}, 2, 16000);
  auto w = parse_wav(bytes);
  REQUIRE(w.samples.size() == 2);
  CHECK(w.samples[0] == doctest::Approx(1500.0 / 32768.0).epsilon(1e-12));
  CHECK(w.samples[1] == 0.0f);
}

TEST_CASE("unknown RIFF chunks are skipped with word alignment") {
  auto bytes = build_wav({123, -456}, 1, 22050, /*junk_chunks=*/true);
  auto w = parse_wav(bytes);
  REQUIRE(w.samples.size() == 2);
  CHECK(w.sample_rate == 22050);
  CHECK(w.samples[0] == doctest::Approx(123.0 / 32768.0).epsilon(1e-12));
}

TEST_CASE("non-PCM-16 encodings are rejected") {
  CHECK_THROWS(parse_wav(build_wav({0}, 1, 16000, false, /*format=*/3)));
  CHECK_THROWS(parse_wav(build_wav({0}, 1, 16000, false, 1, /*bits=*/8)));
  CHECK_THROWS(parse_wav(std::vector<uint8_t>{'R', 'I', 'F', 'F'}));
}

TEST_CASE("save/load round trip through the filesystem") {
  TempDir dir;
  Waveform w;
  w.sample_rate = 16000;
  for (int i = 0; i < 100; ++i) w.samples.push_back((float)std::sin(0.1 * i) * 0.9f);
  auto p = (dir.path / "x.wav").string();
  save_wav(w, p);
  auto back = load_wav(p);
  REQUIRE(back.samples.size() == w.samples.size());
  for (size_t i = 0; i < w.samples.size(); ++i)
    CHECK(std::abs(back.samples[i] - w.samples[i]) <= 1.0f / 16384.0f);
}

TEST_CASE("make_dataset slices with zero padding or discards the remainder") {
  TempDir dir;
  std::vector<int16_t> long_samples(40000);
  for (size_t i = 0; i < long_samples.size(); ++i) long_samples[i] = (int16_t)(i % 2000);
  write_file(dir.path / "a.wav", build_wav(long_samples, 1, 16000));

  auto padded = make_dataset(dir.path.string(), 16384, PadPolicy::ZeroPad);
  REQUIRE(padded.size() == 3);  // 40000 = 2*16384 + 7232
  CHECK(padded.length == 16384);
  CHECK(padded.manifest[0].offset == 0);
  CHECK(padded.manifest[1].offset == 16384);
  CHECK(padded.manifest[2].offset == 32768);
  for (long t = 7232; t < 16384; ++t) CHECK(padded.examples[2].samples[(size_t)t] == 0.0f);
  CHECK(padded.examples[2].samples[7231] ==
        doctest::Approx((double)long_samples[39999] / 32768.0));

  auto discarded = make_dataset(dir.path.string(), 16384, PadPolicy::Discard);
  CHECK(discarded.size() == 2);

  CHECK_THROWS(make_dataset((dir.path / "missing").string(), 16384, PadPolicy::ZeroPad));
}

TEST_CASE("make_dataset orders files by path and rejects mixed rates") {
  TempDir dir;
  write_file(dir.path / "b.wav", build_wav(std::vector<int16_t>(100, 2), 1, 16000));
  write_file(dir.path / "a.wav", build_wav(std::vector<int16_t>(100, 1), 1, 16000));
  auto d = make_dataset(dir.path.string(), 100, PadPolicy::ZeroPad);
  REQUIRE(d.size() == 2);
  CHECK(d.manifest[0].path.find("a.wav") != std::string::npos);
  CHECK(d.examples[0].samples[0] == doctest::Approx(1.0 / 32768.0));
  CHECK(d.examples[1].samples[0] == doctest::Approx(2.0 / 32768.0));

  write_file(dir.path / "c.wav", build_wav(std::vector<int16_t>(100, 3), 1, 8000));
  CHECK_THROWS(make_dataset(dir.path.string(), 100, PadPolicy::ZeroPad));
}

TEST_CASE("toy dataset classes are separable by their tone frequency") {
  auto d = synth_toy_dataset(10, 8, 42);
  REQUIRE(d.size() == 80);
  REQUIRE(d.labels.size() == 80);
  CHECK(d.length == 16384);
  CHECK(d.sample_rate == 16000);
  int correct = 0;
  for (long i = 0; i < d.size(); ++i) {
    const auto& w = d.examples[(size_t)i];
    int best = -1;
    double best_e = -1;
    for (int k = 0; k < 10; ++k) {
      double f = 400.0 * (k + 1);
      double c = 0, s = 0;
      for (long t = 0; t < d.length; ++t) {
        double ph = 2.0 * M_PI * f * t / d.sample_rate;
        c += w.samples[(size_t)t] * std::cos(ph);
        s += w.samples[(size_t)t] * std::sin(ph);
      }
      double e = c * c + s * s;
      if (e > best_e) {
        best_e = e;
        best = k;
      }
    }
    if (best == d.labels[(size_t)i]) ++correct;
  }
  CHECK((double)correct / (double)d.size() >= 0.99);
}

TEST_CASE("toy dataset is deterministic per seed and jittered within bounds") {
  auto a = synth_toy_dataset(4, 3, 7);
  auto b = synth_toy_dataset(4, 3, 7);
  auto c = synth_toy_dataset(4, 3, 8);
  REQUIRE(a.size() == b.size());
  bool identical = true, differs = false;
  for (long i = 0; i < a.size(); ++i)
    for (long t = 0; t < a.length; ++t) {
      if (a.examples[(size_t)i].samples[(size_t)t] != b.examples[(size_t)i].samples[(size_t)t])
        identical = false;
      if (a.examples[(size_t)i].samples[(size_t)t] != c.examples[(size_t)i].samples[(size_t)t])
        differs = true;
    }
  CHECK(identical);
  CHECK(differs);
  for (const auto& w : a.examples) {
    float peak = 0;
    for (float v : w.samples) peak = std::max(peak, std::abs(v));
    CHECK(peak <= 0.7501f);  // amplitude jitter range [0.55, 0.75]
    CHECK(peak >= 0.5f);
  }
}
