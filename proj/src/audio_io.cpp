#include "wavegen/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

namespace wavegen {

namespace {

uint32_t rd_u32(const uint8_t* p) {
  return (uint32_t)p[0] | ((uint32_t)p[1] << 8) | ((uint32_t)p[2] << 16) | ((uint32_t)p[3] << 24);
}

uint16_t rd_u16(const uint8_t* p) { return (uint16_t)((uint32_t)p[0] | ((uint32_t)p[1] << 8)); }

void wr_u32(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back((uint8_t)(x & 0xff));
  v.push_back((uint8_t)((x >> 8) & 0xff));
  v.push_back((uint8_t)((x >> 16) & 0xff));
  v.push_back((uint8_t)((x >> 24) & 0xff));
}

void wr_u16(std::vector<uint8_t>& v, uint16_t x) {
  v.push_back((uint8_t)(x & 0xff));
  v.push_back((uint8_t)((x >> 8) & 0xff));
}

}  // namespace

Waveform parse_wav(const std::vector<uint8_t>& bytes, const std::string& origin) {
  auto fail = [&origin](const std::string& msg) -> Waveform {
    throw std::runtime_error(origin + ": " + msg);
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    return fail("not a RIFF/WAVE file");

  bool have_fmt = false;
  uint16_t audio_format = 0, channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  const uint8_t* data_ptr = nullptr;
  uint32_t data_len = 0;

  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const uint8_t* ch = bytes.data() + pos;
    uint32_t chunk_len = rd_u32(ch + 4);
    const uint8_t* body = ch + 8;
    if (pos + 8 + chunk_len > bytes.size()) return fail("truncated chunk");
    if (std::memcmp(ch, "fmt ", 4) == 0) {
      if (chunk_len < 16) return fail("short fmt chunk");
      audio_format = rd_u16(body);
      channels = rd_u16(body + 2);
      sample_rate = rd_u32(body + 4);
      bits = rd_u16(body + 14);
      have_fmt = true;
    } else if (std::memcmp(ch, "data", 4) == 0) {
      data_ptr = body;
      data_len = chunk_len;
    }
    // unknown chunks skipped; chunks are word-aligned
    pos += 8 + chunk_len + (chunk_len & 1);
  }
  if (!have_fmt || !data_ptr) return fail("missing fmt or data chunk");
  if (audio_format != 1 || bits != 16)
    return fail("unsupported encoding (only PCM 16-bit is supported)");
  if (channels == 0) return fail("zero channels");

  long frames = (long)(data_len / (2u * channels));
  Waveform w;
  w.sample_rate = (int)sample_rate;
  w.samples.resize((size_t)frames);
  for (long i = 0; i < frames; ++i) {
    double acc = 0;
    for (uint16_t c = 0; c < channels; ++c) {
      const uint8_t* p = data_ptr + (i * channels + c) * 2;
      int16_t s = (int16_t)rd_u16(p);
      acc += (double)s / 32768.0;
    }
    w.samples[(size_t)i] = (float)(acc / channels);
  }
  return w;
}

Waveform load_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path + ": cannot open");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  return parse_wav(bytes, path);
}

std::vector<uint8_t> encode_wav(const Waveform& w) {
  for (float s : w.samples)
    if (!std::isfinite(s)) throw std::invalid_argument("encode_wav: non-finite sample");
  std::vector<uint8_t> out;
  uint32_t data_len = (uint32_t)(w.samples.size() * 2);
  out.reserve(44 + data_len);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  wr_u32(out, 36 + data_len);
  out.insert(out.end(), {'W', 'A', 'V', 'E'});
  out.insert(out.end(), {'f', 'm', 't', ' '});
  wr_u32(out, 16);
  wr_u16(out, 1);  // PCM
  wr_u16(out, 1);  // mono
  wr_u32(out, (uint32_t)w.sample_rate);
  wr_u32(out, (uint32_t)w.sample_rate * 2);
  wr_u16(out, 2);
  wr_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  wr_u32(out, data_len);
  for (float s : w.samples) {
    double q = std::round((double)s * 32767.0);
    q = std::min(std::max(q, -32768.0), 32767.0);
    wr_u16(out, (uint16_t)(int16_t)q);
  }
  return out;
}

void save_wav(const Waveform& w, const std::string& path) {
  auto bytes = encode_wav(w);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path + ": cannot open for writing");
  f.write((const char*)bytes.data(), (std::streamsize)bytes.size());
  if (!f) throw std::runtime_error(path + ": write failed");
}

Dataset make_dataset(const std::string& dir, long slice_len, PadPolicy pad_policy) {
  namespace fs = std::filesystem;
  if (slice_len <= 0) throw std::invalid_argument("make_dataset: slice_len must be positive");
  std::vector<std::string> paths;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".wav") paths.push_back(e.path().string());
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw std::runtime_error(dir + ": no WAV files found");

  Dataset d;
  d.length = slice_len;
  bool first = true;
  for (const auto& p : paths) {
    Waveform w = load_wav(p);
    if (first) {
      d.sample_rate = w.sample_rate;
      first = false;
    } else if (w.sample_rate != d.sample_rate) {
      throw std::runtime_error(p + ": sample rate " + std::to_string(w.sample_rate) +
                               " differs from dataset rate " + std::to_string(d.sample_rate));
    }
    long total = w.length();
    for (long off = 0; off < total; off += slice_len) {
      long avail = std::min(slice_len, total - off);
      if (avail < slice_len && pad_policy == PadPolicy::Discard) break;
      Waveform slice;
      slice.sample_rate = w.sample_rate;
      slice.samples.assign(w.samples.begin() + off, w.samples.begin() + off + avail);
      slice.samples.resize((size_t)slice_len, 0.0f);
      d.examples.push_back(std::move(slice));
      d.manifest.push_back({p, off});
    }
  }
  return d;
}

Dataset synth_toy_dataset(int n_classes, int per_class, uint64_t seed, long length,
                          int sample_rate) {
  if (n_classes < 1 || n_classes > 10)
    throw std::invalid_argument("synth_toy_dataset: n_classes must be in [1,10]");
  if (per_class < 1) throw std::invalid_argument("synth_toy_dataset: per_class must be positive");
  std::mt19937_64 rng(seed);
  // Small phase jitter only: every example of a class is a slight perturbation
  // of the same canonical waveform, so class identity is carried by the
  // waveform itself, not just its spectrum.
  std::uniform_real_distribution<double> phase_dist(-0.25, 0.25);
  std::uniform_real_distribution<double> amp_dist(0.55, 0.75);

  Dataset d;
  d.sample_rate = sample_rate;
  d.length = length;
  for (int k = 0; k < n_classes; ++k) {
    const double freq = 400.0 * (k + 1);
    for (int j = 0; j < per_class; ++j) {
      double phase = phase_dist(rng);
      double amp = amp_dist(rng);
      Waveform w;
      w.sample_rate = sample_rate;
      w.samples.resize((size_t)length);
      for (long t = 0; t < length; ++t) {
        // Hann envelope over the full slice.
        double win = 0.5 - 0.5 * std::cos(2.0 * M_PI * t / (double)(length - 1));
        w.samples[(size_t)t] =
            (float)(amp * win * std::sin(2.0 * M_PI * freq * t / sample_rate + phase));
      }
      d.examples.push_back(std::move(w));
      d.labels.push_back(k);
      d.manifest.push_back({"toy:class" + std::to_string(k), j});
    }
  }
  return d;
}

}  // namespace wavegen
