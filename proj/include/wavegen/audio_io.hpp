#ifndef WAVEGEN_AUDIO_IO_HPP
#define WAVEGEN_AUDIO_IO_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace wavegen {

/// Fixed-rate mono audio slice in [-1, 1].
struct Waveform {
  std::vector<float> samples;
  int sample_rate = 16000;

  long length() const { return (long)samples.size(); }
};

struct SliceOrigin {
  std::string path;
  long offset = 0;
};

/// Ordered collection of equal-length waveforms, optionally labeled.
/// Immutable after construction; safe to share across readers.
struct Dataset {
  std::vector<Waveform> examples;
  std::vector<int> labels;  // empty, or one per example
  std::vector<SliceOrigin> manifest;
  int sample_rate = 16000;
  long length = 0;  // samples per example

  bool has_labels() const { return !labels.empty(); }
  long size() const { return (long)examples.size(); }
};

enum class PadPolicy { ZeroPad, Discard };

/// RIFF/WAVE PCM-16 little-endian reader. Multichannel input is averaged to
/// mono; int16 v maps to v/32768.
Waveform load_wav(const std::string& path);
Waveform parse_wav(const std::vector<uint8_t>& bytes, const std::string& origin = "<memory>");

/// PCM-16 mono writer; float f maps to clamp(round(f*32767), -32768, 32767).
void save_wav(const Waveform& w, const std::string& path);
std::vector<uint8_t> encode_wav(const Waveform& w);

/// Slice every WAV under `dir` (non-recursive, sorted by path) into
/// non-overlapping windows of `slice_len` samples.
Dataset make_dataset(const std::string& dir, long slice_len, PadPolicy pad_policy);

/// Labeled toy dataset: class k is a Hann-windowed sinusoid at 400*(k+1) Hz
/// with seeded phase and amplitude jitter. Deterministic for a fixed seed.
Dataset synth_toy_dataset(int n_classes, int per_class, uint64_t seed, long length = 16384,
                          int sample_rate = 16000);

}  // namespace wavegen

#endif
