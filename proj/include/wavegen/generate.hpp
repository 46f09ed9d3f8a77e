#ifndef WAVEGEN_GENERATE_HPP
#define WAVEGEN_GENERATE_HPP

#include <optional>
#include <vector>

#include "wavegen/checkpoint.hpp"
#include "wavegen/dsp.hpp"

namespace wavegen {

/// Generator restored from a checkpoint, ready for inference.
struct LoadedGenerator {
  Model<float> g;
  std::optional<BinStats> bin_stats;  // required for spectrogram generators
  long iteration = 0;
  int sample_rate = 16000;
};

LoadedGenerator load_generator(const Checkpoint& ck);

/// Batch-forward the latent vectors and return one 16384-sample waveform per
/// z. Waveform generators emit audio directly; spectrogram generators are
/// inverted through the checkpoint's stored per-bin statistics (16
/// phase-estimation iterations, fixed seed). Deterministic in z.
std::vector<Waveform> generate(const LoadedGenerator& lg,
                               const std::vector<std::vector<float>>& zs,
                               long max_batch = 64);

/// `count` seeded Uniform(-1,1) latent vectors of dimension `dim`.
std::vector<std::vector<float>> latent_vectors(long count, long dim, uint64_t seed);

}  // namespace wavegen

#endif
