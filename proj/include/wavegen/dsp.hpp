#ifndef WAVEGEN_DSP_HPP
#define WAVEGEN_DSP_HPP

#include <complex>
#include <optional>
#include <vector>

#include "wavegen/audio_io.hpp"

namespace wavegen {

constexpr double kLogEps = 1e-6;      // floor inside log(magnitude + eps)
constexpr double kStdEps = 1e-8;      // floor for per-bin standard deviation
constexpr long kSpecWin = 256;        // 16 ms at 16 kHz
constexpr long kSpecHop = 128;        // 8 ms at 16 kHz

/// STFT output; bins = win_len/2 + 1, frames = ceil(length/hop).
struct ComplexSpectrogram {
  long frames = 0;
  long bins = 0;
  std::vector<std::complex<double>> values;  // [frames][bins]
  long win_len = 0, hop = 0;
  int sample_rate = 16000;

  std::complex<double>& at(long f, long b) { return values[(size_t)(f * bins + b)]; }
  const std::complex<double>& at(long f, long b) const { return values[(size_t)(f * bins + b)]; }
};

/// Real-valued grid [frames][bins] (magnitudes, log-magnitudes, mel, ...).
struct Grid {
  long frames = 0;
  long bins = 0;
  std::vector<double> values;

  Grid() = default;
  Grid(long f, long b) : frames(f), bins(b), values((size_t)(f * b), 0.0) {}
  double& at(long f, long b) { return values[(size_t)(f * bins + b)]; }
  double at(long f, long b) const { return values[(size_t)(f * bins + b)]; }
};

/// Per-bin dataset statistics of the log-magnitude spectrogram. The Nyquist
/// bin is dropped for training; its mean is kept for resynthesis.
struct BinStats {
  long win_len = kSpecWin;
  long hop = kSpecHop;
  int sample_rate = 16000;
  double eps = kLogEps;
  std::vector<double> mean;  // bins 0..win/2-1
  std::vector<double> std;
  double nyquist_mean = 0;

  long bins() const { return (long)mean.size(); }
};

/// 128x128 grid in [-1, 1] (frames x bins for the default configuration).
struct NormalizedSpectrogram {
  long frames = 0;
  long bins = 0;
  std::vector<float> grid;  // [frames][bins]

  float at(long f, long b) const { return grid[(size_t)(f * bins + b)]; }
};

ComplexSpectrogram stft(const Waveform& w, long win_len = kSpecWin, long hop = kSpecHop);

Grid magnitude(const ComplexSpectrogram& s);

BinStats fit_bin_stats(const Dataset& d, long win_len = kSpecWin, long hop = kSpecHop);

NormalizedSpectrogram spec_preprocess(const Waveform& w, const BinStats& s);

/// Phase estimation from a linear-amplitude magnitude grid (full bins,
/// win/2+1). Output truncated/padded to out_len samples.
Waveform griffin_lim(const Grid& mag, int iters, uint64_t seed, long win_len = kSpecWin,
                     long hop = kSpecHop, long out_len = 16384, int sample_rate = 16000,
                     std::vector<double>* objective_trace = nullptr);

Waveform spec_invert(const NormalizedSpectrogram& n, const BinStats& s, int iters = 16,
                     uint64_t seed = 0);

/// Triangular mel filterbank rows [n_mels][n_bins]; centers equally spaced in
/// mel(f) = 2595*log10(1 + f/700) between f_lo and f_hi.
std::vector<std::vector<double>> mel_filterbank(long n_mels, long n_bins, double f_lo,
                                                double f_hi, int sample_rate, long win_len);

/// Log mel spectrogram; standardized per bin against `stats` when given,
/// otherwise against the grid's own per-bin statistics.
struct MelStats {
  std::vector<double> mean, std;
};
Grid mel_project(const Grid& mag, long n_mels, double f_lo, double f_hi, int sample_rate,
                 long win_len, const MelStats* stats = nullptr);

struct PcaResult {
  std::vector<std::vector<double>> components;  // [k][slice_len], unit norm
  std::vector<double> eigenvalues;              // descending
};

/// PCA of seeded random windows drawn from the dataset.
PcaResult pca_slices(const Dataset& d, long slice_len, long k, uint64_t seed,
                     long n_slices = 4096);

/// Magnitudes of the real FFT of x: length n/2+1 for even n.
std::vector<double> fft_magnitude(const std::vector<double>& x);

// JSON (de)serialization of BinStats per the published schema.
std::string bin_stats_to_json(const BinStats& s);
BinStats bin_stats_from_json(const std::string& json_text);

}  // namespace wavegen

#endif
