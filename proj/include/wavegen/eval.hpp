#ifndef WAVEGEN_EVAL_HPP
#define WAVEGEN_EVAL_HPP

#include <random>
#include <string>
#include <vector>

#include "wavegen/checkpoint.hpp"
#include "wavegen/dsp.hpp"
#include "wavegen/optim.hpp"

namespace wavegen {

/// Mel-spectrogram front-end shared by the classifier and the
/// nearest-neighbor feature space: 64 ms windows (1024 samples), 8 ms hop
/// (128 samples), 128 mel bins spanning 40-7800 Hz, log magnitudes
/// standardized per bin against dataset statistics.
struct MelFrontend {
  long win_len = 1024;
  long hop = 128;
  long n_mels = 128;
  double f_lo = 40.0;
  double f_hi = 7800.0;
  int sample_rate = 16000;
  MelStats stats;  // per-bin mean/std of the raw log-mel values
};

/// Per-bin statistics of the raw (unstandardized) log-mel grid over `d`.
MelStats fit_mel_stats(const Dataset& d, const MelFrontend& fe);

/// Standardized log-mel feature grid [frames, n_mels] for one waveform.
Grid mel_features(const Waveform& w, const MelFrontend& fe);

/// Mel front-end, four conv(3x3, stride 1, same) + ReLU + maxpool(2x2)
/// blocks of widths 32/64/128/256, and a dense softmax head.
struct Classifier {
  MelFrontend frontend;
  long n_classes = 10;
  Model<float> net;  // [n, frames, n_mels, 1] -> [n, n_classes] logits
};

Model<float> build_classifier_net(long n_classes, std::mt19937_64& rng);

struct ClassifierConfig {
  long batch_size = 32;
  AdamConfig adam{1e-3, 0.9, 0.999, 1e-8};
  long max_epochs = 20;
  long patience = 3;  // epochs without validation-NLL improvement before stopping
  uint64_t seed = 0;
};

/// Cross-entropy training with Adam; early-stops on the minimum validation
/// negative log-likelihood and returns the best-validation parameters.
Classifier train_classifier(const Dataset& train, const Dataset& valid,
                            const ClassifierConfig& cfg = {});

/// Probability rows [n, n_classes] (each sums to 1).
Tensor<float> classify(const Classifier& c, const std::vector<Waveform>& batch);

double classifier_accuracy(const Classifier& c, const Dataset& d);

void save_classifier(const std::string& path, const Classifier& c);
Classifier load_classifier(const std::string& path);

struct ScoreStats {
  double mean = 0;
  double std = 0;
};

/// exp(E_x KL(P(y|x) || P(y))) per split; mean and standard deviation across
/// `splits` equal splits of the rows.
ScoreStats inception_score(const Tensor<float>& probs, long splits = 10);

/// Mean distance from each of `k_examples` subsampled examples to its
/// nearest other subsampled example, in the classifier's mel feature space.
double nn_dist_self(const Dataset& set, const MelFrontend& fe, long k_examples,
                    std::mt19937_64& rng);

/// Mean distance from each of `k_examples` subsampled set-examples to its
/// nearest training example.
double nn_dist_train(const Dataset& set, const Dataset& train, const MelFrontend& fe,
                     long k_examples, std::mt19937_64& rng);

struct EvalReport {
  double inception_mean = 0, inception_std = 0;
  double d_self = 0, d_train = 0;
  double d_self_rel = 0, d_train_rel = 0;
  long n_samples = 0;

  std::string to_json() const;
};

/// Score already-generated samples against the real train/test sets.
EvalReport evaluate_samples(const std::vector<Waveform>& gen, const Classifier& clf,
                            const Dataset& real_train, const Dataset& real_test,
                            uint64_t seed = 0, long k_examples = 1000, long splits = 10);

/// Generate n_gen samples from the checkpoint and score them.
EvalReport evaluate(const Checkpoint& ckpt, const Classifier& clf, const Dataset& real_train,
                    const Dataset& real_test, long n_gen = 50000, uint64_t seed = 0);

}  // namespace wavegen

#endif
