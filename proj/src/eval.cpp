#include "wavegen/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "wavegen/generate.hpp"
#include "wavegen/train.hpp"

namespace wavegen {

namespace {

MelFrontend raw_frontend(const MelFrontend& fe) {
  // Identity statistics: mel_project then returns the raw log-mel values.
  MelFrontend raw = fe;
  raw.stats.mean.assign((size_t)fe.n_mels, 0.0);
  raw.stats.std.assign((size_t)fe.n_mels, 1.0);
  return raw;
}

/// Flattened standardized feature vector of one waveform.
std::vector<double> feature_vector(const Waveform& w, const MelFrontend& fe) {
  Grid g = mel_features(w, fe);
  return std::move(g.values);
}

std::vector<std::vector<double>> feature_matrix(const std::vector<Waveform>& ws,
                                                const MelFrontend& fe) {
  std::vector<std::vector<double>> out;
  out.reserve(ws.size());
  for (const auto& w : ws) out.push_back(feature_vector(w, fe));
  return out;
}

std::vector<size_t> subsample_indices(size_t n, long k, std::mt19937_64& rng) {
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), (size_t)0);
  std::shuffle(idx.begin(), idx.end(), rng);
  if ((long)idx.size() > k) idx.resize((size_t)k);
  return idx;
}

double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double nn_dist_self_features(const std::vector<std::vector<double>>& feats, long k,
                             std::mt19937_64& rng) {
  if (feats.size() < 2)
    throw std::invalid_argument("nn_dist_self: need at least 2 examples");
  auto idx = subsample_indices(feats.size(), k, rng);
  double total = 0;
  for (size_t i = 0; i < idx.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < idx.size(); ++j) {
      if (i == j) continue;
      best = std::min(best, euclidean(feats[idx[i]], feats[idx[j]]));
    }
    total += best;
  }
  return total / (double)idx.size();
}

double nn_dist_train_features(const std::vector<std::vector<double>>& set_feats,
                              const std::vector<std::vector<double>>& train_feats, long k,
                              std::mt19937_64& rng) {
  if (set_feats.empty() || train_feats.empty())
    throw std::invalid_argument("nn_dist_train: empty input");
  auto idx = subsample_indices(set_feats.size(), k, rng);
  double total = 0;
  for (size_t i : idx) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& t : train_feats) best = std::min(best, euclidean(set_feats[i], t));
    total += best;
  }
  return total / (double)idx.size();
}

/// Feature tensors [n, frames, n_mels, 1] for a list of waveforms.
Tensor<float> feature_batch(const std::vector<Waveform>& ws, const MelFrontend& fe) {
  Grid first = mel_features(ws[0], fe);
  Tensor<float> out(Shape{(long)ws.size(), first.frames, first.bins, 1});
  const size_t per = first.values.size();
  for (size_t i = 0; i < ws.size(); ++i) {
    Grid g = i == 0 ? std::move(first) : mel_features(ws[i], fe);
    for (size_t j = 0; j < per; ++j) out.data[i * per + j] = (float)g.values[j];
  }
  return out;
}

std::vector<float> softmax_rows(const Tensor<float>& logits) {
  const long n = logits.dim(0), k = logits.dim(1);
  std::vector<float> probs((size_t)(n * k));
  for (long e = 0; e < n; ++e) {
    const float* row = logits.data.data() + e * k;
    double mx = row[0];
    for (long i = 1; i < k; ++i) mx = std::max(mx, (double)row[i]);
    double sum = 0;
    for (long i = 0; i < k; ++i) sum += std::exp((double)row[i] - mx);
    for (long i = 0; i < k; ++i)
      probs[(size_t)(e * k + i)] = (float)(std::exp((double)row[i] - mx) / sum);
  }
  return probs;
}

}  // namespace

MelStats fit_mel_stats(const Dataset& d, const MelFrontend& fe) {
  if (d.size() == 0) throw std::invalid_argument("fit_mel_stats: empty dataset");
  MelFrontend raw = raw_frontend(fe);
  std::vector<double> sum((size_t)fe.n_mels, 0.0), sumsq((size_t)fe.n_mels, 0.0);
  long frames = 0;
  for (const auto& w : d.examples) {
    Grid g = mel_features(w, raw);
    frames += g.frames;
    for (long f = 0; f < g.frames; ++f)
      for (long b = 0; b < g.bins; ++b) {
        double v = g.at(f, b);
        sum[(size_t)b] += v;
        sumsq[(size_t)b] += v * v;
      }
  }
  MelStats st;
  st.mean.resize((size_t)fe.n_mels);
  st.std.resize((size_t)fe.n_mels);
  for (long b = 0; b < fe.n_mels; ++b) {
    double m = sum[(size_t)b] / (double)frames;
    double var = std::max(0.0, sumsq[(size_t)b] / (double)frames - m * m);
    st.mean[(size_t)b] = m;
    st.std[(size_t)b] = std::max(std::sqrt(var), kStdEps);
  }
  return st;
}

Grid mel_features(const Waveform& w, const MelFrontend& fe) {
  if ((long)fe.stats.mean.size() != fe.n_mels || (long)fe.stats.std.size() != fe.n_mels)
    throw std::invalid_argument("mel_features: frontend statistics not fitted");
  Grid mag = magnitude(stft(w, fe.win_len, fe.hop));
  return mel_project(mag, fe.n_mels, fe.f_lo, fe.f_hi, fe.sample_rate, fe.win_len, &fe.stats);
}

Model<float> build_classifier_net(long n_classes, std::mt19937_64& rng) {
  if (n_classes < 2) throw std::invalid_argument("classifier needs at least 2 classes");
  Model<float> m;
  const long widths[5] = {1, 32, 64, 128, 256};
  ConvDims2D cd{3, 3, 1, 1, 1, 1, 1, 1};  // 3x3, stride 1, same padding
  for (int i = 0; i < 4; ++i) {
    auto name = "conv" + std::to_string(i);
    auto K = detail::init_weight(m, name + ".K", {3, 3, widths[i], widths[i + 1]}, rng);
    auto b = detail::init_zero(m, name + ".b", {widths[i + 1]});
    m.layers.push_back([K, b, cd](const NodeRef<float>& x, ForwardCtx&) {
      return add_lastvec(conv2d_raw(x, K, cd), b);
    });
    m.layers.push_back([](const NodeRef<float>& x, ForwardCtx&) { return relu(x); });
    m.layers.push_back([](const NodeRef<float>& x, ForwardCtx&) { return maxpool2x2(x); });
  }
  m.layers.push_back([](const NodeRef<float>& x, ForwardCtx&) {
    return reshape(x, {x->value.dim(0), x->value.dim(1) * x->value.dim(2) * x->value.dim(3)});
  });
  auto W = detail::init_weight(m, "dense.W", {8 * 8 * 256, n_classes}, rng);
  auto b = detail::init_zero(m, "dense.b", {n_classes});
  m.layers.push_back(
      [W, b](const NodeRef<float>& x, ForwardCtx&) { return dense(x, W, b); });
  return m;
}

Classifier train_classifier(const Dataset& train, const Dataset& valid,
                            const ClassifierConfig& cfg) {
  if (!train.has_labels() || !valid.has_labels())
    throw std::invalid_argument("train_classifier: labeled datasets required");
  if (train.size() == 0 || valid.size() == 0)
    throw std::invalid_argument("train_classifier: empty dataset");
  int max_label = 0;
  for (int l : train.labels) max_label = std::max(max_label, l);
  const long n_classes = max_label + 1;
  std::vector<char> seen((size_t)n_classes, 0);
  for (int l : train.labels) seen[(size_t)l] = 1;
  if (std::count(seen.begin(), seen.end(), (char)1) < 2)
    throw std::invalid_argument("train_classifier: need at least 2 classes");
  for (int l : valid.labels)
    if (l < 0 || l >= n_classes)
      throw std::invalid_argument("train_classifier: validation label outside training classes");

  Classifier clf;
  clf.n_classes = n_classes;
  clf.frontend.sample_rate = train.sample_rate;
  clf.frontend.stats = fit_mel_stats(train, clf.frontend);

  std::mt19937_64 rng(cfg.seed);
  clf.net = build_classifier_net(n_classes, rng);

  Tensor<float> train_x = feature_batch(train.examples, clf.frontend);
  Tensor<float> valid_x = feature_batch(valid.examples, clf.frontend);
  const long n = train_x.dim(0);
  const size_t per = (size_t)(train_x.size() / n);

  auto params = clf.net.param_nodes();
  auto st = AdamState<float>::init(params);

  auto valid_nll = [&]() {
    ForwardCtx ctx;
    auto logits = clf.net.forward(constant(valid_x), ctx);
    return (double)softmax_xent(logits, valid.labels)->value.data[0];
  };

  double best_nll = std::numeric_limits<double>::infinity();
  std::vector<Tensor<float>> best_params;
  for (const auto& p : params) best_params.push_back(p->value);
  long stale = 0;

  std::vector<long> order(train.labels.size());
  std::iota(order.begin(), order.end(), 0L);
  for (long epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (long start = 0; start < n; start += cfg.batch_size) {
      const long b = std::min(cfg.batch_size, n - start);
      Tensor<float> bx(Shape{b, train_x.dim(1), train_x.dim(2), 1});
      std::vector<int> by((size_t)b);
      for (long i = 0; i < b; ++i) {
        long src = order[(size_t)(start + i)];
        std::copy(train_x.data.begin() + (size_t)src * per,
                  train_x.data.begin() + ((size_t)src + 1) * per,
                  bx.data.begin() + (size_t)i * per);
        by[(size_t)i] = train.labels[(size_t)src];
      }
      ForwardCtx ctx;
      auto loss = softmax_xent(clf.net.forward(constant(std::move(bx)), ctx), by);
      auto gm = grad(loss, params);
      std::vector<Tensor<float>> grads;
      for (const auto& p : params) grads.push_back(gm.at(p)->value);
      adam_step(params, grads, st, cfg.adam);
    }
    const double nll = valid_nll();
    if (nll < best_nll) {
      best_nll = nll;
      for (size_t i = 0; i < params.size(); ++i) best_params[i] = params[i]->value;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  for (size_t i = 0; i < params.size(); ++i) params[i]->value = best_params[i];
  return clf;
}

Tensor<float> classify(const Classifier& c, const std::vector<Waveform>& batch) {
  if (batch.empty()) throw std::invalid_argument("classify: empty batch");
  Tensor<float> probs(Shape{(long)batch.size(), c.n_classes});
  const long chunk = 64;
  for (size_t start = 0; start < batch.size(); start += (size_t)chunk) {
    std::vector<Waveform> part(batch.begin() + (long)start,
                               batch.begin() + (long)std::min(batch.size(), start + chunk));
    ForwardCtx ctx;
    auto logits = c.net.forward(constant(feature_batch(part, c.frontend)), ctx);
    auto p = softmax_rows(logits->value);
    std::copy(p.begin(), p.end(), probs.data.begin() + start * (size_t)c.n_classes);
  }
  return probs;
}

double classifier_accuracy(const Classifier& c, const Dataset& d) {
  if (!d.has_labels()) throw std::invalid_argument("classifier_accuracy: unlabeled dataset");
  Tensor<float> probs = classify(c, d.examples);
  long correct = 0;
  for (long e = 0; e < probs.dim(0); ++e) {
    const float* row = probs.data.data() + e * c.n_classes;
    long arg = (long)(std::max_element(row, row + c.n_classes) - row);
    if (arg == d.labels[(size_t)e]) ++correct;
  }
  return (double)correct / (double)probs.dim(0);
}

void save_classifier(const std::string& path, const Classifier& c) {
  Checkpoint ck;
  nlohmann::ordered_json fe;
  fe["win_len"] = c.frontend.win_len;
  fe["hop"] = c.frontend.hop;
  fe["n_mels"] = c.frontend.n_mels;
  fe["f_lo"] = c.frontend.f_lo;
  fe["f_hi"] = c.frontend.f_hi;
  fe["sample_rate"] = c.frontend.sample_rate;
  fe["mean"] = c.frontend.stats.mean;
  fe["std"] = c.frontend.stats.std;
  ck.meta["classifier"] = {{"n_classes", c.n_classes}, {"frontend", fe}};
  append_model_tensors(ck, c.net, "clf.");
  save_checkpoint(path, ck);
}

Classifier load_classifier(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  if (!ck.meta.contains("classifier"))
    throw std::runtime_error("not a classifier checkpoint: " + path);
  const auto& j = ck.meta["classifier"];
  Classifier c;
  c.n_classes = j.at("n_classes").get<long>();
  const auto& fe = j.at("frontend");
  c.frontend.win_len = fe.at("win_len").get<long>();
  c.frontend.hop = fe.at("hop").get<long>();
  c.frontend.n_mels = fe.at("n_mels").get<long>();
  c.frontend.f_lo = fe.at("f_lo").get<double>();
  c.frontend.f_hi = fe.at("f_hi").get<double>();
  c.frontend.sample_rate = fe.at("sample_rate").get<int>();
  c.frontend.stats.mean = fe.at("mean").get<std::vector<double>>();
  c.frontend.stats.std = fe.at("std").get<std::vector<double>>();
  std::mt19937_64 rng(0);
  c.net = build_classifier_net(c.n_classes, rng);
  load_model_tensors(ck, c.net, "clf.");
  return c;
}

ScoreStats inception_score(const Tensor<float>& probs, long splits) {
  if (probs.rank() != 2) throw std::invalid_argument("inception_score: expected [N,k] rows");
  const long n = probs.dim(0), k = probs.dim(1);
  if (splits < 1 || n < splits || n % splits != 0)
    throw std::invalid_argument("inception_score: N must be a positive multiple of splits");
  for (long e = 0; e < n; ++e) {
    double sum = 0;
    for (long i = 0; i < k; ++i) {
      double p = probs.data[(size_t)(e * k + i)];
      if (p < 0) throw std::invalid_argument("inception_score: negative probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-4)
      throw std::invalid_argument("inception_score: probability row does not sum to 1");
  }

  const long per = n / splits;
  std::vector<double> scores;
  for (long s = 0; s < splits; ++s) {
    std::vector<double> marginal((size_t)k, 0.0);
    for (long e = s * per; e < (s + 1) * per; ++e)
      for (long i = 0; i < k; ++i) marginal[(size_t)i] += probs.data[(size_t)(e * k + i)];
    for (auto& q : marginal) q /= (double)per;
    double kl = 0;
    for (long e = s * per; e < (s + 1) * per; ++e)
      for (long i = 0; i < k; ++i) {
        double p = probs.data[(size_t)(e * k + i)];
        if (p > 0) kl += p * std::log(p / marginal[(size_t)i]);
      }
    scores.push_back(std::exp(kl / (double)per));
  }
  ScoreStats out;
  for (double s : scores) out.mean += s;
  out.mean /= (double)splits;
  double var = 0;
  for (double s : scores) var += (s - out.mean) * (s - out.mean);
  out.std = std::sqrt(var / (double)splits);
  return out;
}

double nn_dist_self(const Dataset& set, const MelFrontend& fe, long k_examples,
                    std::mt19937_64& rng) {
  auto feats = feature_matrix(set.examples, fe);
  return nn_dist_self_features(feats, k_examples, rng);
}

double nn_dist_train(const Dataset& set, const Dataset& train, const MelFrontend& fe,
                     long k_examples, std::mt19937_64& rng) {
  auto sf = feature_matrix(set.examples, fe);
  auto tf = feature_matrix(train.examples, fe);
  return nn_dist_train_features(sf, tf, k_examples, rng);
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["inception_score"] = {{"mean", inception_mean}, {"std", inception_std}};
  j["d_self"] = d_self;
  j["d_train"] = d_train;
  j["d_self_rel"] = d_self_rel;
  j["d_train_rel"] = d_train_rel;
  j["n_samples"] = n_samples;
  return j.dump();
}

EvalReport evaluate_samples(const std::vector<Waveform>& gen, const Classifier& clf,
                            const Dataset& real_train, const Dataset& real_test,
                            uint64_t seed, long k_examples, long splits) {
  if (gen.empty()) throw std::invalid_argument("evaluate_samples: no generated samples");
  EvalReport rep;
  rep.n_samples = (long)gen.size();
  auto stats = inception_score(classify(clf, gen), splits);
  rep.inception_mean = stats.mean;
  rep.inception_std = stats.std;

  auto gen_feats = feature_matrix(gen, clf.frontend);
  auto train_feats = feature_matrix(real_train.examples, clf.frontend);
  auto test_feats = feature_matrix(real_test.examples, clf.frontend);

  std::mt19937_64 rng(seed);
  rep.d_self = nn_dist_self_features(gen_feats, k_examples, rng);
  rep.d_train = nn_dist_train_features(gen_feats, train_feats, k_examples, rng);
  const double test_self = nn_dist_self_features(test_feats, k_examples, rng);
  const double test_train = nn_dist_train_features(test_feats, train_feats, k_examples, rng);
  rep.d_self_rel = test_self > 0 ? rep.d_self / test_self : 0.0;
  rep.d_train_rel = test_train > 0 ? rep.d_train / test_train : 0.0;
  return rep;
}

EvalReport evaluate(const Checkpoint& ckpt, const Classifier& clf, const Dataset& real_train,
                    const Dataset& real_test, long n_gen, uint64_t seed) {
  if (clf.n_classes != 10)
    throw std::invalid_argument("evaluate: classifier must have 10 classes");
  if (n_gen < 1) throw std::invalid_argument("evaluate: n_gen must be >= 1");
  LoadedGenerator lg = load_generator(ckpt);
  auto zs = latent_vectors(n_gen, lg.g.spec.latent_dim, seed);
  return evaluate_samples(generate(lg, zs), clf, real_train, real_test, seed);
}

}  // namespace wavegen
