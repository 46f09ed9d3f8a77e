#ifndef WAVEGEN_TRAIN_HPP
#define WAVEGEN_TRAIN_HPP

#include <functional>
#include <random>
#include <string>

#include "wavegen/audio_io.hpp"
#include "wavegen/models.hpp"
#include "wavegen/optim.hpp"

namespace wavegen {

struct TrainConfig {
  long batch_size = 64;
  double lambda = 10.0;  // gradient-penalty weight
  long n_critic = 5;     // critic updates per generator update
  AdamConfig adam;       // alpha 1e-4, beta1 0.5, beta2 0.9
  long max_iters = 200000;
  long eval_every = 0;  // 0: no periodic eval; checkpoints written at the end
  long log_every = 10;
  uint64_t seed = 0;
  ModelSpec g_spec, d_spec;
};

struct TrainResult {
  long iterations = 0;
  double best_score = 0;  // NaN-free only when an eval hook ran
  bool has_best = false;
  std::string latest_path, best_path, metrics_path;
};

/// Periodic evaluation callback: scores the current generator (higher is
/// better). Drives best-checkpoint retention and the inception_score field of
/// the metrics log.
using EvalHook = std::function<double(const Model<float>& g, std::mt19937_64& rng)>;

/// [n, dim] i.i.d. Uniform(-1, 1) latent batch.
template <typename Rng>
Tensor<float> sample_latent(long n, long dim, Rng& rng) {
  if (n < 1 || dim < 1) throw std::invalid_argument("sample_latent: n and dim must be >= 1");
  return random_uniform<float>({n, dim}, -1.0f, 1.0f, rng);
}

template <typename T>
struct CriticLossNodes {
  NodeRef<T> total;        // wasserstein + penalty, scalar
  NodeRef<T> wasserstein;  // mean(D(fake)) - mean(D(real))
  NodeRef<T> penalty;      // lambda * mean((||grad_xhat D(xhat)|| - 1)^2)
};

/// WGAN-GP critic objective. The interpolate xhat = eps*real + (1-eps)*fake
/// uses one eps ~ U(0,1) per example; each of the three critic evaluations
/// takes fresh stochastic-layer draws from `rng`. Skips the penalty graph
/// entirely at lambda == 0.
template <typename T>
CriticLossNodes<T> critic_loss(const Model<T>& D, const NodeRef<T>& x_real,
                               const NodeRef<T>& x_fake, T lambda, std::mt19937_64& rng,
                               bool training = true) {
  if (x_real->value.shape != x_fake->value.shape)
    throw std::invalid_argument("critic_loss: real/fake batch shape mismatch");
  ForwardCtx ctx{&rng, training};
  auto d_real = D.forward(x_real, ctx);
  auto d_fake = D.forward(x_fake, ctx);
  auto w = sub(mean_all(d_fake), mean_all(d_real));
  if (lambda == T(0)) return {w, w, constant(Tensor<T>::scalar(T(0)))};

  const Tensor<T>& xr = x_real->value;
  const Tensor<T>& xf = x_fake->value;
  const long n = xr.dim(0);
  const long per = xr.size() / n;
  Tensor<T> xh(xr.shape);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (long i = 0; i < n; ++i) {
    const T eps = (T)u01(rng);
    for (long j = 0; j < per; ++j) {
      const size_t idx = (size_t)(i * per + j);
      xh.data[idx] = eps * xr.data[idx] + (T(1) - eps) * xf.data[idx];
    }
  }
  auto xhat = leaf(std::move(xh));  // differentiation target for the penalty
  auto d_hat = D.forward(xhat, ctx);
  auto gx = grad(sum_all(d_hat), {xhat}).at(xhat);
  auto norm = sqrt_(add_scalar(sum_per_example(square(gx)), T(1e-12)));
  auto pen = scale(mean_all(square(add_scalar(norm, T(-1)))), lambda);
  return {add(w, pen), w, pen};
}

/// Generator objective -mean(D(x_fake)); gradients flow through x_fake into G.
template <typename T>
NodeRef<T> generator_loss(const Model<T>& D, const NodeRef<T>& x_fake, std::mt19937_64& rng,
                          bool training = true) {
  ForwardCtx ctx{&rng, training};
  return neg(mean_all(D.forward(x_fake, ctx)));
}

/// Full WGAN-GP loop: n_critic critic steps (fresh real minibatch sampled
/// uniformly with replacement + fresh latents each) then one generator step.
/// Writes out_dir/metrics.jsonl (append-only), out_dir/latest.ckpt, and —
/// when `eval` is provided — out_dir/best.ckpt by best score. SpecGAN runs
/// fit per-bin statistics on `data` and store them in every checkpoint.
TrainResult train(const TrainConfig& cfg, const Dataset& data, const std::string& out_dir,
                  const EvalHook& eval = nullptr);

}  // namespace wavegen

#endif
