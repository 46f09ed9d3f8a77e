#include "wavegen/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "wavegen/checkpoint.hpp"
#include "wavegen/dsp.hpp"

namespace wavegen {

namespace {

nlohmann::ordered_json config_to_json(const TrainConfig& cfg) {
  nlohmann::ordered_json j;
  j["batch_size"] = cfg.batch_size;
  j["lambda"] = cfg.lambda;
  j["n_critic"] = cfg.n_critic;
  j["adam"] = {{"alpha", cfg.adam.alpha},
               {"beta1", cfg.adam.beta1},
               {"beta2", cfg.adam.beta2},
               {"eps", cfg.adam.eps}};
  j["max_iters"] = cfg.max_iters;
  j["eval_every"] = cfg.eval_every;
  j["seed"] = cfg.seed;
  return j;
}

std::string rng_state_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Checkpoint make_checkpoint(const TrainConfig& cfg, const Model<float>& g, const Model<float>& d,
                           long iteration, const std::mt19937_64& rng,
                           const std::string& bin_stats_json) {
  Checkpoint ck;
  ck.meta["g_spec"] = model_spec_to_json(g.spec);
  ck.meta["d_spec"] = model_spec_to_json(d.spec);
  ck.meta["config"] = config_to_json(cfg);
  ck.meta["iteration"] = iteration;
  ck.meta["rng_state"] = rng_state_string(rng);
  if (!bin_stats_json.empty())
    ck.meta["bin_stats"] = nlohmann::ordered_json::parse(bin_stats_json);
  append_model_tensors(ck, g, "g.");
  append_model_tensors(ck, d, "d.");
  return ck;
}

/// Stack `batch_size` examples sampled uniformly with replacement.
Tensor<float> sample_real_batch(const std::vector<Tensor<float>>& examples, long batch_size,
                                std::mt19937_64& rng) {
  std::uniform_int_distribution<size_t> pick(0, examples.size() - 1);
  Shape shape = examples[0].shape;
  shape.insert(shape.begin(), batch_size);
  Tensor<float> out(shape);
  const size_t per = examples[0].data.size();
  for (long i = 0; i < batch_size; ++i) {
    const Tensor<float>& e = examples[(size_t)pick(rng)];
    std::copy(e.data.begin(), e.data.end(), out.data.begin() + (size_t)i * per);
  }
  return out;
}

bool all_finite(const Tensor<float>& t) {
  for (float v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const Dataset& data, const std::string& out_dir,
                  const EvalHook& eval) {
  if (cfg.batch_size < 1 || cfg.n_critic < 1 || cfg.max_iters < 1 || cfg.lambda < 0 ||
      cfg.eval_every < 0 || cfg.log_every < 1)
    throw std::invalid_argument("train: invalid configuration");
  if (data.size() == 0) throw std::invalid_argument("train: dataset is empty");

  const bool spectral = cfg.g_spec.kind == ModelKind::SpecganG;
  if (spectral && cfg.d_spec.kind != ModelKind::SpecganD)
    throw std::invalid_argument("train: generator/critic architecture mismatch");
  if (!spectral &&
      (cfg.g_spec.kind != ModelKind::WaveganG || cfg.d_spec.kind != ModelKind::WaveganD))
    throw std::invalid_argument("train: generator/critic architecture mismatch");
  if (cfg.g_spec.c != 1 || cfg.d_spec.c != 1)
    throw std::invalid_argument("train: datasets are mono; c must be 1");

  std::mt19937_64 rng(cfg.seed);
  auto g = build_model<float>(cfg.g_spec, rng);
  auto d = build_model<float>(cfg.d_spec, rng);

  // Real examples as model-input tensors: [16384, 1] waveforms or
  // [128, 128, 1] normalized spectrogram grids.
  std::string bin_stats_json;
  std::vector<Tensor<float>> examples;
  examples.reserve((size_t)data.size());
  if (spectral) {
    BinStats stats = fit_bin_stats(data);
    bin_stats_json = bin_stats_to_json(stats);
    for (const auto& w : data.examples) {
      NormalizedSpectrogram ns = spec_preprocess(w, stats);
      Tensor<float> t(Shape{ns.frames, ns.bins, 1});
      std::copy(ns.grid.begin(), ns.grid.end(), t.data.begin());
      examples.push_back(std::move(t));
    }
  } else {
    if (data.length != 16384)
      throw std::invalid_argument("train: waveform examples must be 16384 samples");
    for (const auto& w : data.examples) {
      Tensor<float> t(Shape{data.length, 1});
      std::copy(w.samples.begin(), w.samples.end(), t.data.begin());
      examples.push_back(std::move(t));
    }
  }

  std::filesystem::create_directories(out_dir);
  TrainResult res;
  res.latest_path = out_dir + "/latest.ckpt";
  res.best_path = out_dir + "/best.ckpt";
  res.metrics_path = out_dir + "/metrics.jsonl";
  std::ofstream metrics(res.metrics_path, std::ios::app);
  if (!metrics) throw std::runtime_error("train: cannot open metrics log " + res.metrics_path);

  auto g_params = g.param_nodes();
  auto d_params = d.param_nodes();
  auto g_state = AdamState<float>::init(g_params);
  auto d_state = AdamState<float>::init(d_params);

  auto save_latest = [&](long iter) {
    save_checkpoint(res.latest_path, make_checkpoint(cfg, g, d, iter, rng, bin_stats_json));
  };

  double best = -std::numeric_limits<double>::infinity();
  long iter = 0;
  try {
    for (iter = 1; iter <= cfg.max_iters; ++iter) {
      double d_loss = 0, gp_term = 0;
      for (long k = 0; k < cfg.n_critic; ++k) {
        Tensor<float> real = sample_real_batch(examples, cfg.batch_size, rng);
        auto z = constant(sample_latent(cfg.batch_size, cfg.g_spec.latent_dim, rng));
        ForwardCtx gctx{&rng, true};
        auto fake = constant(g.forward(z, gctx)->value);  // detached for critic steps
        auto loss =
            critic_loss(d, constant(std::move(real)), fake, (float)cfg.lambda, rng, true);
        auto gm = grad(loss.total, d_params);
        std::vector<Tensor<float>> grads;
        for (const auto& p : d_params) grads.push_back(gm.at(p)->value);
        adam_step(d_params, grads, d_state, cfg.adam);
        d_loss = (double)loss.total->value.data[0];
        gp_term = (double)loss.penalty->value.data[0];
      }

      auto z = constant(sample_latent(cfg.batch_size, cfg.g_spec.latent_dim, rng));
      ForwardCtx gctx{&rng, true};
      auto fake = g.forward(z, gctx);
      auto gl = generator_loss(d, fake, rng, true);
      auto gm = grad(gl, g_params);
      std::vector<Tensor<float>> grads;
      for (const auto& p : g_params) grads.push_back(gm.at(p)->value);
      adam_step(g_params, grads, g_state, cfg.adam);
      const double g_loss = (double)gl->value.data[0];

      const bool do_eval = cfg.eval_every > 0 && (iter % cfg.eval_every == 0);
      if (iter == 1 || iter % cfg.log_every == 0 || iter == cfg.max_iters || do_eval) {
        nlohmann::ordered_json rec;
        rec["iter"] = iter;
        rec["d_loss"] = d_loss;
        rec["g_loss"] = g_loss;
        rec["gp_term"] = gp_term;
        if (do_eval && eval) {
          const double score = eval(g, rng);
          rec["inception_score"] = score;
          if (score > best) {
            best = score;
            res.has_best = true;
            save_checkpoint(res.best_path,
                            make_checkpoint(cfg, g, d, iter, rng, bin_stats_json));
          }
        }
        metrics << rec.dump() << "\n";
        metrics.flush();
      }
      if (do_eval) save_latest(iter);
      for (const auto& p : g_params)
        if (!all_finite(p->value)) throw std::runtime_error("train: generator diverged (NaN)");
      for (const auto& p : d_params)
        if (!all_finite(p->value)) throw std::runtime_error("train: critic diverged (NaN)");
    }
  } catch (...) {
    save_latest(iter);  // persist progress before propagating the failure
    throw;
  }

  save_latest(cfg.max_iters);
  if (!res.has_best) {
    std::filesystem::copy_file(res.latest_path, res.best_path,
                               std::filesystem::copy_options::overwrite_existing);
    best = std::numeric_limits<double>::quiet_NaN();
  }
  res.iterations = cfg.max_iters;
  res.best_score = best;
  return res;
}

}  // namespace wavegen
