// Command-line entry points: train / generate / eval / analyze / preprocess /
// serve. Usage errors exit with 2, runtime failures with 1.
#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "wavegen/checkpoint.hpp"
#include "wavegen/dsp.hpp"
#include "wavegen/eval.hpp"
#include "wavegen/generate.hpp"
#include "wavegen/service.hpp"
#include "wavegen/train.hpp"

using namespace wavegen;

namespace {

/// Default seed: WAVEGEN_SEED env var when set, otherwise 0. An explicit
/// --seed always wins.
uint64_t default_seed() {
  if (const char* env = std::getenv("WAVEGEN_SEED")) return std::strtoull(env, nullptr, 10);
  return 0;
}

std::string gen_name(long i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "gen_%03ld.wav", i);
  return buf;
}

int run(int argc, char** argv) {
  CLI::App app{"WaveGAN/SpecGAN audio synthesis toolkit"};
  app.require_subcommand(1);

  // --- train -------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "Train a generator on a directory of WAVs");
  std::string train_data, train_arch, train_out, train_upsample = "zero";
  long train_d = 64, train_shuffle = 2, train_iters = 200000, train_batch = 64;
  long train_eval_every = 0, train_n_critic = 5;
  uint64_t train_seed = default_seed();
  bool train_post = false, train_dropout = false, train_toy = false;
  train_cmd->add_option("--data", train_data, "Directory of training WAVs");
  train_cmd->add_option("--arch", train_arch, "Architecture: wavegan or specgan")
      ->required()
      ->check(CLI::IsMember({"wavegan", "specgan"}));
  train_cmd->add_option("--out", train_out, "Output directory")->required();
  train_cmd->add_option("--d", train_d, "Model size multiplier");
  train_cmd->add_option("--phase-shuffle", train_shuffle, "Critic phase shuffle n (wavegan)");
  train_cmd->add_option("--upsample", train_upsample, "zero|nearest|linear|cubic");
  train_cmd->add_flag("--post-filter", train_post, "Learned post-processing filter");
  train_cmd->add_flag("--dropout", train_dropout, "Critic dropout");
  train_cmd->add_option("--iters", train_iters, "Training iterations");
  train_cmd->add_option("--seed", train_seed, "RNG seed");
  train_cmd->add_option("--batch", train_batch, "Batch size");
  train_cmd->add_option("--n-critic", train_n_critic, "Critic updates per generator update");
  train_cmd->add_option("--eval-every", train_eval_every, "Checkpoint interval (iterations)");
  train_cmd->add_flag("--toy", train_toy,
                      "Use the built-in 10-class sinusoid toy set instead of --data");

  // --- generate ----------------------------------------------------------
  auto* gen_cmd = app.add_subcommand("generate", "Sample waveforms from a checkpoint");
  std::string gen_ckpt, gen_out;
  long gen_n = 1;
  uint64_t gen_seed = default_seed();
  gen_cmd->add_option("--ckpt", gen_ckpt, "Checkpoint file")->required();
  gen_cmd->add_option("--n", gen_n, "Number of samples");
  gen_cmd->add_option("--out", gen_out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen_seed, "Latent RNG seed");

  // --- eval --------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "Score a generator checkpoint");
  std::string eval_ckpt, eval_clf, eval_data;
  long eval_n_gen = 50000;
  uint64_t eval_seed = default_seed();
  eval_cmd->add_option("--ckpt", eval_ckpt, "Generator checkpoint")->required();
  eval_cmd->add_option("--classifier", eval_clf, "Classifier checkpoint")->required();
  eval_cmd->add_option("--data", eval_data, "Directory of real WAVs")->required();
  eval_cmd->add_option("--n-gen", eval_n_gen, "Generated samples to score");
  eval_cmd->add_option("--seed", eval_seed, "RNG seed");

  // --- analyze -----------------------------------------------------------
  auto* analyze_cmd = app.add_subcommand("analyze", "Diagnostic analyses");
  analyze_cmd->require_subcommand(1);
  auto* imp_cmd = analyze_cmd->add_subcommand(
      "impulse", "Average frequency response of randomly initialized generators");
  std::string imp_out, imp_upsample = "zero";
  long imp_d = 64, imp_trials = 1000;
  uint64_t imp_seed = default_seed();
  imp_cmd->add_option("--out", imp_out, "Output JSON file")->required();
  imp_cmd->add_option("--d", imp_d, "Model size multiplier");
  imp_cmd->add_option("--trials", imp_trials, "Random initializations to average");
  imp_cmd->add_option("--upsample", imp_upsample, "zero|nearest|linear|cubic");
  imp_cmd->add_option("--seed", imp_seed, "RNG seed");

  auto* pca_cmd =
      analyze_cmd->add_subcommand("pca", "Principal components of dataset slices");
  std::string pca_data, pca_out;
  long pca_k = 8, pca_len = 64, pca_n_slices = 4096;
  uint64_t pca_seed = default_seed();
  pca_cmd->add_option("--data", pca_data, "Directory of WAVs")->required();
  pca_cmd->add_option("--out", pca_out, "Output JSON file")->required();
  pca_cmd->add_option("--k", pca_k, "Components to keep");
  pca_cmd->add_option("--slice-len", pca_len, "Slice length in samples");
  pca_cmd->add_option("--n-slices", pca_n_slices, "Random slices to draw");
  pca_cmd->add_option("--seed", pca_seed, "RNG seed");

  // --- preprocess --------------------------------------------------------
  auto* pre_cmd =
      app.add_subcommand("preprocess", "Fit spectrogram per-bin statistics for a dataset");
  std::string pre_data, pre_out;
  pre_cmd->add_option("--data", pre_data, "Directory of WAVs")->required();
  pre_cmd->add_option("--out", pre_out, "Output JSON file")->required();

  // --- serve -------------------------------------------------------------
  auto* serve_cmd = app.add_subcommand("serve", "HTTP generation service");
  std::string serve_ckpt;
  int serve_port = 8080;
  serve_cmd->add_option("--ckpt", serve_ckpt, "Generator checkpoint")->required();
  serve_cmd->add_option("--port", serve_port, "TCP port")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the message / help text
    return e.get_exit_code() == 0 ? 0 : 2;
  }

  if (train_cmd->parsed()) {
    if (!train_toy && train_data.empty()) {
      std::fprintf(stderr, "train: --data is required (or pass --toy)\n");
      return 2;
    }
    Dataset data = train_toy ? synth_toy_dataset(10, 50, 1)
                             : make_dataset(train_data, 16384, PadPolicy::ZeroPad);
    TrainConfig cfg;
    cfg.batch_size = train_batch;
    cfg.n_critic = train_n_critic;
    cfg.max_iters = train_iters;
    cfg.eval_every = train_eval_every;
    cfg.seed = train_seed;
    const bool spectral = train_arch == "specgan";
    cfg.g_spec.kind = spectral ? ModelKind::SpecganG : ModelKind::WaveganG;
    cfg.d_spec.kind = spectral ? ModelKind::SpecganD : ModelKind::WaveganD;
    cfg.g_spec.d = cfg.d_spec.d = train_d;
    if (!spectral) {
      cfg.d_spec.options.phase_shuffle_n = train_shuffle;
      cfg.g_spec.options.upsample_mode = parse_upsample_mode(train_upsample);
      cfg.g_spec.options.post_filter = train_post;
    } else if (train_shuffle != 0 && train_cmd->count("--phase-shuffle")) {
      throw std::runtime_error("phase shuffle applies to the wavegan critic only");
    }
    cfg.d_spec.options.dropout = train_dropout;
    auto res = train(cfg, data, train_out);
    std::printf("trained %ld iterations; latest checkpoint: %s\n", res.iterations,
                res.latest_path.c_str());
    return 0;
  }

  if (gen_cmd->parsed()) {
    auto lg = load_generator(load_checkpoint(gen_ckpt));
    std::filesystem::create_directories(gen_out);
    auto ws = generate(lg, latent_vectors(gen_n, lg.g.spec.latent_dim, gen_seed));
    for (long i = 0; i < (long)ws.size(); ++i)
      save_wav(ws[(size_t)i], (std::filesystem::path(gen_out) / gen_name(i)).string());
    std::printf("wrote %ld files to %s\n", (long)ws.size(), gen_out.c_str());
    return 0;
  }

  if (eval_cmd->parsed()) {
    auto ck = load_checkpoint(eval_ckpt);
    auto clf = load_classifier(eval_clf);
    Dataset all = make_dataset(eval_data, 16384, PadPolicy::ZeroPad);
    // Deterministic split: even slices reference train, odd slices test.
    Dataset train_set, test_set;
    train_set.sample_rate = test_set.sample_rate = all.sample_rate;
    train_set.length = test_set.length = all.length;
    for (long i = 0; i < all.size(); ++i)
      (i % 2 == 0 ? train_set : test_set).examples.push_back(all.examples[(size_t)i]);
    if (test_set.size() < 2) throw std::runtime_error("eval: need at least 4 examples");
    auto rep = evaluate(ck, clf, train_set, test_set, eval_n_gen, eval_seed);
    std::printf("%s\n", rep.to_json().c_str());
    return 0;
  }

  if (imp_cmd->parsed()) {
    ModelSpec spec;
    spec.kind = ModelKind::WaveganG;
    spec.d = imp_d;
    spec.options.upsample_mode = parse_upsample_mode(imp_upsample);
    auto mag = impulse_response(spec, imp_trials, imp_seed);
    nlohmann::ordered_json j;
    j["d"] = imp_d;
    j["trials"] = imp_trials;
    j["upsample"] = imp_upsample;
    j["fft_size"] = 16384;
    j["magnitude"] = mag;
    std::ofstream os(imp_out);
    if (!os) throw std::runtime_error("cannot write " + imp_out);
    os << j.dump() << "\n";
    return 0;
  }

  if (pca_cmd->parsed()) {
    Dataset data = make_dataset(pca_data, 16384, PadPolicy::ZeroPad);
    auto pca = pca_slices(data, pca_len, pca_k, pca_seed, pca_n_slices);
    nlohmann::ordered_json j;
    j["slice_len"] = pca_len;
    j["eigenvalues"] = pca.eigenvalues;
    j["components"] = pca.components;
    std::ofstream os(pca_out);
    if (!os) throw std::runtime_error("cannot write " + pca_out);
    os << j.dump() << "\n";
    return 0;
  }

  if (pre_cmd->parsed()) {
    Dataset data = make_dataset(pre_data, 16384, PadPolicy::ZeroPad);
    BinStats stats = fit_bin_stats(data);
    std::ofstream os(pre_out);
    if (!os) throw std::runtime_error("cannot write " + pre_out);
    os << bin_stats_to_json(stats) << "\n";
    return 0;
  }

  if (serve_cmd->parsed()) {
    std::printf("serving %s on port %d\n", serve_ckpt.c_str(), serve_port);
    serve(serve_ckpt, serve_port);
    return 0;
  }

  return 2;  // unreachable: a subcommand is required
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const CLI::ParseError&) {
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
