#include "wavegen/generate.hpp"

#include "wavegen/train.hpp"

namespace wavegen {

LoadedGenerator load_generator(const Checkpoint& ck) {
  if (!ck.meta.contains("g_spec"))
    throw std::runtime_error("checkpoint has no generator spec");
  ModelSpec spec = model_spec_from_json(ck.meta["g_spec"]);
  if (spec.kind != ModelKind::WaveganG && spec.kind != ModelKind::SpecganG)
    throw std::runtime_error("checkpoint is not a generator");

  LoadedGenerator lg;
  std::mt19937_64 rng(0);  // overwritten below
  lg.g = build_model<float>(spec, rng);
  load_model_tensors(ck, lg.g, "g.");
  if (ck.meta.contains("iteration")) lg.iteration = ck.meta["iteration"].get<long>();
  if (ck.meta.contains("bin_stats")) {
    lg.bin_stats = bin_stats_from_json(ck.meta["bin_stats"].dump());
    lg.sample_rate = lg.bin_stats->sample_rate;
  }
  if (spec.kind == ModelKind::SpecganG && !lg.bin_stats)
    throw std::runtime_error(
        "spectrogram-generator checkpoint is missing the per-bin statistics "
        "needed for waveform inversion");
  return lg;
}

std::vector<Waveform> generate(const LoadedGenerator& lg,
                               const std::vector<std::vector<float>>& zs, long max_batch) {
  const ModelSpec& spec = lg.g.spec;
  for (const auto& z : zs)
    if ((long)z.size() != spec.latent_dim)
      throw std::invalid_argument("latent vector length must be " +
                                  std::to_string(spec.latent_dim));
  if (spec.c != 1) throw std::runtime_error("generate: only mono generators supported");
  if (max_batch < 1) throw std::invalid_argument("generate: max_batch must be >= 1");

  std::vector<Waveform> out;
  out.reserve(zs.size());
  for (size_t start = 0; start < zs.size(); start += (size_t)max_batch) {
    const long n = (long)std::min((size_t)max_batch, zs.size() - start);
    Tensor<float> zt(Shape{n, spec.latent_dim});
    for (long i = 0; i < n; ++i)
      std::copy(zs[start + (size_t)i].begin(), zs[start + (size_t)i].end(),
                zt.data.begin() + (size_t)(i * spec.latent_dim));
    ForwardCtx ctx;  // inference mode, no stochastic layers
    auto yn = lg.g.forward(constant(std::move(zt)), ctx);
    const Tensor<float>& y = yn->value;

    for (long i = 0; i < n; ++i) {
      if (spec.kind == ModelKind::WaveganG) {
        Waveform w;
        w.sample_rate = lg.sample_rate;
        w.samples.assign(y.data.begin() + (size_t)(i * y.dim(1)),
                         y.data.begin() + (size_t)((i + 1) * y.dim(1)));
        out.push_back(std::move(w));
      } else {
        NormalizedSpectrogram ns;
        ns.frames = y.dim(1);
        ns.bins = y.dim(2);
        ns.grid.assign(y.data.begin() + (size_t)(i * ns.frames * ns.bins),
                       y.data.begin() + (size_t)((i + 1) * ns.frames * ns.bins));
        out.push_back(spec_invert(ns, *lg.bin_stats));
      }
    }
  }
  return out;
}

std::vector<std::vector<float>> latent_vectors(long count, long dim, uint64_t seed) {
  if (count < 0 || dim < 1) throw std::invalid_argument("latent_vectors: bad count/dim");
  std::mt19937_64 rng(seed);
  std::vector<std::vector<float>> out;
  out.reserve((size_t)count);
  for (long i = 0; i < count; ++i) {
    Tensor<float> z = sample_latent(1, dim, rng);
    out.push_back(std::move(z.data));
  }
  return out;
}

}  // namespace wavegen
