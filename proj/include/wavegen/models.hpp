#ifndef WAVEGEN_MODELS_HPP
#define WAVEGEN_MODELS_HPP

#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "wavegen/ops.hpp"

namespace wavegen {

enum class ModelKind { WaveganG, WaveganD, SpecganG, SpecganD };

inline std::string model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::WaveganG: return "wavegan-g";
    case ModelKind::WaveganD: return "wavegan-d";
    case ModelKind::SpecganG: return "specgan-g";
    case ModelKind::SpecganD: return "specgan-d";
  }
  throw std::invalid_argument("unknown model kind");
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "wavegan-g") return ModelKind::WaveganG;
  if (s == "wavegan-d") return ModelKind::WaveganD;
  if (s == "specgan-g") return ModelKind::SpecganG;
  if (s == "specgan-d") return ModelKind::SpecganD;
  throw std::invalid_argument("unknown model kind: " + s);
}

struct ModelOptions {
  long phase_shuffle_n = 0;   // discriminators only
  bool phase_shuffle_per_channel = false;
  UpsampleMode upsample_mode = UpsampleMode::ZeroInsertion;  // waveform generator only
  bool post_filter = false;   // waveform generator only
  bool dropout = false;       // discriminators only
  double dropout_rate = 0.5;
};

struct ModelSpec {
  ModelKind kind = ModelKind::WaveganG;
  long d = 64;         // model size multiplier
  long c = 1;          // audio channels
  long latent_dim = 100;
  ModelOptions options;
};

/// Per-forward context: source of stochasticity (phase shuffle, dropout) and
/// the train/inference switch.
struct ForwardCtx {
  std::mt19937_64* rng = nullptr;
  bool training = false;
};

template <typename T>
struct Parameter {
  std::string name;
  NodeRef<T> node;  // leaf with requires_grad
};

template <typename T>
struct Model {
  using Layer = std::function<NodeRef<T>(const NodeRef<T>&, ForwardCtx&)>;

  ModelSpec spec;
  std::vector<Parameter<T>> params;
  std::vector<Layer> layers;
  size_t body_start = 0;     // first up/conv layer; entry point for impulse analysis
  Shape body_input_shape;    // activation shape expected at body_start (without batch)

  NodeRef<T> forward(const NodeRef<T>& x, ForwardCtx& ctx) const {
    return forward_from(0, x, ctx);
  }

  NodeRef<T> forward_from(size_t start, const NodeRef<T>& x, ForwardCtx& ctx) const {
    auto h = x;
    for (size_t i = start; i < layers.size(); ++i) h = layers[i](h, ctx);
    return h;
  }

  std::vector<NodeRef<T>> param_nodes() const {
    std::vector<NodeRef<T>> out;
    for (const auto& p : params) out.push_back(p.node);
    return out;
  }
};

template <typename T>
long param_count(const Model<T>& m) {
  long total = 0;
  for (const auto& p : m.params) total += (long)p.node->value.data.size();
  return total;
}

namespace detail {

template <typename T, typename Rng>
NodeRef<T> init_weight(Model<T>& m, const std::string& name, Shape shape, Rng& rng,
                       T stddev = T(0.02)) {
  auto node = leaf(random_normal<T>(std::move(shape), stddev, rng));
  m.params.push_back({name, node});
  return node;
}

template <typename T>
NodeRef<T> init_zero(Model<T>& m, const std::string& name, Shape shape) {
  auto node = leaf(Tensor<T>::zeros(std::move(shape)));
  m.params.push_back({name, node});
  return node;
}

/// clamp(x, -1, 1) out of tested pieces: min via x - relu(x-1), max via +relu(-1-x).
template <typename T>
NodeRef<T> clamp_unit(const NodeRef<T>& x) {
  auto capped = sub(x, relu(add_scalar(x, T(-1))));
  return add(capped, relu(neg(add_scalar(capped, T(1)))));
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument("model spec: " + msg);
}

inline void validate_common(const ModelSpec& s) {
  require(s.d >= 1, "d must be >= 1");
  require(s.c >= 1, "c must be >= 1");
  require(s.latent_dim >= 1, "latent_dim must be >= 1");
  require(s.options.dropout_rate >= 0 && s.options.dropout_rate < 1,
          "dropout rate must be in [0,1)");
}

}  // namespace detail

/// Waveform generator: dense 100 -> 256d, reshape (16, 16d), then five 4x
/// upsampling stages with kernel width 25 down to (16384, c) and tanh.
template <typename T, typename Rng>
Model<T> build_wavegan_g(const ModelSpec& spec, Rng& rng) {
  detail::validate_common(spec);
  detail::require(spec.kind == ModelKind::WaveganG, "kind must be wavegan-g");
  detail::require(spec.options.phase_shuffle_n == 0, "phase shuffle is discriminator-only");
  detail::require(!spec.options.dropout, "dropout is discriminator-only");

  Model<T> m;
  m.spec = spec;
  const long d = spec.d, c = spec.c;

  auto W = detail::init_weight(m, "dense.W", {spec.latent_dim, 256 * d}, rng);
  auto b = detail::init_zero(m, "dense.b", {256 * d});
  m.layers.push_back([W, b](const NodeRef<T>& x, ForwardCtx&) { return dense(x, W, b); });
  m.layers.push_back([d](const NodeRef<T>& x, ForwardCtx&) {
    return reshape(x, {x->value.dim(0), 16, 16 * d});
  });
  m.layers.push_back([](const NodeRef<T>& x, ForwardCtx&) { return relu(x); });

  m.body_start = m.layers.size();
  m.body_input_shape = {16, 16 * d};

  const long chan[6] = {16 * d, 8 * d, 4 * d, 2 * d, d, c};
  long len = 16;
  for (int i = 0; i < 5; ++i) {
    long ci = chan[i], co = chan[i + 1], out_len = len * 4;
    auto name = "up" + std::to_string(i);
    if (spec.options.upsample_mode == UpsampleMode::ZeroInsertion) {
      // transposed conv stores the adjoint conv's kernel: [25, out_ch, in_ch]
      auto K = detail::init_weight(m, name + ".K", {25, co, ci}, rng);
      auto bias = detail::init_zero(m, name + ".b", {co});
      ConvDims1D cd{25, 4, 10, 11};
      m.layers.push_back([K, bias, cd, out_len](const NodeRef<T>& x, ForwardCtx&) {
        return add_lastvec(convT1d_raw(x, K, cd, out_len), bias);
      });
    } else {
      auto mode = spec.options.upsample_mode;
      auto K = detail::init_weight(m, name + ".K", {25, ci, co}, rng);
      auto bias = detail::init_zero(m, name + ".b", {co});
      ConvDims1D cd{25, 1, 12, 12};
      m.layers.push_back([K, bias, cd, mode](const NodeRef<T>& x, ForwardCtx&) {
        return add_lastvec(conv1d_raw(upsample1d(x, mode, 4), K, cd), bias);
      });
    }
    if (i < 4)
      m.layers.push_back([](const NodeRef<T>& x, ForwardCtx&) { return relu(x); });
    len = out_len;
  }
  m.layers.push_back([](const NodeRef<T>& x, ForwardCtx&) { return tanh_(x); });

  if (spec.options.post_filter) {
    // length-512 FIR on the waveform, identity (delta) at init, output re-clamped
    auto K = detail::init_zero(m, "post.K", {512, c, c});
    for (long ch = 0; ch < c; ++ch) K->value.data[(size_t)((255 * c + ch) * c + ch)] = T(1);
    auto pb = detail::init_zero(m, "post.b", {c});
    ConvDims1D cd{512, 1, 255, 256};
    m.layers.push_back([K, pb, cd](const NodeRef<T>& x, ForwardCtx&) {
      return detail::clamp_unit(add_lastvec(conv1d_raw(x, K, cd), pb));
    });
  }
  return m;
}

/// Waveform critic: five stride-4 width-25 convs with LReLU(0.2), phase
/// shuffle after the first four blocks, then a linear head (no sigmoid).
template <typename T, typename Rng>
Model<T> build_wavegan_d(const ModelSpec& spec, Rng& rng) {
  detail::validate_common(spec);
  detail::require(spec.kind == ModelKind::WaveganD, "kind must be wavegan-d");
  detail::require(!spec.options.post_filter, "post filter is generator-only");
  detail::require(spec.options.upsample_mode == UpsampleMode::ZeroInsertion,
                  "upsample mode is generator-only");
  detail::require(spec.options.phase_shuffle_n >= 0, "phase shuffle n must be >= 0");

  Model<T> m;
  m.spec = spec;
  const long d = spec.d, c = spec.c;
  const long n_shift = spec.options.phase_shuffle_n;
  const bool per_channel = spec.options.phase_shuffle_per_channel;
  const bool use_dropout = spec.options.dropout;
  const double rate = spec.options.dropout_rate;

  m.body_start = 0;
  m.body_input_shape = {16384, c};
  const long chan[6] = {c, d, 2 * d, 4 * d, 8 * d, 16 * d};
  for (int i = 0; i < 5; ++i) {
    auto name = "conv" + std::to_string(i);
    auto K = detail::init_weight(m, name + ".K", {25, chan[i], chan[i + 1]}, rng);
    auto bias = detail::init_zero(m, name + ".b", {chan[i + 1]});
    ConvDims1D cd{25, 4, 10, 11};
    m.layers.push_back([K, bias, cd](const NodeRef<T>& x, ForwardCtx&) {
      return add_lastvec(conv1d_raw(x, K, cd), bias);
    });
    m.layers.push_back([](const NodeRef<T>& x, ForwardCtx&) { return lrelu(x, T(0.2)); });
    if (use_dropout)
      m.layers.push_back([rate](const NodeRef<T>& x, ForwardCtx& ctx) {
        if (ctx.training && !ctx.rng) throw std::runtime_error("dropout needs a ForwardCtx rng");
        return ctx.training ? dropout(x, rate, *ctx.rng, true) : x;
      });
    if (i < 4 && n_shift > 0)
      m.layers.push_back([n_shift, per_channel](const NodeRef<T>& x, ForwardCtx& ctx) {
        if (!ctx.rng) throw std::runtime_error("phase shuffle needs a ForwardCtx rng");
        return phase_shuffle(x, n_shift, *ctx.rng, per_channel);
      });
  }
  m.layers.push_back([d](const NodeRef<T>& x, ForwardCtx&) {
    return reshape(x, {x->value.dim(0), 256 * d});
  });
  auto W = detail::init_weight(m, "dense.W", {256 * d, 1}, rng);
  auto b = detail::init_zero(m, "dense.b", {1});
  m.layers.push_back([W, b](const NodeRef<T>& x, ForwardCtx&) { return dense(x, W, b); });
  return m;
}

/// Spectrogram generator: dense 100 -> 256d, reshape (4, 4, 16d), five 2x2
/// upsampling 5x5 transposed convs up to (128, 128, c), tanh.
template <typename T, typename Rng>
Model<T> build_specgan_g(const ModelSpec& spec, Rng& rng) {
  detail::validate_common(spec);
  detail::require(spec.kind == ModelKind::SpecganG, "kind must be specgan-g");
  detail::require(spec.options.phase_shuffle_n == 0, "phase shuffle is discriminator-only");
  detail::require(!spec.options.dropout, "dropout is discriminator-only");
  detail::require(!spec.options.post_filter, "post filter applies to the waveform generator");
  detail::require(spec.options.upsample_mode == UpsampleMode::ZeroInsertion,
                  "alternative upsampling applies to the waveform generator");

  Model<T> m;
  m.spec = spec;
  const long d = spec.d, c = spec.c;

  auto W = detail::init_weight(m, "dense.W", {spec.latent_dim, 256 * d}, rng);
  auto b = detail::init_zero(m, "dense.b", {256 * d});
  m.layers.push_back([W, b](const NodeRef<T>& x, ForwardCtx&) { return dense(x, W, b); });
  m.layers.push_back([d](const NodeRef<T>& x, ForwardCtx&) {
    return reshape(x, {x->value.dim(0), 4, 4, 16 * d});
  });
  m.layers.push_back([](const NodeRef<T>& x, ForwardCtx&) { return relu(x); });

  m.body_start = m.layers.size();
  m.body_input_shape = {4, 4, 16 * d};

  const long chan[6] = {16 * d, 8 * d, 4 * d, 2 * d, d, c};
  long hw = 4;
  for (int i = 0; i < 5; ++i) {
    long ci = chan[i], co = chan[i + 1], out_hw = hw * 2;
    auto name = "up" + std::to_string(i);
    auto K = detail::init_weight(m, name + ".K", {5, 5, co, ci}, rng);
    auto bias = detail::init_zero(m, name + ".b", {co});
    ConvDims2D cd{5, 5, 2, 2, 2, 2, 2, 2};
    m.layers.push_back([K, bias, cd, out_hw](const NodeRef<T>& x, ForwardCtx&) {
      return add_lastvec(convT2d_raw(x, K, cd, out_hw, out_hw), bias);
    });
    if (i < 4)
      m.layers.push_back([](const NodeRef<T>& x, ForwardCtx&) { return relu(x); });
    hw = out_hw;
  }
  m.layers.push_back([](const NodeRef<T>& x, ForwardCtx&) { return tanh_(x); });
  return m;
}

/// Spectrogram critic: five stride-2 5x5 convs with LReLU(0.2), linear head.
template <typename T, typename Rng>
Model<T> build_specgan_d(const ModelSpec& spec, Rng& rng) {
  detail::validate_common(spec);
  detail::require(spec.kind == ModelKind::SpecganD, "kind must be specgan-d");
  detail::require(!spec.options.post_filter, "post filter is generator-only");
  detail::require(spec.options.phase_shuffle_n == 0,
                  "phase shuffle is defined on waveforms, not spectrograms");
  detail::require(spec.options.upsample_mode == UpsampleMode::ZeroInsertion,
                  "upsample mode is generator-only");

  Model<T> m;
  m.spec = spec;
  const long d = spec.d, c = spec.c;
  const bool use_dropout = spec.options.dropout;
  const double rate = spec.options.dropout_rate;

  m.body_start = 0;
  m.body_input_shape = {128, 128, c};
  const long chan[6] = {c, d, 2 * d, 4 * d, 8 * d, 16 * d};
  for (int i = 0; i < 5; ++i) {
    auto name = "conv" + std::to_string(i);
    auto K = detail::init_weight(m, name + ".K", {5, 5, chan[i], chan[i + 1]}, rng);
    auto bias = detail::init_zero(m, name + ".b", {chan[i + 1]});
    ConvDims2D cd{5, 5, 2, 2, 2, 2, 2, 2};
    m.layers.push_back([K, bias, cd](const NodeRef<T>& x, ForwardCtx&) {
      return add_lastvec(conv2d_raw(x, K, cd), bias);
    });
    m.layers.push_back([](const NodeRef<T>& x, ForwardCtx&) { return lrelu(x, T(0.2)); });
    if (use_dropout)
      m.layers.push_back([rate](const NodeRef<T>& x, ForwardCtx& ctx) {
        if (ctx.training && !ctx.rng) throw std::runtime_error("dropout needs a ForwardCtx rng");
        return ctx.training ? dropout(x, rate, *ctx.rng, true) : x;
      });
  }
  m.layers.push_back([d](const NodeRef<T>& x, ForwardCtx&) {
    return reshape(x, {x->value.dim(0), 256 * d});
  });
  auto W = detail::init_weight(m, "dense.W", {256 * d, 1}, rng);
  auto b = detail::init_zero(m, "dense.b", {1});
  m.layers.push_back([W, b](const NodeRef<T>& x, ForwardCtx&) { return dense(x, W, b); });
  return m;
}

template <typename T, typename Rng>
Model<T> build_model(const ModelSpec& spec, Rng& rng) {
  switch (spec.kind) {
    case ModelKind::WaveganG: return build_wavegan_g<T>(spec, rng);
    case ModelKind::WaveganD: return build_wavegan_d<T>(spec, rng);
    case ModelKind::SpecganG: return build_specgan_g<T>(spec, rng);
    case ModelKind::SpecganD: return build_specgan_d<T>(spec, rng);
  }
  throw std::invalid_argument("unknown model kind");
}

/// Average magnitude spectrum (16384-point FFT, 8193 bins) of the generator
/// body's response to a unit impulse at time 0 on every feature map, over
/// `trials` fresh random initializations.
std::vector<double> impulse_response(const ModelSpec& spec, long trials = 1000,
                                     uint64_t seed = 0, bool zero_init = false);

}  // namespace wavegen

#endif
