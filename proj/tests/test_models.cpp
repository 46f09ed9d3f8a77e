#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "wavegen/models.hpp"

using namespace wavegen;

namespace {

template <typename T>
std::vector<Shape> layer_shapes(const Model<T>& m, Tensor<T> x) {
  ForwardCtx ctx;
  std::vector<Shape> out;
  auto h = constant(std::move(x));
  for (const auto& layer : m.layers) {
    h = layer(h, ctx);
    out.push_back(h->value.shape);
  }
  return out;
}

Tensor<float> latent(long n, long dim, uint64_t seed) {
  std::mt19937_64 rng(seed);
  return random_uniform<float>({n, dim}, -1.0f, 1.0f, rng);
}

ModelSpec spec_of(ModelKind kind, long d) {
  ModelSpec s;
  s.kind = kind;
  s.d = d;
  return s;
}

// peak height relative to the median of the surrounding +-24 bins
double prominence(const std::vector<double>& s, long p) {
  std::vector<double> ring;
  for (long i = std::max(0L, p - 24); i <= std::min((long)s.size() - 1, p + 24); ++i)
    if (std::abs(i - p) > 2) ring.push_back(s[(size_t)i]);
  std::nth_element(ring.begin(), ring.begin() + ring.size() / 2, ring.end());
  return s[(size_t)p] / ring[ring.size() / 2];
}

}  // namespace

TEST_CASE("waveform generator intermediate shapes match the layer table") {
  for (long d : {1L, 4L, 64L}) {
    long n = d == 64 ? 1 : 2;
    std::mt19937_64 rng(1);
    auto m = build_wavegan_g<float>(spec_of(ModelKind::WaveganG, d), rng);
    auto shapes = layer_shapes(m, latent(n, 100, 2));
    std::vector<Shape> want = {
        {n, 256 * d},     {n, 16, 16 * d},  {n, 16, 16 * d}, {n, 64, 8 * d},
        {n, 64, 8 * d},   {n, 256, 4 * d},  {n, 256, 4 * d}, {n, 1024, 2 * d},
        {n, 1024, 2 * d}, {n, 4096, d},     {n, 4096, d},    {n, 16384, 1},
        {n, 16384, 1}};
    REQUIRE(shapes == want);
  }
}

TEST_CASE("waveform critic intermediate shapes match the layer table") {
  for (long d : {1L, 4L, 64L}) {
    long n = d == 64 ? 1 : 2;
    std::mt19937_64 rng(1);
    auto m = build_wavegan_d<float>(spec_of(ModelKind::WaveganD, d), rng);
    auto shapes = layer_shapes(m, Tensor<float>::zeros({n, 16384, 1}));
    std::vector<Shape> want = {
        {n, 4096, d},    {n, 4096, d},    {n, 1024, 2 * d}, {n, 1024, 2 * d},
        {n, 256, 4 * d}, {n, 256, 4 * d}, {n, 64, 8 * d},   {n, 64, 8 * d},
        {n, 16, 16 * d}, {n, 16, 16 * d}, {n, 256 * d},     {n, 1}};
    REQUIRE(shapes == want);
    if (d == 64) CHECK(m.params[0].node->value.shape == Shape{25, 1, 64});
  }
}

TEST_CASE("spectrogram generator and critic shapes match the layer tables") {
  for (long d : {1L, 4L, 64L}) {
    long n = d == 64 ? 1 : 2;
    std::mt19937_64 rng(1);
    auto g = build_specgan_g<float>(spec_of(ModelKind::SpecganG, d), rng);
    auto gs = layer_shapes(g, latent(n, 100, 2));
    std::vector<Shape> gw = {
        {n, 256 * d},        {n, 4, 4, 16 * d},  {n, 4, 4, 16 * d},  {n, 8, 8, 8 * d},
        {n, 8, 8, 8 * d},    {n, 16, 16, 4 * d}, {n, 16, 16, 4 * d}, {n, 32, 32, 2 * d},
        {n, 32, 32, 2 * d},  {n, 64, 64, d},     {n, 64, 64, d},     {n, 128, 128, 1},
        {n, 128, 128, 1}};
    REQUIRE(gs == gw);

    auto cd = build_specgan_d<float>(spec_of(ModelKind::SpecganD, d), rng);
    auto ds = layer_shapes(cd, Tensor<float>::zeros({n, 128, 128, 1}));
    std::vector<Shape> dw = {
        {n, 64, 64, d},     {n, 64, 64, d},     {n, 32, 32, 2 * d}, {n, 32, 32, 2 * d},
        {n, 16, 16, 4 * d}, {n, 16, 16, 4 * d}, {n, 8, 8, 8 * d},   {n, 8, 8, 8 * d},
        {n, 4, 4, 16 * d},  {n, 4, 4, 16 * d},  {n, 256 * d},       {n, 1}};
    REQUIRE(ds == dw);
  }
}

TEST_CASE("generator outputs are finite and bounded by tanh") {
  std::mt19937_64 rng(5);
  ForwardCtx ctx;
  for (auto kind : {ModelKind::WaveganG, ModelKind::SpecganG}) {
    auto m = build_model<float>(spec_of(kind, 1), rng);
    auto y = m.forward(constant(latent(2, 100, 3)), ctx);
    for (float v : y->value.data) {
      CHECK(std::isfinite(v));
      CHECK(v <= 1.0f);
      CHECK(v >= -1.0f);
    }
  }
}

TEST_CASE("parameter counts: table arithmetic and 1D/2D parity") {
  std::mt19937_64 rng(1);
  auto g1 = build_wavegan_g<float>(spec_of(ModelKind::WaveganG, 64), rng);
  auto g2 = build_specgan_g<float>(spec_of(ModelKind::SpecganG, 64), rng);
  auto d1 = build_wavegan_d<float>(spec_of(ModelKind::WaveganD, 64), rng);
  auto d2 = build_specgan_d<float>(spec_of(ModelKind::SpecganD, 64), rng);

  long dense = 0, up0 = 0;
  for (const auto& p : g1.params) {
    long numel = (long)p.node->value.data.size();
    if (p.name == "dense.W" || p.name == "dense.b") dense += numel;
    if (p.name == "up0.K" || p.name == "up0.b") up0 += numel;
  }
  CHECK(dense == 1654784);   // 100*16384 + 16384
  CHECK(up0 == 13107712);    // 25*1024*512 + 512
  long up0_2d = 0;
  for (const auto& p : g2.params)
    if (p.name == "up0.K" || p.name == "up0.b") up0_2d += (long)p.node->value.data.size();
  CHECK(up0_2d == 13107712);  // 5*5*1024*512 + 512

  for (long d : {1L, 4L, 64L}) {
    std::mt19937_64 r2(d);
    auto wg = build_wavegan_g<float>(spec_of(ModelKind::WaveganG, d), r2);
    auto sg = build_specgan_g<float>(spec_of(ModelKind::SpecganG, d), r2);
    auto wd = build_wavegan_d<float>(spec_of(ModelKind::WaveganD, d), r2);
    auto sd = build_specgan_d<float>(spec_of(ModelKind::SpecganD, d), r2);
    CHECK(param_count(wg) == param_count(sg));
    CHECK(param_count(wd) == param_count(sd));
    REQUIRE(wg.params.size() == sg.params.size());
    for (size_t i = 0; i < wg.params.size(); ++i)
      CHECK(wg.params[i].node->value.data.size() == sg.params[i].node->value.data.size());
    REQUIRE(wd.params.size() == sd.params.size());
    for (size_t i = 0; i < wd.params.size(); ++i)
      CHECK(wd.params[i].node->value.data.size() == sd.params[i].node->value.data.size());
  }
}

TEST_CASE("builders are deterministic per seed; critic forward is deterministic") {
  std::mt19937_64 ra(9), rb(9);
  auto a = build_wavegan_g<float>(spec_of(ModelKind::WaveganG, 1), ra);
  auto b = build_wavegan_g<float>(spec_of(ModelKind::WaveganG, 1), rb);
  REQUIRE(a.params.size() == b.params.size());
  for (size_t i = 0; i < a.params.size(); ++i)
    REQUIRE(a.params[i].node->value.data == b.params[i].node->value.data);

  std::mt19937_64 rc(3);
  auto dm = build_wavegan_d<float>(spec_of(ModelKind::WaveganD, 1), rc);
  ForwardCtx ctx;
  auto x = constant(random_normal<float>({2, 16384, 1}, 0.5f, rc));
  auto y1 = dm.forward(x, ctx);
  auto y2 = dm.forward(x, ctx);
  REQUIRE(y1->value.data == y2->value.data);
}

TEST_CASE("phase shuffle in the critic is stochastic and needs an rng") {
  ModelSpec s = spec_of(ModelKind::WaveganD, 1);
  s.options.phase_shuffle_n = 2;
  std::mt19937_64 rng(3);
  auto dm = build_wavegan_d<float>(s, rng);
  auto x = constant(random_normal<float>({4, 16384, 1}, 0.5f, rng));

  ForwardCtx no_rng;
  CHECK_THROWS(dm.forward(x, no_rng));

  std::mt19937_64 fwd_rng(1);
  ForwardCtx ctx{&fwd_rng, true};
  bool differs = false;
  auto y1 = dm.forward(x, ctx);
  for (int attempt = 0; attempt < 4 && !differs; ++attempt)
    differs = dm.forward(x, ctx)->value.data != y1->value.data;
  CHECK(differs);
}

TEST_CASE("critic dropout is active only in training mode") {
  ModelSpec s = spec_of(ModelKind::WaveganD, 1);
  s.options.dropout = true;
  std::mt19937_64 rng(3);
  auto dm = build_wavegan_d<float>(s, rng);
  std::mt19937_64 rng2(3);
  auto plain = build_wavegan_d<float>(spec_of(ModelKind::WaveganD, 1), rng2);
  auto x = constant(random_normal<float>({2, 16384, 1}, 0.5f, rng));

  ForwardCtx eval_ctx;  // training=false: dropout is identity
  CHECK(dm.forward(x, eval_ctx)->value.data == plain.forward(x, eval_ctx)->value.data);

  std::mt19937_64 fwd_rng(1);
  ForwardCtx train_ctx{&fwd_rng, true};
  auto y1 = dm.forward(x, train_ctx);
  auto y2 = dm.forward(x, train_ctx);
  CHECK(y1->value.data != y2->value.data);
}

TEST_CASE("post filter starts as an identity and keeps outputs in [-1,1]") {
  ModelSpec s = spec_of(ModelKind::WaveganG, 1);
  s.options.post_filter = true;
  std::mt19937_64 ra(4), rb(4);
  auto with = build_wavegan_g<float>(s, ra);
  auto without = build_wavegan_g<float>(spec_of(ModelKind::WaveganG, 1), rb);
  ForwardCtx ctx;
  auto z = constant(latent(2, 100, 6));
  auto ya = with.forward(z, ctx);
  auto yb = without.forward(z, ctx);
  REQUIRE(ya->value.shape == yb->value.shape);
  for (size_t i = 0; i < ya->value.data.size(); ++i) {
    CHECK(std::abs(ya->value.data[i] - yb->value.data[i]) <= 1e-6f);
    CHECK(ya->value.data[i] <= 1.0f);
    CHECK(ya->value.data[i] >= -1.0f);
  }
}

TEST_CASE("invalid specs are rejected") {
  std::mt19937_64 rng(1);
  ModelSpec bad = spec_of(ModelKind::WaveganG, 0);
  CHECK_THROWS(build_wavegan_g<float>(bad, rng));

  ModelSpec wrong_kind = spec_of(ModelKind::WaveganD, 1);
  CHECK_THROWS(build_wavegan_g<float>(wrong_kind, rng));

  ModelSpec g_shuffle = spec_of(ModelKind::WaveganG, 1);
  g_shuffle.options.phase_shuffle_n = 2;
  CHECK_THROWS(build_wavegan_g<float>(g_shuffle, rng));

  ModelSpec d_filter = spec_of(ModelKind::WaveganD, 1);
  d_filter.options.post_filter = true;
  CHECK_THROWS(build_wavegan_d<float>(d_filter, rng));

  ModelSpec spec_shuffle = spec_of(ModelKind::SpecganD, 1);
  spec_shuffle.options.phase_shuffle_n = 1;
  CHECK_THROWS(build_specgan_d<float>(spec_shuffle, rng));
}

TEST_CASE("impulse response shows upsampling artifacts only for zero-insertion") {
  // 16384-point spectrum at 16 kHz: 250/1000/4000 Hz sit at bins 256/1024/4096
  ModelSpec zi = spec_of(ModelKind::WaveganG, 4);
  auto spec_zi = impulse_response(zi, 200, 7);
  ModelSpec nn = zi;
  nn.options.upsample_mode = UpsampleMode::Nearest;
  auto spec_nn = impulse_response(nn, 200, 7);
  REQUIRE(spec_zi.size() == 8193);

  for (long target : {256L, 1024L, 4096L}) {
    long best = target;
    for (long i = target - 1; i <= target + 1; ++i)
      if (spec_zi[(size_t)i] > spec_zi[(size_t)best]) best = i;
    CHECK(spec_zi[(size_t)best] >= spec_zi[(size_t)(best - 1)]);
    CHECK(spec_zi[(size_t)best] >= spec_zi[(size_t)(best + 1)]);
    double excess_zi = prominence(spec_zi, best) - 1.0;  // measured 4.2 / 10.7 / 18.9
    CHECK(excess_zi >= 1.0);
    double excess_nn = 0;
    for (long i = target - 1; i <= target + 1; ++i)
      excess_nn = std::max(excess_nn, prominence(spec_nn, i) - 1.0);
    CHECK(excess_nn <= 0.5 * excess_zi);  // measured <= 0 (peaks vanish entirely)
  }
}

TEST_CASE("impulse response edge cases") {
  ModelSpec g = spec_of(ModelKind::WaveganG, 1);
  auto flat = impulse_response(g, 2, 0, /*zero_init=*/true);
  for (double v : flat) CHECK(v == 0.0);
  CHECK_THROWS(impulse_response(g, 0));
  CHECK_THROWS(impulse_response(spec_of(ModelKind::SpecganG, 1), 1));
}
