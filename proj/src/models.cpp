#include "wavegen/models.hpp"

#include "wavegen/dsp.hpp"

namespace wavegen {

std::vector<double> impulse_response(const ModelSpec& spec, long trials, uint64_t seed,
                                     bool zero_init) {
  if (spec.kind != ModelKind::WaveganG)
    throw std::invalid_argument("impulse_response: expects a waveform generator spec");
  if (trials < 1) throw std::invalid_argument("impulse_response: trials must be >= 1");

  std::mt19937_64 rng(seed);
  std::vector<double> avg;
  for (long trial = 0; trial < trials; ++trial) {
    auto m = build_model<float>(spec, rng);
    if (zero_init)
      for (auto& p : m.params)
        std::fill(p.node->value.data.begin(), p.node->value.data.end(), 0.0f);

    // unit impulse at time 0 on every feature map, fed straight into the body
    Tensor<float> x(Shape{1, m.body_input_shape[0], m.body_input_shape[1]});
    for (long ch = 0; ch < m.body_input_shape[1]; ++ch) x.data[(size_t)ch] = 1.0f;
    ForwardCtx ctx;
    auto out = m.forward_from(m.body_start, constant(std::move(x)), ctx);

    const Tensor<float>& y = out->value;
    std::vector<double> wav((size_t)y.dim(1));
    for (long t = 0; t < y.dim(1); ++t) wav[(size_t)t] = (double)y.data[(size_t)(t * y.dim(2))];
    auto mag = fft_magnitude(wav);
    if (avg.empty()) avg.assign(mag.size(), 0.0);
    for (size_t i = 0; i < mag.size(); ++i) avg[i] += mag[i];
  }
  for (auto& v : avg) v /= (double)trials;
  return avg;
}

}  // namespace wavegen
