#ifndef WAVEGEN_OPTIM_HPP
#define WAVEGEN_OPTIM_HPP

#include <cmath>
#include <stdexcept>
#include <vector>

#include "wavegen/graph.hpp"

namespace wavegen {

struct AdamConfig {
  double alpha = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double eps = 1e-8;
};

/// Per-parameter first/second moment accumulators plus the step counter.
template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m, v;
  long step = 0;

  static AdamState init(const std::vector<NodeRef<T>>& params) {
    AdamState st;
    for (const auto& p : params) {
      st.m.push_back(Tensor<T>::zeros(p->value.shape));
      st.v.push_back(Tensor<T>::zeros(p->value.shape));
    }
    return st;
  }
};

/// Standard bias-corrected Adam update, in place on the parameter leaves.
template <typename T>
void adam_step(const std::vector<NodeRef<T>>& params, const std::vector<Tensor<T>>& grads,
               AdamState<T>& st, const AdamConfig& cfg) {
  if (params.size() != grads.size() || params.size() != st.m.size())
    throw std::invalid_argument("adam_step: parameter/gradient/state count mismatch");
  st.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, (double)st.step);
  const double bc2 = 1.0 - std::pow(cfg.beta2, (double)st.step);
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = params[i]->value;
    const Tensor<T>& g = grads[i];
    if (g.shape != p.shape) throw std::invalid_argument("adam_step: gradient shape mismatch");
    for (size_t j = 0; j < p.data.size(); ++j) {
      double gj = (double)g.data[j];
      double mj = cfg.beta1 * (double)st.m[i].data[j] + (1.0 - cfg.beta1) * gj;
      double vj = cfg.beta2 * (double)st.v[i].data[j] + (1.0 - cfg.beta2) * gj * gj;
      st.m[i].data[j] = (T)mj;
      st.v[i].data[j] = (T)vj;
      p.data[j] -= (T)(cfg.alpha * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps));
    }
  }
}

}  // namespace wavegen

#endif
