#ifndef WAVEGEN_OPS_HPP
#define WAVEGEN_OPS_HPP

#include <cmath>
#include <cstdint>

#include "wavegen/blas.hpp"
#include "wavegen/graph.hpp"

namespace wavegen {

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape != b.shape)
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                                " vs " + shape_str(b.shape));
}

}  // namespace detail

template <typename T>
NodeRef<T> neg(const NodeRef<T>& x);

template <typename T>
NodeRef<T> add(const NodeRef<T>& a, const NodeRef<T>& b) {
  detail::check_same_shape(a->value, b->value, "add");
  Tensor<T> out = a->value;
  for (long i = 0; i < out.size(); ++i) out.data[(size_t)i] += b->value.data[(size_t)i];
  return make_node(std::move(out), {a, b},
                   [](const NodeRef<T>&, const NodeRef<T>& gy, const std::vector<char>&) {
                     return std::vector<NodeRef<T>>{gy, gy};
                   });
}

template <typename T>
NodeRef<T> sub(const NodeRef<T>& a, const NodeRef<T>& b) {
  detail::check_same_shape(a->value, b->value, "sub");
  Tensor<T> out = a->value;
  for (long i = 0; i < out.size(); ++i) out.data[(size_t)i] -= b->value.data[(size_t)i];
  return make_node(std::move(out), {a, b},
                   [](const NodeRef<T>&, const NodeRef<T>& gy, const std::vector<char>& need) {
                     std::vector<NodeRef<T>> g(2);
                     if (need[0]) g[0] = gy;
                     if (need[1]) g[1] = neg(gy);
                     return g;
                   });
}

template <typename T>
NodeRef<T> mul(const NodeRef<T>& a, const NodeRef<T>& b) {
  detail::check_same_shape(a->value, b->value, "mul");
  Tensor<T> out = a->value;
  for (long i = 0; i < out.size(); ++i) out.data[(size_t)i] *= b->value.data[(size_t)i];
  return make_node(std::move(out), {a, b},
                   [](const NodeRef<T>& self, const NodeRef<T>& gy, const std::vector<char>& need) {
                     std::vector<NodeRef<T>> g(2);
                     if (need[0]) g[0] = mul(gy, self->parents[1]);
                     if (need[1]) g[1] = mul(gy, self->parents[0]);
                     return g;
                   });
}

template <typename T>
NodeRef<T> scale(const NodeRef<T>& x, T c) {
  Tensor<T> out = x->value;
  for (auto& v : out.data) v *= c;
  return make_node(std::move(out), {x},
                   [c](const NodeRef<T>&, const NodeRef<T>& gy, const std::vector<char>&) {
                     return std::vector<NodeRef<T>>{scale(gy, c)};
                   });
}

template <typename T>
NodeRef<T> neg(const NodeRef<T>& x) {
  return scale(x, T(-1));
}

template <typename T>
NodeRef<T> add_scalar(const NodeRef<T>& x, T c) {
  Tensor<T> out = x->value;
  for (auto& v : out.data) v += c;
  return make_node(std::move(out), {x},
                   [](const NodeRef<T>&, const NodeRef<T>& gy, const std::vector<char>&) {
                     return std::vector<NodeRef<T>>{gy};
                   });
}

// Activations. Local derivatives are captured as constants; they are piecewise
// constant (relu/lrelu) or only ever needed to first order here.

template <typename T>
NodeRef<T> relu(const NodeRef<T>& x) {
  Tensor<T> out = x->value;
  Tensor<T> mask(out.shape);
  for (long i = 0; i < out.size(); ++i) {
    if (out.data[(size_t)i] > T(0))
      mask.data[(size_t)i] = T(1);
    else
      out.data[(size_t)i] = T(0);
  }
  auto m = constant(std::move(mask));
  return make_node(std::move(out), {x},
                   [m](const NodeRef<T>&, const NodeRef<T>& gy, const std::vector<char>&) {
                     return std::vector<NodeRef<T>>{mul(gy, m)};
                   });
}

template <typename T>
NodeRef<T> lrelu(const NodeRef<T>& x, T alpha) {
  Tensor<T> out = x->value;
  Tensor<T> mask(out.shape);
  for (long i = 0; i < out.size(); ++i) {
    if (out.data[(size_t)i] >= T(0)) {
      mask.data[(size_t)i] = T(1);
    } else {
      mask.data[(size_t)i] = alpha;
      out.data[(size_t)i] *= alpha;
    }
  }
  auto m = constant(std::move(mask));
  return make_node(std::move(out), {x},
                   [m](const NodeRef<T>&, const NodeRef<T>& gy, const std::vector<char>&) {
                     return std::vector<NodeRef<T>>{mul(gy, m)};
                   });
}

template <typename T>
NodeRef<T> tanh_(const NodeRef<T>& x) {
  Tensor<T> out = x->value;
  for (auto& v : out.data) v = std::tanh(v);
  return make_node(std::move(out), {x},
                   [](const NodeRef<T>& self, const NodeRef<T>& gy, const std::vector<char>&) {
                     // d tanh = 1 - tanh^2, kept differentiable via the output node
                     auto d = add_scalar(neg(square<T>(self)), T(1));
                     return std::vector<NodeRef<T>>{mul(gy, d)};
                   });
}

template <typename T>
NodeRef<T> reciprocal(const NodeRef<T>& x) {
  Tensor<T> out = x->value;
  for (auto& v : out.data) v = T(1) / v;
  return make_node(std::move(out), {x},
                   [](const NodeRef<T>& self, const NodeRef<T>& gy, const std::vector<char>&) {
                     // d(1/x) = -1/x^2
                     auto s2 = mul<T>(self, self);
                     return std::vector<NodeRef<T>>{neg(mul(gy, s2))};
                   });
}

template <typename T>
NodeRef<T> sqrt_(const NodeRef<T>& x) {
  Tensor<T> out = x->value;
  for (auto& v : out.data) {
    if (v < T(0)) throw std::domain_error("sqrt_: negative input");
    v = std::sqrt(v);
  }
  return make_node(std::move(out), {x},
                   [](const NodeRef<T>& self, const NodeRef<T>& gy, const std::vector<char>&) {
                     auto g = scale(mul(gy, reciprocal<T>(self)), T(0.5));
                     return std::vector<NodeRef<T>>{g};
                   });
}

template <typename T>
NodeRef<T> square(const NodeRef<T>& x) {
  return mul(x, x);
}

// ---------------------------------------------------------------------------
// shape / reductions / broadcasts
// ---------------------------------------------------------------------------

template <typename T>
NodeRef<T> reshape(const NodeRef<T>& x, Shape s) {
  if (shape_numel(s) != x->value.size())
    throw std::invalid_argument("reshape: element count mismatch " + shape_str(x->value.shape) +
                                " -> " + shape_str(s));
  Tensor<T> out(std::move(s), x->value.data);
  Shape in_shape = x->value.shape;
  return make_node(std::move(out), {x},
                   [in_shape](const NodeRef<T>&, const NodeRef<T>& gy, const std::vector<char>&) {
                     return std::vector<NodeRef<T>>{reshape(gy, in_shape)};
                   });
}

template <typename T>
NodeRef<T> sum_all(const NodeRef<T>& x);

template <typename T>
NodeRef<T> broadcast_all(const NodeRef<T>& s, Shape shape) {
  if (s->value.size() != 1) throw std::invalid_argument("broadcast_all: input must be scalar");
  Tensor<T> out = Tensor<T>::full(shape, s->value.data[0]);
  return make_node(std::move(out), {s},
                   [](const NodeRef<T>&, const NodeRef<T>& gy, const std::vector<char>&) {
                     return std::vector<NodeRef<T>>{sum_all(gy)};
                   });
}

template <typename T>
NodeRef<T> sum_all(const NodeRef<T>& x) {
  T acc = 0;
  for (auto v : x->value.data) acc += v;
  Shape in_shape = x->value.shape;
  return make_node(Tensor<T>::scalar(acc), {x},
                   [in_shape](const NodeRef<T>&, const NodeRef<T>& gy, const std::vector<char>&) {
                     return std::vector<NodeRef<T>>{broadcast_all(gy, in_shape)};
                   });
}

template <typename T>
NodeRef<T> mean_all(const NodeRef<T>& x) {
  return scale(sum_all(x), T(1) / (T)x->value.size());
}

template <typename T>
NodeRef<T> broadcast_example(const NodeRef<T>& v, Shape shape);

/// Sum over all axes except the first: [n, ...] -> [n].
template <typename T>
NodeRef<T> sum_per_example(const NodeRef<T>& x) {
  long n = x->value.dim(0);
  long inner = x->value.size() / std::max(n, 1L);
  Tensor<T> out(Shape{n});
  for (long e = 0; e < n; ++e) {
    T acc = 0;
    const T* p = x->value.data.data() + e * inner;
    for (long i = 0; i < inner; ++i) acc += p[i];
    out.data[(size_t)e] = acc;
  }
  Shape in_shape = x->value.shape;
  return make_node(std::move(out), {x},
                   [in_shape](const NodeRef<T>&, const NodeRef<T>& gy, const std::vector<char>&) {
                     return std::vector<NodeRef<T>>{broadcast_example(gy, in_shape)};
                   });
}

/// [n] -> [n, ...], repeating each example's scalar.
template <typename T>
NodeRef<T> broadcast_example(const NodeRef<T>& v, Shape shape) {
  long n = shape.empty() ? 0 : shape[0];
  if (v->value.rank() != 1 || v->value.dim(0) != n)
    throw std::invalid_argument("broadcast_example: expected [n] input");
  Tensor<T> out(shape);
  long inner = out.size() / std::max(n, 1L);
  for (long e = 0; e < n; ++e)
    std::fill_n(out.data.begin() + e * inner, inner, v->value.data[(size_t)e]);
  return make_node(std::move(out), {v},
                   [](const NodeRef<T>&, const NodeRef<T>& gy, const std::vector<char>&) {
                     return std::vector<NodeRef<T>>{sum_per_example(gy)};
                   });
}

template <typename T>
NodeRef<T> broadcast_lastvec(const NodeRef<T>& v, Shape shape);

/// Sum over all axes except the last: [..., c] -> [c].
template <typename T>
NodeRef<T> sum_except_last(const NodeRef<T>& x) {
  long c = x->value.dim(x->value.rank() - 1);
  long rows = x->value.size() / std::max(c, 1L);
  Tensor<T> out(Shape{c});
  const T* p = x->value.data.data();
  for (long r = 0; r < rows; ++r)
    for (long i = 0; i < c; ++i) out.data[(size_t)i] += p[r * c + i];
  Shape in_shape = x->value.shape;
  return make_node(std::move(out), {x},
                   [in_shape](const NodeRef<T>&, const NodeRef<T>& gy, const std::vector<char>&) {
                     return std::vector<NodeRef<T>>{broadcast_lastvec(gy, in_shape)};
                   });
}

/// [c] -> [..., c], tiling over leading axes.
template <typename T>
NodeRef<T> broadcast_lastvec(const NodeRef<T>& v, Shape shape) {
  long c = shape.back();
  if (v->value.rank() != 1 || v->value.dim(0) != c)
    throw std::invalid_argument("broadcast_lastvec: expected [c] input");
  Tensor<T> out(shape);
  long rows = out.size() / std::max(c, 1L);
  for (long r = 0; r < rows; ++r)
    std::copy_n(v->value.data.begin(), c, out.data.begin() + r * c);
  return make_node(std::move(out), {v},
                   [](const NodeRef<T>&, const NodeRef<T>& gy, const std::vector<char>&) {
                     return std::vector<NodeRef<T>>{sum_except_last(gy)};
                   });
}

/// x + v broadcast over all leading axes (bias add).
template <typename T>
NodeRef<T> add_lastvec(const NodeRef<T>& x, const NodeRef<T>& v) {
  long c = x->value.dim(x->value.rank() - 1);
  if (v->value.rank() != 1 || v->value.dim(0) != c)
    throw std::invalid_argument("add_lastvec: bias shape " + shape_str(v->value.shape) +
                                " incompatible with " + shape_str(x->value.shape));
  Tensor<T> out = x->value;
  long rows = out.size() / std::max(c, 1L);
  for (long r = 0; r < rows; ++r)
    for (long i = 0; i < c; ++i) out.data[(size_t)(r * c + i)] += v->value.data[(size_t)i];
  return make_node(std::move(out), {x, v},
                   [](const NodeRef<T>&, const NodeRef<T>& gy, const std::vector<char>& need) {
                     std::vector<NodeRef<T>> g(2);
                     if (need[0]) g[0] = gy;
                     if (need[1]) g[1] = sum_except_last(gy);
                     return g;
                   });
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

template <typename T>
NodeRef<T> matmul(const NodeRef<T>& a, const NodeRef<T>& b, bool tA = false, bool tB = false) {
  const Tensor<T>& A = a->value;
  const Tensor<T>& B = b->value;
  if (A.rank() != 2 || B.rank() != 2) throw std::invalid_argument("matmul: rank-2 tensors required");
  long m = tA ? A.dim(1) : A.dim(0);
  long ka = tA ? A.dim(0) : A.dim(1);
  long kb = tB ? B.dim(1) : B.dim(0);
  long n = tB ? B.dim(0) : B.dim(1);
  if (ka != kb)
    throw std::invalid_argument("matmul: inner dimensions mismatch " + shape_str(A.shape) + " " +
                                shape_str(B.shape));
  Tensor<T> out(Shape{m, n});
  blas_gemm(tA, tB, m, n, ka, T(1), A.data.data(), A.dim(1), B.data.data(), B.dim(1), T(0),
            out.data.data(), n);
  return make_node(std::move(out), {a, b},
                   [tA, tB](const NodeRef<T>& self, const NodeRef<T>& gy,
                            const std::vector<char>& need) {
                     const auto& a = self->parents[0];
                     const auto& b = self->parents[1];
                     std::vector<NodeRef<T>> g(2);
                     if (!tA && !tB) {
                       if (need[0]) g[0] = matmul(gy, b, false, true);
                       if (need[1]) g[1] = matmul(a, gy, true, false);
                     } else if (!tA && tB) {
                       if (need[0]) g[0] = matmul(gy, b, false, false);
                       if (need[1]) g[1] = matmul(gy, a, true, false);
                     } else if (tA && !tB) {
                       if (need[0]) g[0] = matmul(b, gy, false, true);
                       if (need[1]) g[1] = matmul(a, gy, false, false);
                     } else {
                       if (need[0]) g[0] = matmul(b, gy, true, true);
                       if (need[1]) g[1] = matmul(gy, a, true, true);
                     }
                     return g;
                   });
}

/// Dense layer: x [n,a] * W [a,b] + bias [b].
template <typename T>
NodeRef<T> dense(const NodeRef<T>& x, const NodeRef<T>& W, const NodeRef<T>& b) {
  return add_lastvec(matmul(x, W), b);
}

// ---------------------------------------------------------------------------
// 1-D convolution family
//
// Kernel layout [kw, ci, co]; activations [n, L, ci]. conv1d_raw, convT1d_raw
// (the exact adjoint) and kgrad1d are mutually closed under differentiation.
// ---------------------------------------------------------------------------

struct ConvDims1D {
  long kw, stride, pad_l, pad_r;
};

namespace detail {

inline long conv_out_len(long L, const ConvDims1D& cd, const char* op) {
  long num = L + cd.pad_l + cd.pad_r - cd.kw;
  if (num < 0)
    throw std::invalid_argument(std::string(op) + ": input length " + std::to_string(L) +
                                " shorter than kernel");
  return num / cd.stride + 1;
}

template <typename T>
void im2col1d(const T* x, long L, long ci, const ConvDims1D& cd, long Lo, T* col) {
  // col [Lo, kw*ci]
  for (long t = 0; t < Lo; ++t) {
    T* row = col + t * cd.kw * ci;
    long base = t * cd.stride - cd.pad_l;
    for (long k = 0; k < cd.kw; ++k) {
      long src = base + k;
      if (src >= 0 && src < L)
        std::copy_n(x + src * ci, ci, row + k * ci);
      else
        std::fill_n(row + k * ci, ci, T(0));
    }
  }
}

template <typename T>
void col2im1d(const T* col, long L, long ci, const ConvDims1D& cd, long Lo, T* x) {
  // x [L, ci], accumulated
  for (long t = 0; t < Lo; ++t) {
    const T* row = col + t * cd.kw * ci;
    long base = t * cd.stride - cd.pad_l;
    for (long k = 0; k < cd.kw; ++k) {
      long dst = base + k;
      if (dst < 0 || dst >= L) continue;
      T* xp = x + dst * ci;
      const T* rp = row + k * ci;
      for (long i = 0; i < ci; ++i) xp[i] += rp[i];
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> conv1d_forward(const Tensor<T>& x, const Tensor<T>& K, const ConvDims1D& cd) {
  if (x.rank() != 3 || K.rank() != 3) throw std::invalid_argument("conv1d: bad ranks");
  long n = x.dim(0), L = x.dim(1), ci = x.dim(2);
  if (K.dim(0) != cd.kw || K.dim(1) != ci)
    throw std::invalid_argument("conv1d: kernel shape " + shape_str(K.shape) +
                                " incompatible with input " + shape_str(x.shape));
  long co = K.dim(2);
  long Lo = detail::conv_out_len(L, cd, "conv1d");
  Tensor<T> out(Shape{n, Lo, co});
  std::vector<T> col((size_t)(Lo * cd.kw * ci));
  for (long e = 0; e < n; ++e) {
    detail::im2col1d(x.data.data() + e * L * ci, L, ci, cd, Lo, col.data());
    blas_gemm(false, false, Lo, co, cd.kw * ci, T(1), col.data(), cd.kw * ci, K.data.data(), co,
              T(0), out.data.data() + e * Lo * co, co);
  }
  return out;
}

template <typename T>
Tensor<T> convT1d_forward(const Tensor<T>& y, const Tensor<T>& K, const ConvDims1D& cd, long Lin) {
  if (y.rank() != 3 || K.rank() != 3) throw std::invalid_argument("convT1d: bad ranks");
  long n = y.dim(0), Lo = y.dim(1), co = y.dim(2);
  if (K.dim(0) != cd.kw || K.dim(2) != co)
    throw std::invalid_argument("convT1d: kernel shape " + shape_str(K.shape) +
                                " incompatible with input " + shape_str(y.shape));
  long ci = K.dim(1);
  if (detail::conv_out_len(Lin, cd, "convT1d") != Lo)
    throw std::invalid_argument("convT1d: output length inconsistent with dims");
  Tensor<T> out(Shape{n, Lin, ci});
  std::vector<T> col((size_t)(Lo * cd.kw * ci));
  for (long e = 0; e < n; ++e) {
    blas_gemm(false, true, Lo, cd.kw * ci, co, T(1), y.data.data() + e * Lo * co, co,
              K.data.data(), co, T(0), col.data(), cd.kw * ci);
    detail::col2im1d(col.data(), Lin, ci, cd, Lo, out.data.data() + e * Lin * ci);
  }
  return out;
}

template <typename T>
Tensor<T> kgrad1d_forward(const Tensor<T>& x, const Tensor<T>& y, const ConvDims1D& cd) {
  long n = x.dim(0), L = x.dim(1), ci = x.dim(2);
  long Lo = y.dim(1), co = y.dim(2);
  if (y.dim(0) != n || detail::conv_out_len(L, cd, "kgrad1d") != Lo)
    throw std::invalid_argument("kgrad1d: shape mismatch");
  Tensor<T> out(Shape{cd.kw, ci, co});
  std::vector<T> col((size_t)(Lo * cd.kw * ci));
  for (long e = 0; e < n; ++e) {
    detail::im2col1d(x.data.data() + e * L * ci, L, ci, cd, Lo, col.data());
    blas_gemm(true, false, cd.kw * ci, co, Lo, T(1), col.data(), cd.kw * ci,
              y.data.data() + e * Lo * co, co, T(1), out.data.data(), co);
  }
  return out;
}

template <typename T>
NodeRef<T> convT1d_raw(const NodeRef<T>& y, const NodeRef<T>& k, ConvDims1D cd, long Lin);
template <typename T>
NodeRef<T> kgrad1d(const NodeRef<T>& x, const NodeRef<T>& y, ConvDims1D cd);

template <typename T>
NodeRef<T> conv1d_raw(const NodeRef<T>& x, const NodeRef<T>& k, ConvDims1D cd) {
  return make_node(conv1d_forward(x->value, k->value, cd), {x, k},
                   [cd](const NodeRef<T>& self, const NodeRef<T>& gy,
                        const std::vector<char>& need) {
                     const auto& x = self->parents[0];
                     const auto& k = self->parents[1];
                     std::vector<NodeRef<T>> g(2);
                     if (need[0]) g[0] = convT1d_raw(gy, k, cd, x->value.dim(1));
                     if (need[1]) g[1] = kgrad1d(x, gy, cd);
                     return g;
                   });
}

template <typename T>
NodeRef<T> convT1d_raw(const NodeRef<T>& y, const NodeRef<T>& k, ConvDims1D cd, long Lin) {
  return make_node(convT1d_forward(y->value, k->value, cd, Lin), {y, k},
                   [cd](const NodeRef<T>& self, const NodeRef<T>& gz,
                        const std::vector<char>& need) {
                     const auto& y = self->parents[0];
                     const auto& k = self->parents[1];
                     std::vector<NodeRef<T>> g(2);
                     if (need[0]) g[0] = conv1d_raw(gz, k, cd);
                     if (need[1]) g[1] = kgrad1d(gz, y, cd);
                     return g;
                   });
}

template <typename T>
NodeRef<T> kgrad1d(const NodeRef<T>& x, const NodeRef<T>& y, ConvDims1D cd) {
  return make_node(kgrad1d_forward(x->value, y->value, cd), {x, y},
                   [cd](const NodeRef<T>& self, const NodeRef<T>& gk,
                        const std::vector<char>& need) {
                     const auto& x = self->parents[0];
                     const auto& y = self->parents[1];
                     std::vector<NodeRef<T>> g(2);
                     if (need[0]) g[0] = convT1d_raw(y, gk, cd, x->value.dim(1));
                     if (need[1]) g[1] = conv1d_raw(x, gk, cd);
                     return g;
                   });
}

// ---------------------------------------------------------------------------
// 2-D convolution family (kernel [kh, kw, ci, co]; activations [n, H, W, ci])
// ---------------------------------------------------------------------------

struct ConvDims2D {
  long kh, kw, stride_h, stride_w, pad_h0, pad_h1, pad_w0, pad_w1;
};

namespace detail {

inline std::pair<long, long> conv_out_hw(long H, long W, const ConvDims2D& cd, const char* op) {
  long nh = H + cd.pad_h0 + cd.pad_h1 - cd.kh;
  long nw = W + cd.pad_w0 + cd.pad_w1 - cd.kw;
  if (nh < 0 || nw < 0)
    throw std::invalid_argument(std::string(op) + ": input smaller than kernel");
  return {nh / cd.stride_h + 1, nw / cd.stride_w + 1};
}

template <typename T>
void im2col2d(const T* x, long H, long W, long ci, const ConvDims2D& cd, long Ho, long Wo,
              T* col) {
  long patch = cd.kh * cd.kw * ci;
  for (long r = 0; r < Ho; ++r) {
    for (long c = 0; c < Wo; ++c) {
      T* row = col + (r * Wo + c) * patch;
      long base_h = r * cd.stride_h - cd.pad_h0;
      long base_w = c * cd.stride_w - cd.pad_w0;
      for (long kh = 0; kh < cd.kh; ++kh) {
        long sh = base_h + kh;
        for (long kw = 0; kw < cd.kw; ++kw) {
          long sw = base_w + kw;
          T* dst = row + (kh * cd.kw + kw) * ci;
          if (sh >= 0 && sh < H && sw >= 0 && sw < W)
            std::copy_n(x + (sh * W + sw) * ci, ci, dst);
          else
            std::fill_n(dst, ci, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im2d(const T* col, long H, long W, long ci, const ConvDims2D& cd, long Ho, long Wo,
              T* x) {
  long patch = cd.kh * cd.kw * ci;
  for (long r = 0; r < Ho; ++r) {
    for (long c = 0; c < Wo; ++c) {
      const T* row = col + (r * Wo + c) * patch;
      long base_h = r * cd.stride_h - cd.pad_h0;
      long base_w = c * cd.stride_w - cd.pad_w0;
      for (long kh = 0; kh < cd.kh; ++kh) {
        long sh = base_h + kh;
        if (sh < 0 || sh >= H) continue;
        for (long kw = 0; kw < cd.kw; ++kw) {
          long sw = base_w + kw;
          if (sw < 0 || sw >= W) continue;
          T* xp = x + (sh * W + sw) * ci;
          const T* rp = row + (kh * cd.kw + kw) * ci;
          for (long i = 0; i < ci; ++i) xp[i] += rp[i];
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& K, const ConvDims2D& cd) {
  if (x.rank() != 4 || K.rank() != 4) throw std::invalid_argument("conv2d: bad ranks");
  long n = x.dim(0), H = x.dim(1), W = x.dim(2), ci = x.dim(3);
  if (K.dim(0) != cd.kh || K.dim(1) != cd.kw || K.dim(2) != ci)
    throw std::invalid_argument("conv2d: kernel shape " + shape_str(K.shape) +
                                " incompatible with input " + shape_str(x.shape));
  long co = K.dim(3);
  auto [Ho, Wo] = detail::conv_out_hw(H, W, cd, "conv2d");
  long patch = cd.kh * cd.kw * ci;
  Tensor<T> out(Shape{n, Ho, Wo, co});
  std::vector<T> col((size_t)(Ho * Wo * patch));
  for (long e = 0; e < n; ++e) {
    detail::im2col2d(x.data.data() + e * H * W * ci, H, W, ci, cd, Ho, Wo, col.data());
    blas_gemm(false, false, Ho * Wo, co, patch, T(1), col.data(), patch, K.data.data(), co, T(0),
              out.data.data() + e * Ho * Wo * co, co);
  }
  return out;
}

template <typename T>
Tensor<T> convT2d_forward(const Tensor<T>& y, const Tensor<T>& K, const ConvDims2D& cd, long Hin,
                          long Win) {
  if (y.rank() != 4 || K.rank() != 4) throw std::invalid_argument("convT2d: bad ranks");
  long n = y.dim(0), Ho = y.dim(1), Wo = y.dim(2), co = y.dim(3);
  if (K.dim(0) != cd.kh || K.dim(1) != cd.kw || K.dim(3) != co)
    throw std::invalid_argument("convT2d: kernel incompatible with input");
  long ci = K.dim(2);
  auto [eh, ew] = detail::conv_out_hw(Hin, Win, cd, "convT2d");
  if (eh != Ho || ew != Wo) throw std::invalid_argument("convT2d: output size inconsistent");
  long patch = cd.kh * cd.kw * ci;
  Tensor<T> out(Shape{n, Hin, Win, ci});
  std::vector<T> col((size_t)(Ho * Wo * patch));
  for (long e = 0; e < n; ++e) {
    blas_gemm(false, true, Ho * Wo, patch, co, T(1), y.data.data() + e * Ho * Wo * co, co,
              K.data.data(), co, T(0), col.data(), patch);
    detail::col2im2d(col.data(), Hin, Win, ci, cd, Ho, Wo, out.data.data() + e * Hin * Win * ci);
  }
  return out;
}

template <typename T>
Tensor<T> kgrad2d_forward(const Tensor<T>& x, const Tensor<T>& y, const ConvDims2D& cd) {
  long n = x.dim(0), H = x.dim(1), W = x.dim(2), ci = x.dim(3);
  long Ho = y.dim(1), Wo = y.dim(2), co = y.dim(3);
  auto [eh, ew] = detail::conv_out_hw(H, W, cd, "kgrad2d");
  if (y.dim(0) != n || eh != Ho || ew != Wo) throw std::invalid_argument("kgrad2d: shape mismatch");
  long patch = cd.kh * cd.kw * ci;
  Tensor<T> out(Shape{cd.kh, cd.kw, ci, co});
  std::vector<T> col((size_t)(Ho * Wo * patch));
  for (long e = 0; e < n; ++e) {
    detail::im2col2d(x.data.data() + e * H * W * ci, H, W, ci, cd, Ho, Wo, col.data());
    blas_gemm(true, false, patch, co, Ho * Wo, T(1), col.data(), patch,
              y.data.data() + e * Ho * Wo * co, co, T(1), out.data.data(), co);
  }
  return out;
}

template <typename T>
NodeRef<T> convT2d_raw(const NodeRef<T>& y, const NodeRef<T>& k, ConvDims2D cd, long Hin,
                       long Win);
template <typename T>
NodeRef<T> kgrad2d(const NodeRef<T>& x, const NodeRef<T>& y, ConvDims2D cd);

template <typename T>
NodeRef<T> conv2d_raw(const NodeRef<T>& x, const NodeRef<T>& k, ConvDims2D cd) {
  return make_node(conv2d_forward(x->value, k->value, cd), {x, k},
                   [cd](const NodeRef<T>& self, const NodeRef<T>& gy,
                        const std::vector<char>& need) {
                     const auto& x = self->parents[0];
                     const auto& k = self->parents[1];
                     std::vector<NodeRef<T>> g(2);
                     if (need[0])
                       g[0] = convT2d_raw(gy, k, cd, x->value.dim(1), x->value.dim(2));
                     if (need[1]) g[1] = kgrad2d(x, gy, cd);
                     return g;
                   });
}

template <typename T>
NodeRef<T> convT2d_raw(const NodeRef<T>& y, const NodeRef<T>& k, ConvDims2D cd, long Hin,
                       long Win) {
  return make_node(convT2d_forward(y->value, k->value, cd, Hin, Win), {y, k},
                   [cd](const NodeRef<T>& self, const NodeRef<T>& gz,
                        const std::vector<char>& need) {
                     const auto& y = self->parents[0];
                     const auto& k = self->parents[1];
                     std::vector<NodeRef<T>> g(2);
                     if (need[0]) g[0] = conv2d_raw(gz, k, cd);
                     if (need[1]) g[1] = kgrad2d(gz, y, cd);
                     return g;
                   });
}

template <typename T>
NodeRef<T> kgrad2d(const NodeRef<T>& x, const NodeRef<T>& y, ConvDims2D cd) {
  return make_node(kgrad2d_forward(x->value, y->value, cd), {x, y},
                   [cd](const NodeRef<T>& self, const NodeRef<T>& gk,
                        const std::vector<char>& need) {
                     const auto& x = self->parents[0];
                     const auto& y = self->parents[1];
                     std::vector<NodeRef<T>> g(2);
                     if (need[0]) g[0] = convT2d_raw(y, gk, cd, x->value.dim(1), x->value.dim(2));
                     if (need[1]) g[1] = conv2d_raw(x, gk, cd);
                     return g;
                   });
}

// ---------------------------------------------------------------------------
// time shift with reflection fill (phase shuffle core)
// ---------------------------------------------------------------------------

namespace detail {

// Mirror-excluding-edge reflection of an out-of-range index.
inline long reflect_index(long j, long L) {
  while (j < 0 || j >= L) {
    if (j < 0) j = -j;
    if (j >= L) j = 2 * (L - 1) - j;
  }
  return j;
}

}  // namespace detail

/// Shift each example (or each channel, when `per_channel`) along time by its
/// entry in `shifts`, filling vacated samples by reflection. Linear map; the
/// backward pass is the exact adjoint (reverse scatter).
template <typename T>
NodeRef<T> time_shift_reflect(const NodeRef<T>& x, std::shared_ptr<const std::vector<long>> shifts,
                              bool per_channel, bool adjoint = false) {
  const Tensor<T>& in = x->value;
  if (in.rank() != 3) throw std::invalid_argument("time_shift_reflect: expected [n,L,ch]");
  long n = in.dim(0), L = in.dim(1), ch = in.dim(2);
  size_t want = per_channel ? (size_t)(n * ch) : (size_t)n;
  if (shifts->size() != want)
    throw std::invalid_argument("time_shift_reflect: wrong number of shifts");
  Tensor<T> out(in.shape);
  std::vector<long> map((size_t)L);
  for (long e = 0; e < n; ++e) {
    for (long c = 0; c < ch; ++c) {
      long k = (*shifts)[per_channel ? (size_t)(e * ch + c) : (size_t)e];
      if (c == 0 || per_channel)
        for (long t = 0; t < L; ++t) map[(size_t)t] = detail::reflect_index(t - k, L);
      const T* src = in.data.data() + e * L * ch;
      T* dst = out.data.data() + e * L * ch;
      if (!adjoint) {
        for (long t = 0; t < L; ++t) dst[t * ch + c] = src[map[(size_t)t] * ch + c];
      } else {
        for (long t = 0; t < L; ++t) dst[map[(size_t)t] * ch + c] += src[t * ch + c];
      }
    }
  }
  return make_node(std::move(out), {x},
                   [shifts, per_channel, adjoint](const NodeRef<T>&, const NodeRef<T>& gy,
                                                  const std::vector<char>&) {
                     return std::vector<NodeRef<T>>{
                         time_shift_reflect(gy, shifts, per_channel, !adjoint)};
                   });
}

// ---------------------------------------------------------------------------
// upsampling (zero insertion / nearest / linear / cubic)
// ---------------------------------------------------------------------------

enum class UpsampleMode { ZeroInsertion, Nearest, Linear, Cubic };

inline UpsampleMode parse_upsample_mode(const std::string& s) {
  if (s == "zero" || s == "zero-insertion" || s == "tconv") return UpsampleMode::ZeroInsertion;
  if (s == "nearest") return UpsampleMode::Nearest;
  if (s == "linear") return UpsampleMode::Linear;
  if (s == "cubic") return UpsampleMode::Cubic;
  throw std::invalid_argument("unknown upsample mode: " + s);
}

namespace detail {

struct UpTap {
  long src;
  double w;
};

// Interpolation taps for output index j, input length L.
inline void upsample_taps(UpsampleMode mode, long j, long L, long factor,
                          std::vector<UpTap>& taps) {
  taps.clear();
  long i = j / factor;
  long r = j % factor;
  double f = (double)r / (double)factor;
  auto clampi = [L](long v) { return std::min(std::max(v, 0L), L - 1); };
  switch (mode) {
    case UpsampleMode::ZeroInsertion:
      if (r == 0) taps.push_back({i, 1.0});
      break;
    case UpsampleMode::Nearest:
      taps.push_back({i, 1.0});
      break;
    case UpsampleMode::Linear:
      if (r == 0) {
        taps.push_back({i, 1.0});
      } else {
        taps.push_back({i, 1.0 - f});
        taps.push_back({clampi(i + 1), f});
      }
      break;
    case UpsampleMode::Cubic: {
      if (r == 0) {
        taps.push_back({i, 1.0});
      } else {
        // Catmull-Rom weights, edges clamped
        double f2 = f * f, f3 = f2 * f;
        double w0 = -0.5 * f3 + f2 - 0.5 * f;
        double w1 = 1.5 * f3 - 2.5 * f2 + 1.0;
        double w2 = -1.5 * f3 + 2.0 * f2 + 0.5 * f;
        double w3 = 0.5 * f3 - 0.5 * f2;
        taps.push_back({clampi(i - 1), w0});
        taps.push_back({i, w1});
        taps.push_back({clampi(i + 1), w2});
        taps.push_back({clampi(i + 2), w3});
      }
      break;
    }
  }
}

}  // namespace detail

template <typename T>
NodeRef<T> upsample1d_adj(const NodeRef<T>& y, UpsampleMode mode, long factor, long Lin);

/// [n,L,ch] -> [n,factor*L,ch].
template <typename T>
NodeRef<T> upsample1d(const NodeRef<T>& x, UpsampleMode mode, long factor) {
  const Tensor<T>& in = x->value;
  if (in.rank() != 3) throw std::invalid_argument("upsample1d: expected [n,L,ch]");
  long n = in.dim(0), L = in.dim(1), ch = in.dim(2);
  if ((mode == UpsampleMode::Linear || mode == UpsampleMode::Cubic) && L < 2)
    throw std::invalid_argument("upsample1d: interpolating modes require L >= 2");
  long Lo = L * factor;
  Tensor<T> out(Shape{n, Lo, ch});
  std::vector<detail::UpTap> taps;
  for (long j = 0; j < Lo; ++j) {
    detail::upsample_taps(mode, j, L, factor, taps);
    for (long e = 0; e < n; ++e) {
      const T* src = in.data.data() + e * L * ch;
      T* dst = out.data.data() + (e * Lo + j) * ch;
      for (const auto& tap : taps)
        for (long c = 0; c < ch; ++c) dst[c] += (T)tap.w * src[tap.src * ch + c];
    }
  }
  return make_node(std::move(out), {x},
                   [mode, factor, L](const NodeRef<T>&, const NodeRef<T>& gy,
                                     const std::vector<char>&) {
                     return std::vector<NodeRef<T>>{upsample1d_adj(gy, mode, factor, L)};
                   });
}

template <typename T>
NodeRef<T> upsample1d_adj(const NodeRef<T>& y, UpsampleMode mode, long factor, long Lin) {
  const Tensor<T>& in = y->value;
  long n = in.dim(0), Lo = in.dim(1), ch = in.dim(2);
  if (Lo != Lin * factor) throw std::invalid_argument("upsample1d_adj: length mismatch");
  Tensor<T> out(Shape{n, Lin, ch});
  std::vector<detail::UpTap> taps;
  for (long j = 0; j < Lo; ++j) {
    detail::upsample_taps(mode, j, Lin, factor, taps);
    for (long e = 0; e < n; ++e) {
      const T* src = in.data.data() + (e * Lo + j) * ch;
      T* dst = out.data.data() + e * Lin * ch;
      for (const auto& tap : taps)
        for (long c = 0; c < ch; ++c) dst[tap.src * ch + c] += (T)tap.w * src[c];
    }
  }
  return make_node(std::move(out), {y},
                   [mode, factor](const NodeRef<T>&, const NodeRef<T>& gy,
                                  const std::vector<char>&) {
                     return std::vector<NodeRef<T>>{upsample1d(gy, mode, factor)};
                   });
}

// ---------------------------------------------------------------------------
// 2x2 max pooling (classifier)
// ---------------------------------------------------------------------------

template <typename T>
NodeRef<T> unpool2x2_scatter(const NodeRef<T>& gy, std::shared_ptr<const std::vector<uint8_t>> idx,
                             long H, long W);

template <typename T>
NodeRef<T> maxpool2x2(const NodeRef<T>& x) {
  const Tensor<T>& in = x->value;
  if (in.rank() != 4) throw std::invalid_argument("maxpool2x2: expected [n,H,W,c]");
  long n = in.dim(0), H = in.dim(1), W = in.dim(2), c = in.dim(3);
  if (H % 2 || W % 2) throw std::invalid_argument("maxpool2x2: odd spatial size");
  long Ho = H / 2, Wo = W / 2;
  Tensor<T> out(Shape{n, Ho, Wo, c});
  auto idx = std::make_shared<std::vector<uint8_t>>((size_t)(n * Ho * Wo * c));
  for (long e = 0; e < n; ++e)
    for (long r = 0; r < Ho; ++r)
      for (long q = 0; q < Wo; ++q)
        for (long ci = 0; ci < c; ++ci) {
          T best = in.data[(size_t)(((e * H + 2 * r) * W + 2 * q) * c + ci)];
          uint8_t bi = 0;
          for (uint8_t k = 1; k < 4; ++k) {
            long rr = 2 * r + k / 2, qq = 2 * q + k % 2;
            T v = in.data[(size_t)(((e * H + rr) * W + qq) * c + ci)];
            if (v > best) {
              best = v;
              bi = k;
            }
          }
          long o = ((e * Ho + r) * Wo + q) * c + ci;
          out.data[(size_t)o] = best;
          (*idx)[(size_t)o] = bi;
        }
  return make_node(std::move(out), {x},
                   [idx, H, W](const NodeRef<T>&, const NodeRef<T>& gy, const std::vector<char>&) {
                     return std::vector<NodeRef<T>>{unpool2x2_scatter(gy, idx, H, W)};
                   });
}

template <typename T>
NodeRef<T> pool2x2_gather(const NodeRef<T>& x, std::shared_ptr<const std::vector<uint8_t>> idx);

template <typename T>
NodeRef<T> unpool2x2_scatter(const NodeRef<T>& gy, std::shared_ptr<const std::vector<uint8_t>> idx,
                             long H, long W) {
  const Tensor<T>& in = gy->value;
  long n = in.dim(0), Ho = in.dim(1), Wo = in.dim(2), c = in.dim(3);
  Tensor<T> out(Shape{n, H, W, c});
  for (long e = 0; e < n; ++e)
    for (long r = 0; r < Ho; ++r)
      for (long q = 0; q < Wo; ++q)
        for (long ci = 0; ci < c; ++ci) {
          long o = ((e * Ho + r) * Wo + q) * c + ci;
          uint8_t k = (*idx)[(size_t)o];
          long rr = 2 * r + k / 2, qq = 2 * q + k % 2;
          out.data[(size_t)(((e * H + rr) * W + qq) * c + ci)] += in.data[(size_t)o];
        }
  return make_node(std::move(out), {gy},
                   [idx](const NodeRef<T>&, const NodeRef<T>& g, const std::vector<char>&) {
                     return std::vector<NodeRef<T>>{pool2x2_gather(g, idx)};
                   });
}

template <typename T>
NodeRef<T> pool2x2_gather(const NodeRef<T>& x, std::shared_ptr<const std::vector<uint8_t>> idx) {
  const Tensor<T>& in = x->value;
  long n = in.dim(0), H = in.dim(1), W = in.dim(2), c = in.dim(3);
  long Ho = H / 2, Wo = W / 2;
  Tensor<T> out(Shape{n, Ho, Wo, c});
  for (long e = 0; e < n; ++e)
    for (long r = 0; r < Ho; ++r)
      for (long q = 0; q < Wo; ++q)
        for (long ci = 0; ci < c; ++ci) {
          long o = ((e * Ho + r) * Wo + q) * c + ci;
          uint8_t k = (*idx)[(size_t)o];
          long rr = 2 * r + k / 2, qq = 2 * q + k % 2;
          out.data[(size_t)o] = in.data[(size_t)(((e * H + rr) * W + qq) * c + ci)];
        }
  return make_node(std::move(out), {x},
                   [idx, H, W](const NodeRef<T>&, const NodeRef<T>& g, const std::vector<char>&) {
                     return std::vector<NodeRef<T>>{unpool2x2_scatter(g, idx, H, W)};
                   });
}

// ---------------------------------------------------------------------------
// softmax cross-entropy (first-order backward; classifier training only)
// ---------------------------------------------------------------------------

template <typename T>
NodeRef<T> softmax_xent(const NodeRef<T>& logits, const std::vector<int>& labels) {
  const Tensor<T>& in = logits->value;
  if (in.rank() != 2) throw std::invalid_argument("softmax_xent: expected [n,k] logits");
  long n = in.dim(0), k = in.dim(1);
  if ((long)labels.size() != n) throw std::invalid_argument("softmax_xent: label count mismatch");
  Tensor<T> pm(in.shape);  // (softmax - onehot) / n
  double loss = 0;
  for (long e = 0; e < n; ++e) {
    const T* row = in.data.data() + e * k;
    double mx = row[0];
    for (long i = 1; i < k; ++i) mx = std::max(mx, (double)row[i]);
    double sum = 0;
    for (long i = 0; i < k; ++i) sum += std::exp((double)row[i] - mx);
    double lse = mx + std::log(sum);
    int lab = labels[(size_t)e];
    if (lab < 0 || lab >= k) throw std::invalid_argument("softmax_xent: label out of range");
    loss += lse - (double)row[lab];
    for (long i = 0; i < k; ++i)
      pm.data[(size_t)(e * k + i)] =
          (T)((std::exp((double)row[i] - lse) - (i == lab ? 1.0 : 0.0)) / (double)n);
  }
  auto pmc = constant(std::move(pm));
  Shape shp = in.shape;
  return make_node(Tensor<T>::scalar((T)(loss / (double)n)), {logits},
                   [pmc, shp](const NodeRef<T>&, const NodeRef<T>& gy, const std::vector<char>&) {
                     return std::vector<NodeRef<T>>{mul(broadcast_all(gy, shp), pmc)};
                   });
}

// ---------------------------------------------------------------------------
// stochastic layers
// ---------------------------------------------------------------------------

/// Phase shuffle: per example (or per channel) draw k ~ U{-n_shift..n_shift}
/// and shift along time, reflecting at the edges.
template <typename T, typename Rng>
NodeRef<T> phase_shuffle(const NodeRef<T>& x, long n_shift, Rng& rng, bool per_channel = false) {
  const Tensor<T>& in = x->value;
  if (in.rank() != 3) throw std::invalid_argument("phase_shuffle: expected [n,L,ch]");
  if (n_shift < 0) throw std::invalid_argument("phase_shuffle: negative n_shift");
  if (2 * n_shift >= in.dim(1))
    throw std::invalid_argument("phase_shuffle: 2*n_shift must be < sequence length");
  if (n_shift == 0) return x;
  long count = per_channel ? in.dim(0) * in.dim(2) : in.dim(0);
  auto shifts = std::make_shared<std::vector<long>>((size_t)count);
  std::uniform_int_distribution<long> dist(-n_shift, n_shift);
  for (auto& s : *shifts) s = dist(rng);
  return time_shift_reflect(x, shifts, per_channel);
}

/// Inverted dropout; identity when not training or rate == 0.
template <typename T, typename Rng>
NodeRef<T> dropout(const NodeRef<T>& x, double rate, Rng& rng, bool training) {
  if (rate < 0 || rate >= 1) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (!training || rate == 0) return x;
  Tensor<T> mask(x->value.shape);
  std::bernoulli_distribution keep(1.0 - rate);
  T sc = (T)(1.0 / (1.0 - rate));
  for (auto& m : mask.data) m = keep(rng) ? sc : T(0);
  return mul(x, constant(std::move(mask)));
}

}  // namespace wavegen

#endif
