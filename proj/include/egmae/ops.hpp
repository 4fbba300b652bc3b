#pragma once

// Differentiable operations. All reductions run in a fixed sequential order
// so outputs and gradients are bit-reproducible.

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "egmae/errors.hpp"
#include "egmae/tensor.hpp"

namespace egmae {

namespace detail {

template <typename T>
std::vector<T>* grad_sink(const std::shared_ptr<Node<T>>& n) {
  if (!n || !n->requires_grad) return nullptr;
  return &n->ensure_grad();
}

template <typename T>
void require_ndim(const Tensor<T>& t, std::size_t nd, const char* op, const char* name) {
  if (t.ndim() != nd) {
    throw DimensionError(std::string(op) + ": " + name + " must be " + std::to_string(nd) +
                         "-D, got shape " + shape_str(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace detail

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

/// 2-D convolution over NCHW input with OIHW weights. groups == channels
/// gives a depthwise convolution.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const std::optional<Tensor<T>>& bias, Conv2dOptions opt = {}) {
  detail::require_ndim(input, 4, "conv2d", "input");
  detail::require_ndim(weight, 4, "conv2d", "weight");
  if (opt.stride == 0) throw ParameterError("conv2d: stride must be positive");
  if (opt.groups == 0) throw ParameterError("conv2d: groups must be positive");
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t O = weight.dim(0), Cg = weight.dim(1), KH = weight.dim(2), KW = weight.dim(3);
  const std::size_t G = opt.groups, S = opt.stride, P = opt.padding;
  if (C % G != 0) {
    throw DimensionError("conv2d: input axis 1 (channels=" + std::to_string(C) +
                         ") not divisible by groups=" + std::to_string(G));
  }
  if (O % G != 0) {
    throw DimensionError("conv2d: weight axis 0 (out channels=" + std::to_string(O) +
                         ") not divisible by groups=" + std::to_string(G));
  }
  if (Cg != C / G) {
    throw DimensionError("conv2d: weight axis 1 is " + std::to_string(Cg) + ", expected channels/groups=" +
                         std::to_string(C / G));
  }
  if (H + 2 * P < KH) {
    throw DimensionError("conv2d: kernel height " + std::to_string(KH) + " exceeds padded input axis 2 (" +
                         std::to_string(H + 2 * P) + ")");
  }
  if (W + 2 * P < KW) {
    throw DimensionError("conv2d: kernel width " + std::to_string(KW) + " exceeds padded input axis 3 (" +
                         std::to_string(W + 2 * P) + ")");
  }
  if (bias && (bias->ndim() != 1 || bias->dim(0) != O)) {
    throw DimensionError("conv2d: bias axis 0 must equal out channels " + std::to_string(O) + ", got " +
                         shape_str(bias->shape()));
  }
  const std::size_t OH = (H + 2 * P - KH) / S + 1;
  const std::size_t OW = (W + 2 * P - KW) / S + 1;
  const std::size_t Og = O / G;
  const bool pointwise = KH == 1 && KW == 1 && S == 1 && P == 0;

  const auto& x = input.vec();
  const auto& w = weight.vec();
  std::vector<T> out(N * O * OH * OW, T(0));

  // Valid output range [lo, hi) along one axis for kernel tap k.
  auto valid_range = [S, P](std::size_t k, std::size_t in_size, std::size_t out_size) {
    // in = o*S + k - P must lie in [0, in_size)
    std::size_t lo = 0;
    if (k < P) lo = (P - k + S - 1) / S;
    std::size_t hi = 0;
    if (in_size + P > k) hi = std::min(out_size, (in_size + P - k - 1) / S + 1);
    return std::pair{lo, std::max(lo, hi)};
  };

  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t g = 0; g < G; ++g) {
      for (std::size_t oc = g * Og; oc < (g + 1) * Og; ++oc) {
        T* op = out.data() + (n * O + oc) * OH * OW;
        if (bias) std::fill(op, op + OH * OW, bias->vec()[oc]);
        for (std::size_t icl = 0; icl < Cg; ++icl) {
          const std::size_t ic = g * Cg + icl;
          const T* ip = x.data() + (n * C + ic) * H * W;
          const T* wp = w.data() + (oc * Cg + icl) * KH * KW;
          if (pointwise) {
            const T wv = wp[0];
            for (std::size_t i = 0; i < H * W; ++i) op[i] += wv * ip[i];
            continue;
          }
          for (std::size_t ky = 0; ky < KH; ++ky) {
            const auto [oy0, oy1] = valid_range(ky, H, OH);
            for (std::size_t kx = 0; kx < KW; ++kx) {
              const auto [ox0, ox1] = valid_range(kx, W, OW);
              const T wv = wp[ky * KW + kx];
              for (std::size_t oy = oy0; oy < oy1; ++oy) {
                const T* row = ip + (oy * S + ky - P) * W;
                T* orow = op + oy * OW;
                for (std::size_t ox = ox0; ox < ox1; ++ox) orow[ox] += wv * row[ox * S + kx - P];
              }
            }
          }
        }
      }
    }
  }

  auto in_node = input.node();
  auto w_node = weight.node();
  std::shared_ptr<detail::Node<T>> b_node = bias ? bias->node() : nullptr;
  std::vector<Tensor<T>> inputs{input, weight};
  if (bias) inputs.push_back(*bias);

  return Tensor<T>::make_result(
      {N, O, OH, OW}, std::move(out), std::move(inputs),
      [=](const detail::Node<T>& self) {
        const auto& gy = self.grad;
        auto* gx = detail::grad_sink(in_node);
        auto* gw = detail::grad_sink(w_node);
        auto* gb = detail::grad_sink(b_node);
        const auto& xv = in_node->data;
        const auto& wv_all = w_node->data;
        if (gb) {
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t oc = 0; oc < O; ++oc) {
              const T* gp = gy.data() + (n * O + oc) * OH * OW;
              T acc = T(0);
              for (std::size_t i = 0; i < OH * OW; ++i) acc += gp[i];
              (*gb)[oc] += acc;
            }
        }
        if (!gx && !gw) return;
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t g = 0; g < G; ++g) {
            for (std::size_t oc = g * Og; oc < (g + 1) * Og; ++oc) {
              const T* gp = gy.data() + (n * O + oc) * OH * OW;
              for (std::size_t icl = 0; icl < Cg; ++icl) {
                const std::size_t ic = g * Cg + icl;
                const T* ip = xv.data() + (n * C + ic) * H * W;
                T* gip = gx ? gx->data() + (n * C + ic) * H * W : nullptr;
                const T* wp = wv_all.data() + (oc * Cg + icl) * KH * KW;
                T* gwp = gw ? gw->data() + (oc * Cg + icl) * KH * KW : nullptr;
                if (pointwise) {
                  if (gip) {
                    const T wv = wp[0];
                    for (std::size_t i = 0; i < H * W; ++i) gip[i] += wv * gp[i];
                  }
                  if (gwp) {
                    T acc = T(0);
                    for (std::size_t i = 0; i < H * W; ++i) acc += gp[i] * ip[i];
                    gwp[0] += acc;
                  }
                  continue;
                }
                for (std::size_t ky = 0; ky < KH; ++ky) {
                  const auto [oy0, oy1] = valid_range(ky, H, OH);
                  for (std::size_t kx = 0; kx < KW; ++kx) {
                    const auto [ox0, ox1] = valid_range(kx, W, OW);
                    const T wv = wp[ky * KW + kx];
                    T acc = T(0);
                    for (std::size_t oy = oy0; oy < oy1; ++oy) {
                      const std::size_t base = (oy * S + ky - P) * W;
                      const T* grow = gp + oy * OW;
                      if (gip) {
                        T* girow = gip + base;
                        for (std::size_t ox = ox0; ox < ox1; ++ox) girow[ox * S + kx - P] += wv * grow[ox];
                      }
                      if (gwp) {
                        const T* row = ip + base;
                        for (std::size_t ox = ox0; ox < ox1; ++ox) acc += grow[ox] * row[ox * S + kx - P];
                      }
                    }
                    if (gwp) gwp[ky * KW + kx] += acc;
                  }
                }
              }
            }
          }
        }
      });
}

/// Layer normalization across axis 1 (channels) at every other index, for
/// N×C or N×C×H×W input; gamma and beta have shape [C].
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, double eps) {
  if (!(eps > 0.0)) throw ParameterError("layer_norm: eps must be positive, got " + std::to_string(eps));
  if (input.ndim() != 2 && input.ndim() != 4) {
    throw DimensionError("layer_norm: input must be 2-D or 4-D, got shape " + shape_str(input.shape()));
  }
  const std::size_t N = input.dim(0), C = input.dim(1);
  const std::size_t S = input.ndim() == 4 ? input.dim(2) * input.dim(3) : 1;
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) {
    throw DimensionError("layer_norm: gamma/beta must have shape [" + std::to_string(C) + "] matching axis 1, got " +
                         shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
  }
  const auto& x = input.vec();
  const auto& ga = gamma.vec();
  const auto& be = beta.vec();
  std::vector<T> out(x.size());
  std::vector<T> xhat(x.size());
  std::vector<T> rstd(N * S);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t s = 0; s < S; ++s) {
      const std::size_t base = n * C * S + s;
      T mean = T(0);
      for (std::size_t c = 0; c < C; ++c) mean += x[base + c * S];
      mean /= T(C);
      T var = T(0);
      for (std::size_t c = 0; c < C; ++c) {
        const T d = x[base + c * S] - mean;
        var += d * d;
      }
      var /= T(C);
      const T r = T(1) / std::sqrt(var + T(eps));
      rstd[n * S + s] = r;
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t i = base + c * S;
        xhat[i] = (x[i] - mean) * r;
        out[i] = ga[c] * xhat[i] + be[c];
      }
    }
  }
  auto in_node = input.node();
  auto g_node = gamma.node();
  auto b_node = beta.node();
  return Tensor<T>::make_result(
      input.shape(), std::move(out), {input, gamma, beta},
      [=, xhat = std::move(xhat), rstd = std::move(rstd)](const detail::Node<T>& self) {
        const auto& gy = self.grad;
        auto* gx = detail::grad_sink(in_node);
        auto* gg = detail::grad_sink(g_node);
        auto* gbeta = detail::grad_sink(b_node);
        const auto& gam = g_node->data;
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t s = 0; s < S; ++s) {
            const std::size_t base = n * C * S + s;
            T mean_d = T(0), mean_dx = T(0);
            for (std::size_t c = 0; c < C; ++c) {
              const std::size_t i = base + c * S;
              const T d = gy[i] * gam[c];
              mean_d += d;
              mean_dx += d * xhat[i];
              if (gg) (*gg)[c] += gy[i] * xhat[i];
              if (gbeta) (*gbeta)[c] += gy[i];
            }
            if (!gx) continue;
            mean_d /= T(C);
            mean_dx /= T(C);
            const T r = rstd[n * S + s];
            for (std::size_t c = 0; c < C; ++c) {
              const std::size_t i = base + c * S;
              (*gx)[i] += r * (gy[i] * gam[c] - mean_d - xhat[i] * mean_dx);
            }
          }
        }
      });
}

/// Exact GELU, x·Φ(x) with the erf form of the normal CDF.
template <typename T>
Tensor<T> gelu(const Tensor<T>& input) {
  const auto& x = input.vec();
  std::vector<T> out(x.size());
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * inv_sqrt2));
  auto in_node = input.node();
  return Tensor<T>::make_result(input.shape(), std::move(out), {input}, [in_node](const detail::Node<T>& self) {
    auto* gx = detail::grad_sink(in_node);
    if (!gx) return;
    constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
    const auto& xv = in_node->data;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const T cdf = T(0.5) * (T(1) + std::erf(xv[i] * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * xv[i] * xv[i]);
      (*gx)[i] += self.grad[i] * (cdf + xv[i] * pdf);
    }
  });
}

/// NCHW -> NC spatial mean.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  detail::require_ndim(input, 4, "global_avg_pool", "input");
  const std::size_t N = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
  const auto& x = input.vec();
  std::vector<T> out(N * C);
  for (std::size_t i = 0; i < N * C; ++i) {
    T acc = T(0);
    for (std::size_t k = 0; k < HW; ++k) acc += x[i * HW + k];
    out[i] = acc / T(HW);
  }
  auto in_node = input.node();
  return Tensor<T>::make_result({N, C}, std::move(out), {input}, [=](const detail::Node<T>& self) {
    auto* gx = detail::grad_sink(in_node);
    if (!gx) return;
    for (std::size_t i = 0; i < N * C; ++i) {
      const T g = self.grad[i] / T(HW);
      for (std::size_t k = 0; k < HW; ++k) (*gx)[i * HW + k] += g;
    }
  });
}

/// Row-wise softmax of an N×C tensor, stabilised by max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  detail::require_ndim(logits, 2, "softmax", "logits");
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  const auto& x = logits.vec();
  std::vector<T> out(x.size());
  for (std::size_t n = 0; n < N; ++n) {
    const T* row = x.data() + n * C;
    T* orow = out.data() + n * C;
    T mx = row[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    T sum = T(0);
    for (std::size_t c = 0; c < C; ++c) {
      orow[c] = std::exp(row[c] - mx);
      sum += orow[c];
    }
    for (std::size_t c = 0; c < C; ++c) orow[c] /= sum;
  }
  auto in_node = logits.node();
  std::vector<T> probs = out;
  return Tensor<T>::make_result({N, C}, std::move(out), {logits},
                                [=, probs = std::move(probs)](const detail::Node<T>& self) {
                                  auto* gx = detail::grad_sink(in_node);
                                  if (!gx) return;
                                  for (std::size_t n = 0; n < N; ++n) {
                                    T dot = T(0);
                                    for (std::size_t c = 0; c < C; ++c) dot += self.grad[n * C + c] * probs[n * C + c];
                                    for (std::size_t c = 0; c < C; ++c) {
                                      const std::size_t i = n * C + c;
                                      (*gx)[i] += probs[i] * (self.grad[i] - dot);
                                    }
                                  }
                                });
}

/// Mean of squared differences; an optional constant weight tensor restricts
/// the mean to the weighted elements: sum(w·d²)/sum(w).
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& prediction, const Tensor<T>& target,
                   std::span<const T> weights = {}) {
  detail::require_same_shape(prediction, target, "mse_loss");
  const auto& p = prediction.vec();
  const auto& t = target.vec();
  if (!weights.empty() && weights.size() != p.size()) {
    throw DimensionError("mse_loss: weight count " + std::to_string(weights.size()) +
                         " does not match element count " + std::to_string(p.size()));
  }
  T denom = T(0);
  if (weights.empty()) {
    denom = T(p.size());
  } else {
    for (T w : weights) denom += w;
    if (!(denom > T(0))) throw ContractError("mse_loss: weights select no elements");
  }
  T acc = T(0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T d = p[i] - t[i];
    acc += (weights.empty() ? T(1) : weights[i]) * d * d;
  }
  std::vector<T> wcopy(weights.begin(), weights.end());
  auto p_node = prediction.node();
  auto t_node = target.node();
  return Tensor<T>::make_result(
      {1}, {acc / denom}, {prediction, target},
      [=, wcopy = std::move(wcopy)](const detail::Node<T>& self) {
        auto* gp = detail::grad_sink(p_node);
        auto* gt = detail::grad_sink(t_node);
        const T scale = T(2) * self.grad[0] / denom;
        for (std::size_t i = 0; i < p_node->data.size(); ++i) {
          const T w = wcopy.empty() ? T(1) : wcopy[i];
          const T g = scale * w * (p_node->data[i] - t_node->data[i]);
          if (gp) (*gp)[i] += g;
          if (gt) (*gt)[i] -= g;
        }
      });
}

namespace detail {
template <typename T>
void check_labels(std::span<const std::size_t> labels, std::size_t N, std::size_t C, const char* op) {
  if (labels.size() != N) {
    throw DimensionError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(N) + " rows");
  }
  for (std::size_t n = 0; n < N; ++n) {
    if (labels[n] >= C) {
      throw IndexError(std::string(op) + ": label " + std::to_string(labels[n]) + " at row " + std::to_string(n) +
                       " outside [0, " + std::to_string(C) + ")");
    }
  }
}
}  // namespace detail

/// Mean over rows of −log p[label] for an N×C probability tensor.
template <typename T>
Tensor<T> cross_entropy_loss(const Tensor<T>& probabilities, std::span<const std::size_t> labels) {
  detail::require_ndim(probabilities, 2, "cross_entropy_loss", "probabilities");
  const std::size_t N = probabilities.dim(0), C = probabilities.dim(1);
  detail::check_labels<T>(labels, N, C, "cross_entropy_loss");
  const auto& p = probabilities.vec();
  T acc = T(0);
  for (std::size_t n = 0; n < N; ++n) acc -= std::log(p[n * C + labels[n]]);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  auto in_node = probabilities.node();
  return Tensor<T>::make_result({1}, {acc / T(N)}, {probabilities},
                                [=, lab = std::move(lab)](const detail::Node<T>& self) {
                                  auto* g = detail::grad_sink(in_node);
                                  if (!g) return;
                                  for (std::size_t n = 0; n < N; ++n) {
                                    const std::size_t i = n * C + lab[n];
                                    (*g)[i] -= self.grad[0] / (T(N) * in_node->data[i]);
                                  }
                                });
}

/// Same value contract as cross_entropy_loss(softmax(logits), labels), computed
/// through log-sum-exp.
template <typename T>
Tensor<T> cross_entropy_with_logits(const Tensor<T>& logits, std::span<const std::size_t> labels) {
  detail::require_ndim(logits, 2, "cross_entropy_with_logits", "logits");
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  detail::check_labels<T>(labels, N, C, "cross_entropy_with_logits");
  const auto& x = logits.vec();
  std::vector<T> probs(x.size());
  T acc = T(0);
  for (std::size_t n = 0; n < N; ++n) {
    const T* row = x.data() + n * C;
    T mx = row[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    T sum = T(0);
    for (std::size_t c = 0; c < C; ++c) sum += std::exp(row[c] - mx);
    const T lse = mx + std::log(sum);
    acc += lse - row[labels[n]];
    for (std::size_t c = 0; c < C; ++c) probs[n * C + c] = std::exp(row[c] - lse);
  }
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  auto in_node = logits.node();
  return Tensor<T>::make_result(
      {1}, {acc / T(N)}, {logits},
      [=, probs = std::move(probs), lab = std::move(lab)](const detail::Node<T>& self) {
        auto* g = detail::grad_sink(in_node);
        if (!g) return;
        const T scale = self.grad[0] / T(N);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t i = n * C + c;
            (*g)[i] += scale * (probs[i] - (c == lab[n] ? T(1) : T(0)));
          }
      });
}

/// x·Wᵀ + b for x N×D, W K×D, b K.
template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const std::optional<Tensor<T>>& bias) {
  detail::require_ndim(input, 2, "linear", "input");
  detail::require_ndim(weight, 2, "linear", "weight");
  const std::size_t N = input.dim(0), D = input.dim(1), K = weight.dim(0);
  if (weight.dim(1) != D) {
    throw DimensionError("linear: weight axis 1 is " + std::to_string(weight.dim(1)) + ", input axis 1 is " +
                         std::to_string(D));
  }
  if (bias && bias->shape() != Shape{K}) {
    throw DimensionError("linear: bias must have shape [" + std::to_string(K) + "], got " + shape_str(bias->shape()));
  }
  const auto& x = input.vec();
  const auto& w = weight.vec();
  std::vector<T> out(N * K);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < K; ++k) {
      T acc = bias ? bias->vec()[k] : T(0);
      for (std::size_t d = 0; d < D; ++d) acc += x[n * D + d] * w[k * D + d];
      out[n * K + k] = acc;
    }
  auto x_node = input.node();
  auto w_node = weight.node();
  std::shared_ptr<detail::Node<T>> b_node = bias ? bias->node() : nullptr;
  std::vector<Tensor<T>> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  return Tensor<T>::make_result({N, K}, std::move(out), std::move(inputs), [=](const detail::Node<T>& self) {
    auto* gx = detail::grad_sink(x_node);
    auto* gw = detail::grad_sink(w_node);
    auto* gb = detail::grad_sink(b_node);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t k = 0; k < K; ++k) {
        const T g = self.grad[n * K + k];
        if (gb) (*gb)[k] += g;
        for (std::size_t d = 0; d < D; ++d) {
          if (gx) (*gx)[n * D + d] += g * w_node->data[k * D + d];
          if (gw) (*gw)[k * D + d] += g * x_node->data[n * D + d];
        }
      }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.vec()[i] + b.vec()[i];
  auto an = a.node();
  auto bn = b.node();
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [=](const detail::Node<T>& self) {
    if (auto* g = detail::grad_sink(an))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = detail::grad_sink(bn))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.vec()[i] * b.vec()[i];
  auto an = a.node();
  auto bn = b.node();
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [=](const detail::Node<T>& self) {
    if (auto* g = detail::grad_sink(an))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * bn->data[i];
    if (auto* g = detail::grad_sink(bn))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * an->data[i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.vec()) acc += v;
  auto an = a.node();
  return Tensor<T>::make_result({1}, {acc}, {a}, [=](const detail::Node<T>& self) {
    if (auto* g = detail::grad_sink(an))
      for (auto& v : *g) v += self.grad[0];
  });
}

/// Nearest-neighbour ×2 upsampling of NCHW.
template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& input) {
  detail::require_ndim(input, 4, "upsample_nearest2x", "input");
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t OH = 2 * H, OW = 2 * W;
  const auto& x = input.vec();
  std::vector<T> out(N * C * OH * OW);
  for (std::size_t p = 0; p < N * C; ++p)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) out[(p * OH + oy) * OW + ox] = x[(p * H + oy / 2) * W + ox / 2];
  auto in_node = input.node();
  return Tensor<T>::make_result({N, C, OH, OW}, std::move(out), {input}, [=](const detail::Node<T>& self) {
    auto* g = detail::grad_sink(in_node);
    if (!g) return;
    for (std::size_t p = 0; p < N * C; ++p)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) (*g)[(p * H + oy / 2) * W + ox / 2] += self.grad[(p * OH + oy) * OW + ox];
  });
}

/// Depth-to-space: N×(C·r²)×H×W -> N×C×(H·r)×(W·r), with
/// out[n,c,h·r+i,w·r+j] = in[n, c·r²+i·r+j, h, w].
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& input, std::size_t r) {
  detail::require_ndim(input, 4, "pixel_shuffle", "input");
  if (r == 0) throw ParameterError("pixel_shuffle: factor must be positive");
  const std::size_t N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (Cin % (r * r) != 0) {
    throw DimensionError("pixel_shuffle: axis 1 (" + std::to_string(Cin) + ") not divisible by factor² " +
                         std::to_string(r * r));
  }
  const std::size_t C = Cin / (r * r), OH = H * r, OW = W * r;
  auto index_of = [=](std::size_t n, std::size_t c, std::size_t oy, std::size_t ox) {
    const std::size_t ci = c * r * r + (oy % r) * r + (ox % r);
    return ((n * Cin + ci) * H + oy / r) * W + ox / r;
  };
  const auto& x = input.vec();
  std::vector<T> out(N * C * OH * OW);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) out[((n * C + c) * OH + oy) * OW + ox] = x[index_of(n, c, oy, ox)];
  auto in_node = input.node();
  return Tensor<T>::make_result({N, C, OH, OW}, std::move(out), {input}, [=](const detail::Node<T>& self) {
    auto* g = detail::grad_sink(in_node);
    if (!g) return;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t oy = 0; oy < OH; ++oy)
          for (std::size_t ox = 0; ox < OW; ++ox)
            (*g)[index_of(n, c, oy, ox)] += self.grad[((n * C + c) * OH + oy) * OW + ox];
  });
}

}  // namespace egmae
