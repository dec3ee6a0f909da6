#pragma once

// Forward ops and their hand-derived backward rules. All reductions run in a
// fixed order so repeated runs are bit-identical.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "carrylab/numerics/tensor.hpp"

namespace carrylab::ops {

namespace detail {

inline void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected a rank-2 tensor, got " + shape_str(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

using f32x16 = float __attribute__((vector_size(64)));

// R rows x (V*16) columns of `out` accumulated in registers.
template <std::size_t R, std::size_t V>
inline void gemm_tile(const float* __restrict a, const float* __restrict b, float* __restrict out, std::size_t i0,
                      std::size_t j0, std::size_t k, std::size_t n) {
  f32x16 acc[R][V];
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t v = 0; v < V; ++v) std::memcpy(&acc[r][v], out + (i0 + r) * n + j0 + 16 * v, 64);
  for (std::size_t p = 0; p < k; ++p) {
    f32x16 bv[V];
    for (std::size_t v = 0; v < V; ++v) std::memcpy(&bv[v], b + p * n + j0 + 16 * v, 64);
    for (std::size_t r = 0; r < R; ++r) {
      const float av = a[(i0 + r) * k + p];
      for (std::size_t v = 0; v < V; ++v) acc[r][v] += av * bv[v];
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t v = 0; v < V; ++v) std::memcpy(out + (i0 + r) * n + j0 + 16 * v, &acc[r][v], 64);
}

// Final strip narrower than 16 columns, zero-padded in registers.
template <std::size_t R>
inline void gemm_tail(const float* __restrict a, const float* __restrict b, float* __restrict out, std::size_t i0,
                      std::size_t j0, std::size_t k, std::size_t n) {
  const std::size_t w = n - j0;
  f32x16 acc[R] = {};
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t j = 0; j < w; ++j) acc[r][j] = out[(i0 + r) * n + j0 + j];
  for (std::size_t p = 0; p < k; ++p) {
    f32x16 bv = {};
    for (std::size_t j = 0; j < w; ++j) bv[j] = b[p * n + j0 + j];
    for (std::size_t r = 0; r < R; ++r) acc[r] += a[(i0 + r) * k + p] * bv;
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t j = 0; j < w; ++j) out[(i0 + r) * n + j0 + j] = acc[r][j];
}

template <std::size_t R>
inline void gemm_rows(const float* __restrict a, const float* __restrict b, float* __restrict out, std::size_t i0,
                      std::size_t k, std::size_t n) {
  std::size_t j0 = 0;
  for (; j0 + 32 <= n; j0 += 32) gemm_tile<R, 2>(a, b, out, i0, j0, k, n);
  for (; j0 + 16 <= n; j0 += 16) gemm_tile<R, 1>(a, b, out, i0, j0, k, n);
  if (j0 < n) gemm_tail<R>(a, b, out, i0, j0, k, n);
}

// out[M,N] += a[M,K] * b[K,N]. Every output element sums over K in
// ascending order regardless of tiling.
inline void gemm(const float* __restrict a, const float* __restrict b, float* __restrict out, std::size_t m,
                 std::size_t k, std::size_t n) {
  std::size_t i0 = 0;
  for (; i0 + 4 <= m; i0 += 4) gemm_rows<4>(a, b, out, i0, k, n);
  for (; i0 < m; ++i0) gemm_rows<1>(a, b, out, i0, k, n);
}

inline std::vector<float> transpose(const float* src, std::size_t rows, std::size_t cols) {
  std::vector<float> dst(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
  return dst;
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<float> out(m * n, 0.0f);
  detail::gemm(a.ptr(), b.ptr(), out.data(), m, k, n);
  return carrylab::detail::make_result({m, n}, std::move(out), {a, b}, [a, b, m, k, n](carrylab::detail::Node* self) {
    return [a, b, m, k, n, self]() mutable {
      const float* g = self->grad.data();
      if (a.requires_grad()) {
        // dA[M,K] += dOut[M,N] * B^T[N,K]
        auto bt = detail::transpose(b.ptr(), k, n);
        detail::gemm(g, bt.data(), a.grad().data(), m, n, k);
      }
      if (b.requires_grad()) {
        // dB[K,N] += A^T[K,M] * dOut[M,N]
        auto at = detail::transpose(a.ptr(), m, k);
        detail::gemm(at.data(), g, b.grad().data(), k, m, n);
      }
    };
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return carrylab::detail::make_result(a.shape(), std::move(out), {a, b}, [a, b](carrylab::detail::Node* self) {
    return [a, b, self]() mutable {
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto g = t->grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i];
      }
    };
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return carrylab::detail::make_result(a.shape(), std::move(out), {a, b}, [a, b](carrylab::detail::Node* self) {
    return [a, b, self]() mutable {
      if (a.requires_grad()) {
        auto g = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        auto g = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i] * a.data()[i];
      }
    };
  });
}

// a[M,N] + v[N] broadcast over rows.
inline Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  detail::require_rank2(a, "add_rowvec");
  if (v.numel() != a.dim(1)) {
    throw std::invalid_argument("add_rowvec: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(v.shape()));
  }
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<float> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += v.data()[j];
  return carrylab::detail::make_result(a.shape(), std::move(out), {a, v}, [a, v, m, n](carrylab::detail::Node* self) {
    return [a, v, m, n, self]() mutable {
      if (a.requires_grad()) {
        auto g = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i];
      }
      if (v.requires_grad()) {
        auto g = v.grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) g[j] += self->grad[i * n + j];
      }
    };
  });
}

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add_rowvec(matmul(x, w), b); }

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  return carrylab::detail::make_result({1}, {static_cast<float>(acc)}, {a}, [a](carrylab::detail::Node* self) {
    return [a, self]() mutable {
      auto g = a.grad();
      const float s = self->grad[0];
      for (auto& v : g) v += s;
    };
  });
}

inline Tensor relu(const Tensor& a) {
  std::vector<float> out(a.numel());
  const float* x = a.ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
  return carrylab::detail::make_result(a.shape(), std::move(out), {a}, [a](carrylab::detail::Node* self) {
    return [a, self]() mutable {
      float* __restrict g = a.grad().data();
      const float* __restrict x = a.ptr();
      const float* __restrict dy = self->grad.data();
      for (std::size_t i = 0; i < a.numel(); ++i) g[i] += x[i] > 0.0f ? dy[i] : 0.0f;
    };
  });
}

// Softmax over the last axis of a rank-2 tensor.
inline Tensor softmax_rows(const Tensor& a) {
  detail::require_rank2(a, "softmax_rows");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (n == 0) throw std::invalid_argument("softmax_rows: empty axis in shape " + shape_str(a.shape()));
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < m; ++i) {
    const float* x = a.ptr() + i * n;
    float* y = out.data() + i * n;
    const float mx = *std::max_element(x, x + n);
    if (mx == -std::numeric_limits<float>::infinity()) {
      throw std::invalid_argument("softmax_rows: row " + std::to_string(i) + " is fully masked");
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    const float inv = static_cast<float>(1.0 / z);
    for (std::size_t j = 0; j < n; ++j) y[j] *= inv;
  }
  return carrylab::detail::make_result(a.shape(), std::move(out), {a}, [a, m, n](carrylab::detail::Node* self) {
    return [a, m, n, self]() mutable {
      auto g = a.grad();
      for (std::size_t i = 0; i < m; ++i) {
        const float* y = self->value.data() + i * n;
        const float* dy = self->grad.data() + i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(y[j]) * dy[j];
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += y[j] * (dy[j] - static_cast<float>(dot));
      }
    };
  });
}

// Sets entries above the diagonal of each [T,T] block to -inf. Input is a
// stack of square score matrices flattened to [N*T, T].
inline Tensor causal_mask(const Tensor& scores) {
  detail::require_rank2(scores, "causal_mask");
  const std::size_t t = scores.dim(1);
  if (t == 0 || scores.dim(0) % t != 0) {
    throw std::invalid_argument("causal_mask: rows must be a multiple of the square size, got " +
                                shape_str(scores.shape()));
  }
  std::vector<float> out(scores.data().begin(), scores.data().end());
  for (std::size_t r = 0; r < scores.dim(0); ++r) {
    const std::size_t q = r % t;
    for (std::size_t j = q + 1; j < t; ++j) out[r * t + j] = -std::numeric_limits<float>::infinity();
  }
  return carrylab::detail::make_result(scores.shape(), std::move(out), {scores}, [scores, t](carrylab::detail::Node* self) {
    return [scores, t, self]() mutable {
      auto g = scores.grad();
      for (std::size_t r = 0; r < scores.dim(0); ++r) {
        const std::size_t q = r % t;
        for (std::size_t j = 0; j <= q; ++j) g[r * t + j] += self->grad[r * t + j];
      }
    };
  });
}

// Layer normalization over the feature axis with learned gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f) {
  detail::require_rank2(x, "layer_norm");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (n == 0) throw std::invalid_argument("layer_norm: empty feature axis in shape " + shape_str(x.shape()));
  if (gamma.numel() != n || beta.numel() != n) {
    throw std::invalid_argument("layer_norm: shape mismatch " + shape_str(x.shape()) + " vs " +
                                shape_str(gamma.shape()));
  }
  std::vector<float> out(x.numel());
  std::vector<float> xhat(x.numel());
  std::vector<float> rstd(m);
  for (std::size_t i = 0; i < m; ++i) {
    const float* r = x.ptr() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += r[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (r[j] - mean) * (r[j] - mean);
    var /= static_cast<double>(n);
    const float rs = static_cast<float>(1.0 / std::sqrt(var + eps));
    rstd[i] = rs;
    for (std::size_t j = 0; j < n; ++j) {
      const float h = (r[j] - static_cast<float>(mean)) * rs;
      xhat[i * n + j] = h;
      out[i * n + j] = h * gamma.data()[j] + beta.data()[j];
    }
  }
  return carrylab::detail::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, m, n, xhat = std::move(xhat), rstd = std::move(rstd)](carrylab::detail::Node* self) mutable {
        return [x, gamma, beta, m, n, xhat = std::move(xhat), rstd = std::move(rstd), self]() mutable {
          const float* dy = self->grad.data();
          if (gamma.requires_grad()) {
            auto g = gamma.grad();
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < n; ++j) g[j] += dy[i * n + j] * xhat[i * n + j];
          }
          if (beta.requires_grad()) {
            auto g = beta.grad();
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < n; ++j) g[j] += dy[i * n + j];
          }
          if (x.requires_grad()) {
            auto g = x.grad();
            for (std::size_t i = 0; i < m; ++i) {
              double mean_d = 0.0, mean_dx = 0.0;
              for (std::size_t j = 0; j < n; ++j) {
                const float d = dy[i * n + j] * gamma.data()[j];
                mean_d += d;
                mean_dx += static_cast<double>(d) * xhat[i * n + j];
              }
              mean_d /= static_cast<double>(n);
              mean_dx /= static_cast<double>(n);
              for (std::size_t j = 0; j < n; ++j) {
                const float d = dy[i * n + j] * gamma.data()[j];
                g[i * n + j] += rstd[i] * (d - static_cast<float>(mean_d) - xhat[i * n + j] * static_cast<float>(mean_dx));
              }
            }
          }
        };
      });
}

// Row gather: out[i] = table[ids[i]].
inline Tensor embedding(const Tensor& table, std::span<const int> ids) {
  detail::require_rank2(table, "embedding");
  const std::size_t v = table.dim(0), c = table.dim(1);
  std::vector<float> out(ids.size() * c);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside table of shape " +
                              shape_str(table.shape()));
    }
    std::copy_n(table.ptr() + ids[i] * c, c, out.data() + i * c);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return carrylab::detail::make_result({ids.size(), c}, std::move(out), {table},
                                       [table, c, idx = std::move(idx)](carrylab::detail::Node* self) mutable {
                                         return [table, c, idx = std::move(idx), self]() mutable {
                                           auto g = table.grad();
                                           for (std::size_t i = 0; i < idx.size(); ++i) {
                                             float* dst = g.data() + idx[i] * c;
                                             const float* src = self->grad.data() + i * c;
                                             for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
                                           }
                                         };
                                       });
}

// Fused causal multi-head self-attention. qkv is [B*T, 3C] laid out as
// [q | k | v]; head h owns columns [h*D, (h+1)*D) of each block. Returns the
// merged head outputs [B*T, C]. When `probs_out` is given it receives the
// attention weights as [B, H, T, T] (zeros above the diagonal).
inline Tensor causal_attention(const Tensor& qkv, std::size_t batch, std::size_t seq, std::size_t heads,
                               std::vector<float>* probs_out = nullptr) {
  detail::require_rank2(qkv, "causal_attention");
  if (qkv.dim(0) != batch * seq || qkv.dim(1) % 3 != 0 || (qkv.dim(1) / 3) % heads != 0) {
    throw std::invalid_argument("causal_attention: qkv shape " + shape_str(qkv.shape()) + " incompatible with batch " +
                                std::to_string(batch) + ", seq " + std::to_string(seq) + ", heads " +
                                std::to_string(heads));
  }
  const std::size_t c = qkv.dim(1) / 3, d = c / heads, row = 3 * c;
  const float scale = 1.0f / std::sqrt(static_cast<float>(d));
  std::vector<float> probs(batch * heads * seq * seq, 0.0f);
  std::vector<float> out(batch * seq * c, 0.0f);
  const float* base = qkv.ptr();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      float* p = probs.data() + (b * heads + h) * seq * seq;
      for (std::size_t i = 0; i < seq; ++i) {
        const float* q = base + (b * seq + i) * row + h * d;
        float* pr = p + i * seq;
        float mx = -std::numeric_limits<float>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          const float* k = base + (b * seq + j) * row + c + h * d;
          float s = 0.0f;
          for (std::size_t e = 0; e < d; ++e) s += q[e] * k[e];
          pr[j] = s * scale;
          mx = std::max(mx, pr[j]);
        }
        float z = 0.0f;
        for (std::size_t j = 0; j <= i; ++j) {
          pr[j] = std::exp(pr[j] - mx);
          z += pr[j];
        }
        const float inv = 1.0f / z;
        float* y = out.data() + (b * seq + i) * c + h * d;
        for (std::size_t j = 0; j <= i; ++j) {
          pr[j] *= inv;
          const float* v = base + (b * seq + j) * row + 2 * c + h * d;
          for (std::size_t e = 0; e < d; ++e) y[e] += pr[j] * v[e];
        }
      }
    }
  }
  if (probs_out) *probs_out = probs;
  return carrylab::detail::make_result(
      {batch * seq, c}, std::move(out), {qkv},
      [qkv, batch, seq, heads, c, d, row, scale, probs = std::move(probs)](carrylab::detail::Node* self) mutable {
        return [qkv, batch, seq, heads, c, d, row, scale, probs = std::move(probs), self]() mutable {
          const float* base = qkv.ptr();
          float* gbase = qkv.grad().data();
          const float* dy_all = self->grad.data();
          std::vector<float> dp(seq);
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t h = 0; h < heads; ++h) {
              const float* p = probs.data() + (b * heads + h) * seq * seq;
              for (std::size_t i = 0; i < seq; ++i) {
                const float* pr = p + i * seq;
                const float* dy = dy_all + (b * seq + i) * c + h * d;
                float dot = 0.0f;
                for (std::size_t j = 0; j <= i; ++j) {
                  const float* v = base + (b * seq + j) * row + 2 * c + h * d;
                  float* dv = gbase + (b * seq + j) * row + 2 * c + h * d;
                  float s = 0.0f;
                  for (std::size_t e = 0; e < d; ++e) {
                    s += dy[e] * v[e];
                    dv[e] += pr[j] * dy[e];
                  }
                  dp[j] = s;
                  dot += pr[j] * s;
                }
                const float* q = base + (b * seq + i) * row + h * d;
                float* dq = gbase + (b * seq + i) * row + h * d;
                for (std::size_t j = 0; j <= i; ++j) {
                  const float ds = pr[j] * (dp[j] - dot) * scale;
                  const float* k = base + (b * seq + j) * row + c + h * d;
                  float* dk = gbase + (b * seq + j) * row + c + h * d;
                  for (std::size_t e = 0; e < d; ++e) {
                    dq[e] += ds * k[e];
                    dk[e] += ds * q[e];
                  }
                }
              }
            }
          }
        };
      });
}

// Mean negative log-likelihood of `targets` under row-wise softmax(logits).
// Rows whose target equals `ignore_index` are skipped.
inline Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_index = -1) {
  detail::require_rank2(logits, "cross_entropy");
  const std::size_t m = logits.dim(0), n = logits.dim(1);
  if (targets.size() != m) {
    throw std::invalid_argument("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                                std::to_string(targets.size()) + " targets");
  }
  std::vector<float> probs(logits.numel());
  double loss = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] == ignore_index) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= n) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[i]) + " outside " + std::to_string(n) +
                              " classes");
    }
    const float* x = logits.ptr() + i * n;
    float* p = probs.data() + i * n;
    const float mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      p[j] = std::exp(x[j] - mx);
      z += p[j];
    }
    for (std::size_t j = 0; j < n; ++j) p[j] = static_cast<float>(p[j] / z);
    loss += std::log(z) + mx - x[targets[i]];
    ++count;
  }
  if (count == 0) throw std::invalid_argument("cross_entropy: every position is ignored");
  loss /= static_cast<double>(count);
  std::vector<int> tgt(targets.begin(), targets.end());
  return carrylab::detail::make_result(
      {1}, {static_cast<float>(loss)}, {logits},
      [logits, m, n, count, ignore_index, probs = std::move(probs), tgt = std::move(tgt)](carrylab::detail::Node* self) mutable {
        return [logits, m, n, count, ignore_index, probs = std::move(probs), tgt = std::move(tgt), self]() mutable {
          auto g = logits.grad();
          const float s = self->grad[0] / static_cast<float>(count);
          for (std::size_t i = 0; i < m; ++i) {
            if (tgt[i] == ignore_index) continue;
            for (std::size_t j = 0; j < n; ++j) g[i * n + j] += s * probs[i * n + j];
            g[i * n + tgt[i]] -= s;
          }
        };
      });
}

}  // namespace carrylab::ops
