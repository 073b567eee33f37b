#ifndef MLT_OPS_HPP_
#define MLT_OPS_HPP_

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <new>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mlt/errors.hpp"
#include "mlt/tape.hpp"
#include "mlt/tensor.hpp"

namespace mlt {

using TokenId = std::uint32_t;

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using StridedMap = Eigen::Map<RowMatrix<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>>;

template <typename T>
ConstMatrixMap<T> as_matrix(const Tensor<T>& t) {
  return ConstMatrixMap<T>(t.ptr(), static_cast<Eigen::Index>(t.rows()),
                           static_cast<Eigen::Index>(t.cols()));
}

template <typename T>
MatrixMap<T> as_matrix(Tensor<T>& t) {
  return MatrixMap<T>(t.ptr(), static_cast<Eigen::Index>(t.rows()),
                      static_cast<Eigen::Index>(t.cols()));
}

template <typename T>
MatrixMap<T> grad_matrix(const Tensor<T>& t) {
  return MatrixMap<T>(t.grad_ptr(), static_cast<Eigen::Index>(t.rows()),
                      static_cast<Eigen::Index>(t.cols()));
}

template <typename T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<T>* t) { return t->requires_grad(); });
}

template <typename T>
void require_rank2(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                         shape_string(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()) + " differ");
  }
}

// In-place max-subtracted softmax of the first `count` entries of a row.
template <typename T>
void softmax_inplace(T* row, std::size_t count) {
  Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> a(row, static_cast<Eigen::Index>(count));
  a = (a - a.maxCoeff()).exp();
  a *= T{1} / a.sum();
}

}  // namespace detail

// C = A·B for A[m×k], B[k×n].
template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " are incompatible");
  }
  const bool rg = detail::any_requires_grad<T>({&a, &b});
  Tensor<T> out(Shape{a.dim(0), b.dim(1)}, rg);
  detail::as_matrix(out).noalias() = detail::as_matrix(a) * detail::as_matrix(b);
  if (rg) {
    tape.record({a, b}, out, [a, b](Tensor<T>& c) mutable {
      const auto dc = detail::grad_matrix(c);
      if (a.requires_grad()) {
        detail::grad_matrix(a).noalias() += dc * detail::as_matrix(b).transpose();
      }
      if (b.requires_grad()) {
        detail::grad_matrix(b).noalias() += detail::as_matrix(a).transpose() * dc;
      }
    });
  }
  return out;
}

// C = A·Bᵀ for A[m×k], B[n×k]. Used for the tied output projection.
template <typename T>
Tensor<T> matmul_transposed(Tape<T>& tape, const Tensor<T>& a,
                            const Tensor<T>& b) {
  detail::require_rank2(a, "matmul_transposed");
  detail::require_rank2(b, "matmul_transposed");
  if (a.dim(1) != b.dim(1)) {
    throw DimensionError("matmul_transposed: shapes " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()) + " are incompatible");
  }
  const bool rg = detail::any_requires_grad<T>({&a, &b});
  Tensor<T> out(Shape{a.dim(0), b.dim(0)}, rg);
  detail::as_matrix(out).noalias() =
      detail::as_matrix(a) * detail::as_matrix(b).transpose();
  if (rg) {
    tape.record({a, b}, out, [a, b](Tensor<T>& c) mutable {
      const auto dc = detail::grad_matrix(c);
      if (a.requires_grad()) {
        detail::grad_matrix(a).noalias() += dc * detail::as_matrix(b);
      }
      if (b.requires_grad()) {
        detail::grad_matrix(b).noalias() += dc.transpose() * detail::as_matrix(a);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  const bool rg = detail::any_requires_grad<T>({&a, &b});
  Tensor<T> out(a.shape(), rg);
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = x[i] + y[i];
  }
  if (rg) {
    tape.record({a, b}, out, [a, b](Tensor<T>& c) mutable {
      auto dc = c.grad();
      for (const Tensor<T>* input : {&a, &b}) {
        if (input->requires_grad()) {
          auto g = input->grad();
          for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += dc[i];
          }
        }
      }
    });
  }
  return out;
}

// Elementwise product.
template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  const bool rg = detail::any_requires_grad<T>({&a, &b});
  Tensor<T> out(a.shape(), rg);
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = x[i] * y[i];
  }
  if (rg) {
    tape.record({a, b}, out, [a, b](Tensor<T>& c) mutable {
      auto dc = c.grad();
      if (a.requires_grad()) {
        auto g = a.grad();
        auto y = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
          g[i] += dc[i] * y[i];
        }
      }
      if (b.requires_grad()) {
        auto g = b.grad();
        auto x = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
          g[i] += dc[i] * x[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& a) {
  T total{0};
  for (T v : a.data()) {
    total += v;
  }
  Tensor<T> out = Tensor<T>::scalar(total, a.requires_grad());
  if (a.requires_grad()) {
    tape.record({a}, out, [a](Tensor<T>& c) mutable {
      const T dc = c.grad()[0];
      for (T& g : a.grad()) {
        g += dc;
      }
    });
  }
  return out;
}

// Row lookup: out[i] = table[ids[i]].
template <typename T>
Tensor<T> gather_rows(Tape<T>& tape, const Tensor<T>& table,
                      std::span<const TokenId> ids) {
  detail::require_rank2(table, "gather_rows");
  if (ids.empty()) {
    throw DimensionError("gather_rows: empty index list");
  }
  const std::size_t width = table.dim(1);
  for (TokenId id : ids) {
    if (id >= table.dim(0)) {
      throw IndexError("gather_rows: index " + std::to_string(id) +
                       " out of range for table " + shape_string(table.shape()));
    }
  }
  Tensor<T> out(Shape{ids.size(), width}, table.requires_grad());
  const T* src = table.ptr();
  T* dst = out.ptr();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(src + ids[i] * width, width, dst + i * width);
  }
  if (table.requires_grad()) {
    std::vector<TokenId> saved(ids.begin(), ids.end());
    tape.record({table}, out, [table, saved = std::move(saved), width](
                                  Tensor<T>& c) mutable {
      const T* dc = c.grad_ptr();
      T* g = table.grad_ptr();
      for (std::size_t i = 0; i < saved.size(); ++i) {
        T* row = g + saved[i] * width;
        const T* drow = dc + i * width;
        for (std::size_t j = 0; j < width; ++j) {
          row[j] += drow[j];
        }
      }
    });
  }
  return out;
}

// Max-subtracted softmax over the last axis.
template <typename T>
Tensor<T> softmax_rows(Tape<T>& tape, const Tensor<T>& a) {
  for (T v : a.data()) {
    if (!std::isfinite(v)) {
      throw NumericError("softmax_rows: non-finite input");
    }
  }
  const std::size_t n = a.cols();
  Tensor<T> out(a.shape(), std::vector<T>(a.data().begin(), a.data().end()),
                a.requires_grad());
  for (std::size_t r = 0; r < out.rows(); ++r) {
    detail::softmax_inplace(out.ptr() + r * n, n);
  }
  if (a.requires_grad()) {
    tape.record({a}, out, [a, n](Tensor<T>& c) mutable {
      const T* y = c.ptr();
      const T* dy = c.grad_ptr();
      T* g = a.grad_ptr();
      for (std::size_t r = 0; r < c.rows(); ++r) {
        const std::size_t base = r * n;
        T dot{0};
        for (std::size_t j = 0; j < n; ++j) {
          dot += dy[base + j] * y[base + j];
        }
        for (std::size_t j = 0; j < n; ++j) {
          g[base + j] += y[base + j] * (dy[base + j] - dot);
        }
      }
    });
  }
  return out;
}

// (x - mean) / sqrt(var + eps) over the last axis, without gain or bias.
template <typename T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, T eps) {
  if (!(eps > T{0})) {
    throw ContractError("layer_norm: eps must be positive");
  }
  const std::size_t d = x.cols();
  const std::size_t rows = x.rows();
  Tensor<T> out(x.shape(), x.requires_grad());
  std::vector<T> rstd(rows);
  const T* src = x.ptr();
  T* dst = out.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = src + r * d;
    T mean{0};
    for (std::size_t j = 0; j < d; ++j) {
      mean += row[j];
    }
    mean /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) {
      const T c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T s = T{1} / std::sqrt(var + eps);
    rstd[r] = s;
    for (std::size_t j = 0; j < d; ++j) {
      dst[r * d + j] = (row[j] - mean) * s;
    }
  }
  if (x.requires_grad()) {
    tape.record({x}, out, [x, d, rstd = std::move(rstd)](Tensor<T>& c) mutable {
      const T* y = c.ptr();
      const T* dy = c.grad_ptr();
      T* g = x.grad_ptr();
      const T inv_d = T{1} / static_cast<T>(d);
      for (std::size_t r = 0; r < rstd.size(); ++r) {
        const std::size_t base = r * d;
        T mean_dy{0};
        T mean_dy_y{0};
        for (std::size_t j = 0; j < d; ++j) {
          mean_dy += dy[base + j];
          mean_dy_y += dy[base + j] * y[base + j];
        }
        mean_dy *= inv_d;
        mean_dy_y *= inv_d;
        for (std::size_t j = 0; j < d; ++j) {
          g[base + j] +=
              rstd[r] * (dy[base + j] - mean_dy - y[base + j] * mean_dy_y);
        }
      }
    });
  }
  return out;
}

// tanh-approximated GELU.
template <typename T>
Tensor<T> gelu(Tape<T>& tape, const Tensor<T>& x) {
  using Array = Eigen::Array<T, Eigen::Dynamic, 1>;
  using ArrayMap = Eigen::Map<Array>;
  using ConstArrayMap = Eigen::Map<const Array>;
  static constexpr T kAlpha = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  static constexpr T kBeta = static_cast<T>(0.044715);
  const auto n = static_cast<Eigen::Index>(x.numel());
  Tensor<T> out(x.shape(), x.requires_grad());
  ConstArrayMap src(x.ptr(), n);
  ArrayMap(out.ptr(), n) =
      T{0.5} * src * (T{1} + (kAlpha * (src + kBeta * src.cube())).tanh());
  if (x.requires_grad()) {
    tape.record({x}, out, [x, n](Tensor<T>& c) mutable {
      ConstArrayMap src(x.ptr(), n);
      ConstArrayMap dy(c.grad_ptr(), n);
      const Array t = (kAlpha * (src + kBeta * src.cube())).tanh();
      ArrayMap(x.grad_ptr(), n) +=
          dy * (T{0.5} * (T{1} + t) +
                T{0.5} * src * (T{1} - t.square()) * kAlpha * (T{1} + T{3} * kBeta * src.square()));
    });
  }
  return out;
}

// Causal multi-head attention over row-major [batch*seq × d] projections.
// Position t attends to positions <= t within its own sequence.
template <typename T>
Tensor<T> causal_self_attention(Tape<T>& tape, const Tensor<T>& q,
                                const Tensor<T>& k, const Tensor<T>& v,
                                std::size_t batch, std::size_t heads) {
  detail::require_rank2(q, "causal_self_attention");
  detail::require_same_shape(q, k, "causal_self_attention");
  detail::require_same_shape(q, v, "causal_self_attention");
  const std::size_t d = q.dim(1);
  if (batch == 0 || q.dim(0) % batch != 0) {
    throw DimensionError("causal_self_attention: " + std::to_string(q.dim(0)) +
                         " rows do not split into " + std::to_string(batch) +
                         " sequences");
  }
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("causal_self_attention: width " + std::to_string(d) +
                         " is not divisible by " + std::to_string(heads) +
                         " heads");
  }
  const std::size_t seq = q.dim(0) / batch;
  const std::size_t head_dim = d / heads;
  const T scale = T{1} / std::sqrt(static_cast<T>(head_dim));
  const auto ei = [](std::size_t n) { return static_cast<Eigen::Index>(n); };
  const Eigen::OuterStride<> stride(ei(d));

  const bool rg = detail::any_requires_grad<T>({&q, &k, &v});
  Tensor<T> out(q.shape(), rg);
  // Attention probabilities per (sequence, head), kept for the backward pass.
  // Every entry is written below, so the buffer is left uninitialized.
  constexpr std::align_val_t align{detail::kBufferAlignment};
  std::shared_ptr<T[]> probs(
      static_cast<T*>(::operator new(batch * heads * seq * seq * sizeof(T), align)),
      [align](T* p) { ::operator delete(p, align); });

  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t offset = b * seq * d + h * head_dim;
      detail::ConstStridedMap<T> qm(q.ptr() + offset, ei(seq), ei(head_dim), stride);
      detail::ConstStridedMap<T> km(k.ptr() + offset, ei(seq), ei(head_dim), stride);
      detail::ConstStridedMap<T> vm(v.ptr() + offset, ei(seq), ei(head_dim), stride);
      detail::StridedMap<T> om(out.ptr() + offset, ei(seq), ei(head_dim), stride);
      detail::MatrixMap<T> pm(probs.get() + (b * heads + h) * seq * seq, ei(seq),
                              ei(seq));
      pm.noalias() = (qm * km.transpose()) * scale;
      for (std::size_t i = 0; i < seq; ++i) {
        T* row = pm.data() + i * seq;
        detail::softmax_inplace(row, i + 1);
        std::fill(row + i + 1, row + seq, T{0});
      }
      om.noalias() = pm * vm;
    }
  }

  if (rg) {
    tape.record({q, k, v}, out,
                [q, k, v, batch, heads, seq, head_dim, d, scale,
                 probs](Tensor<T>& c) mutable {
                  const auto ei = [](std::size_t n) {
                    return static_cast<Eigen::Index>(n);
                  };
                  const Eigen::OuterStride<> stride(ei(d));
                  const T* dout = c.grad_ptr();
                  T* dq = q.requires_grad() ? q.grad_ptr() : nullptr;
                  T* dk = k.requires_grad() ? k.grad_ptr() : nullptr;
                  T* dv = v.requires_grad() ? v.grad_ptr() : nullptr;
                  detail::RowMatrix<T> dp(ei(seq), ei(seq));
                  for (std::size_t b = 0; b < batch; ++b) {
                    for (std::size_t h = 0; h < heads; ++h) {
                      const std::size_t offset = b * seq * d + h * head_dim;
                      detail::ConstStridedMap<T> qm(q.ptr() + offset, ei(seq),
                                                    ei(head_dim), stride);
                      detail::ConstStridedMap<T> km(k.ptr() + offset, ei(seq),
                                                    ei(head_dim), stride);
                      detail::ConstStridedMap<T> vm(v.ptr() + offset, ei(seq),
                                                    ei(head_dim), stride);
                      detail::ConstStridedMap<T> dom(dout + offset, ei(seq),
                                                     ei(head_dim), stride);
                      detail::ConstMatrixMap<T> pm(
                          probs.get() + (b * heads + h) * seq * seq, ei(seq),
                          ei(seq));
                      if (dv != nullptr) {
                        detail::StridedMap<T> dvm(dv + offset, ei(seq),
                                                  ei(head_dim), stride);
                        dvm.noalias() += pm.transpose() * dom;
                      }
                      dp.noalias() = dom * vm.transpose();
                      // Softmax backward; masked entries have p = 0.
                      for (std::size_t i = 0; i < seq; ++i) {
                        T dot{0};
                        for (std::size_t j = 0; j <= i; ++j) {
                          dot += dp(ei(i), ei(j)) * pm(ei(i), ei(j));
                        }
                        for (std::size_t j = 0; j <= i; ++j) {
                          dp(ei(i), ei(j)) =
                              pm(ei(i), ei(j)) * (dp(ei(i), ei(j)) - dot) * scale;
                        }
                        for (std::size_t j = i + 1; j < seq; ++j) {
                          dp(ei(i), ei(j)) = T{0};
                        }
                      }
                      if (dq != nullptr) {
                        detail::StridedMap<T> dqm(dq + offset, ei(seq),
                                                  ei(head_dim), stride);
                        dqm.noalias() += dp * km;
                      }
                      if (dk != nullptr) {
                        detail::StridedMap<T> dkm(dk + offset, ei(seq),
                                                  ei(head_dim), stride);
                        dkm.noalias() += dp.transpose() * qm;
                      }
                    }
                  }
                });
  }
  return out;
}

// Mean over rows of -log softmax(logits)[target].
template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits,
                        std::span<const TokenId> targets) {
  const std::size_t vocab = logits.cols();
  const std::size_t rows = logits.rows();
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits of shape " +
                         shape_string(logits.shape()));
  }
  for (TokenId t : targets) {
    if (t >= vocab) {
      throw IndexError("cross_entropy: target " + std::to_string(t) +
                       " out of range for vocabulary of size " +
                       std::to_string(vocab));
    }
  }
  std::vector<T> probs(logits.data().begin(), logits.data().end());
  T total{0};
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = probs.data() + r * vocab;
    T max_value = row[0];
    for (std::size_t j = 1; j < vocab; ++j) {
      max_value = std::max(max_value, row[j]);
    }
    T denom{0};
    for (std::size_t j = 0; j < vocab; ++j) {
      denom += std::exp(row[j] - max_value);
    }
    const T log_denom = std::log(denom);
    total += log_denom - (row[targets[r]] - max_value);
    const T inv = T{1} / denom;
    for (std::size_t j = 0; j < vocab; ++j) {
      row[j] = std::exp(row[j] - max_value) * inv;
    }
  }
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(rows),
                                    logits.requires_grad());
  if (logits.requires_grad()) {
    std::vector<TokenId> saved(targets.begin(), targets.end());
    tape.record({logits}, out,
                [logits, vocab, probs = std::move(probs),
                 saved = std::move(saved)](Tensor<T>& c) mutable {
                  const T scale = c.grad()[0] / static_cast<T>(saved.size());
                  T* g = logits.grad_ptr();
                  for (std::size_t r = 0; r < saved.size(); ++r) {
                    const std::size_t base = r * vocab;
                    for (std::size_t j = 0; j < vocab; ++j) {
                      g[base + j] += probs[base + j] * scale;
                    }
                    g[base + saved[r]] -= scale;
                  }
                });
  }
  return out;
}

}  // namespace mlt

#endif  // MLT_OPS_HPP_
