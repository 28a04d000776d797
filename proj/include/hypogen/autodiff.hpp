#pragma once

// Tape-based reverse-mode automatic differentiation over dense row-major
// tensors. A Graph records every op node in insertion order (which is a valid
// topological order) and is rebuilt for every training step. Parameters are
// leaf nodes that live outside any graph and accumulate gradients across
// backward calls until zeroed.
//
// The engine is templated on the scalar type. Production code uses float;
// the finite-difference gradient tests instantiate double.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hypogen/errors.hpp"

namespace hypogen {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::size_t size() const { return value.size(); }
  std::size_t rows() const { return shape.size() >= 2 ? shape[0] : 1; }
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
  T item() const { return value.at(0); }

  T* grad_data() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad.data();
  }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

/// Creates a trainable leaf. Parameters are not owned by any graph.
template <typename T>
Var<T> make_param(Shape shape, std::vector<T> values, bool requires_grad = true) {
  if (values.size() != numel(shape))
    throw DimensionError("parameter " + shape_str(shape) + " given " +
                         std::to_string(values.size()) + " values");
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return n;
}

template <typename T>
Var<T> make_param(Shape shape, T fill = T(0), bool requires_grad = true) {
  std::vector<T> values(numel(shape), fill);
  return make_param<T>(std::move(shape), std::move(values), requires_grad);
}

template <typename T>
class Graph {
 public:
  using VarT = Var<T>;

  /// With grad_enabled=false nothing is recorded for backward, which is what
  /// evaluation wants.
  explicit Graph(std::uint64_t seed = 0, bool grad_enabled = true)
      : seed_(seed), rng_(seed), grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  std::uint64_t seed() const { return seed_; }
  std::mt19937_64& rng() { return rng_; }
  const std::vector<VarT>& nodes() const { return tape_; }

  VarT constant(Shape shape, std::vector<T> values) {
    if (values.size() != numel(shape))
      throw DimensionError("constant " + shape_str(shape) + " given " +
                           std::to_string(values.size()) + " values");
    return record("constant", std::move(shape), std::move(values), {}, nullptr);
  }

  VarT zeros(Shape shape) {
    std::vector<T> v(numel(shape), T(0));
    return constant(std::move(shape), std::move(v));
  }

  // ---- linear algebra -----------------------------------------------------

  VarT matmul(const VarT& a, const VarT& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    if (b->shape[0] != k)
      throw DimensionError("matmul: inner dims differ for " + shape_str(a->shape) + " and " +
                           shape_str(b->shape));
    std::vector<T> out(m * n, T(0));
    const T* A = a->value.data();
    const T* B = b->value.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const T av = A[i * k + p];
        if (av == T(0)) continue;
        const T* brow = B + p * n;
        T* orow = out.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    return record("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
      const T* dC = self.grad.data();
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.requires_grad) {
        T* dA = pa.grad_data();
        const T* B = pb.value.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const T* brow = B + p * n;
            const T* crow = dC + i * n;
            T acc = 0;
            for (std::size_t j = 0; j < n; ++j) acc += crow[j] * brow[j];
            dA[i * k + p] += acc;
          }
      }
      if (pb.requires_grad) {
        T* dB = pb.grad_data();
        const T* A = pa.value.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const T av = A[i * k + p];
            if (av == T(0)) continue;
            const T* crow = dC + i * n;
            T* drow = dB + p * n;
            for (std::size_t j = 0; j < n; ++j) drow[j] += av * crow[j];
          }
      }
    });
  }

  /// a · bᵀ for a [m×k], b [n×k].
  VarT matmul_bt(const VarT& a, const VarT& b) {
    require_rank2(a, "matmul_bt");
    require_rank2(b, "matmul_bt");
    const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[0];
    if (b->shape[1] != k)
      throw DimensionError("matmul_bt: inner dims differ for " + shape_str(a->shape) + " and " +
                           shape_str(b->shape) + "^T");
    std::vector<T> out(m * n, T(0));
    const T* A = a->value.data();
    const T* B = b->value.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        T acc = 0;
        for (std::size_t p = 0; p < k; ++p) acc += A[i * k + p] * B[j * k + p];
        out[i * n + j] = acc;
      }
    return record("matmul_bt", {m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
      const T* dC = self.grad.data();
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.requires_grad) {
        T* dA = pa.grad_data();
        const T* B = pb.value.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const T g = dC[i * n + j];
            if (g == T(0)) continue;
            for (std::size_t p = 0; p < k; ++p) dA[i * k + p] += g * B[j * k + p];
          }
      }
      if (pb.requires_grad) {
        T* dB = pb.grad_data();
        const T* A = pa.value.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const T g = dC[i * n + j];
            if (g == T(0)) continue;
            for (std::size_t p = 0; p < k; ++p) dB[j * k + p] += g * A[i * k + p];
          }
      }
    });
  }

  VarT transpose(const VarT& a) {
    require_rank2(a, "transpose");
    const std::size_t m = a->shape[0], n = a->shape[1];
    std::vector<T> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a->value[i * n + j];
    return record("transpose", {n, m}, std::move(out), {a}, [m, n](Node<T>& self) {
      auto& pa = *self.parents[0];
      T* dA = pa.grad_data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) dA[i * n + j] += self.grad[j * m + i];
    });
  }

  // ---- elementwise --------------------------------------------------------

  VarT add(const VarT& a, const VarT& b) {
    require_same(a, b, "add");
    std::vector<T> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
    return record("add", a->shape, std::move(out), {a, b}, [](Node<T>& self) {
      for (auto& p : self.parents)
        if (p->requires_grad) {
          T* d = p->grad_data();
          for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
        }
    });
  }

  VarT sub(const VarT& a, const VarT& b) {
    require_same(a, b, "sub");
    std::vector<T> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] - b->value[i];
    return record("sub", a->shape, std::move(out), {a, b}, [](Node<T>& self) {
      if (self.parents[0]->requires_grad) {
        T* d = self.parents[0]->grad_data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
      }
      if (self.parents[1]->requires_grad) {
        T* d = self.parents[1]->grad_data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] -= self.grad[i];
      }
    });
  }

  VarT mul(const VarT& a, const VarT& b) {
    require_same(a, b, "mul");
    std::vector<T> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * b->value[i];
    return record("mul", a->shape, std::move(out), {a, b}, [](Node<T>& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.requires_grad) {
        T* d = pa.grad_data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * pb.value[i];
      }
      if (pb.requires_grad) {
        T* d = pb.grad_data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * pa.value[i];
      }
    });
  }

  /// Adds a row vector [n] or [1×n] to every row of a [m×n].
  VarT add_row(const VarT& a, const VarT& row) {
    const std::size_t n = a->cols();
    if (row->size() != n)
      throw DimensionError("add_row: " + shape_str(row->shape) + " does not match rows of " +
                           shape_str(a->shape));
    const std::size_t m = a->size() / std::max<std::size_t>(n, 1);
    std::vector<T> out(a->value);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += row->value[j];
    return record("add_row", a->shape, std::move(out), {a, row}, [m, n](Node<T>& self) {
      auto& pa = *self.parents[0];
      auto& pr = *self.parents[1];
      if (pa.requires_grad) {
        T* d = pa.grad_data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
      }
      if (pr.requires_grad) {
        T* d = pr.grad_data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) d[j] += self.grad[i * n + j];
      }
    });
  }

  VarT scale(const VarT& a, T s) {
    std::vector<T> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * s;
    return record("scale", a->shape, std::move(out), {a}, [s](Node<T>& self) {
      T* d = self.parents[0]->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * s;
    });
  }

  VarT add_scalar(const VarT& a, T s) {
    std::vector<T> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + s;
    return record("add_scalar", a->shape, std::move(out), {a}, pass_through());
  }

  /// Adds a constant array (no gradient) elementwise.
  VarT add_const(const VarT& a, std::span<const T> c) {
    if (c.size() != a->size())
      throw DimensionError("add_const: " + std::to_string(c.size()) + " values for " +
                           shape_str(a->shape));
    std::vector<T> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + c[i];
    return record("add_const", a->shape, std::move(out), {a}, pass_through());
  }

  VarT exp(const VarT& a) {
    std::vector<T> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a->value[i]);
    return record("exp", a->shape, std::move(out), {a}, [](Node<T>& self) {
      T* d = self.parents[0]->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * self.value[i];
    });
  }

  VarT log(const VarT& a) {
    std::vector<T> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a->value[i]);
    return record("log", a->shape, std::move(out), {a}, [](Node<T>& self) {
      auto& pa = *self.parents[0];
      T* d = pa.grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] / pa.value[i];
    });
  }

  /// Clamps into [lo, hi]; gradient is zero where the clamp is active.
  VarT clamp(const VarT& a, T lo, T hi) {
    std::vector<T> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(a->value[i], lo, hi);
    return record("clamp", a->shape, std::move(out), {a}, [lo, hi](Node<T>& self) {
      auto& pa = *self.parents[0];
      T* d = pa.grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (pa.value[i] >= lo && pa.value[i] <= hi) d[i] += self.grad[i];
    });
  }

  VarT relu(const VarT& a) {
    std::vector<T> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] > T(0) ? a->value[i] : T(0);
    return record("relu", a->shape, std::move(out), {a}, [](Node<T>& self) {
      auto& pa = *self.parents[0];
      T* d = pa.grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (pa.value[i] > T(0)) d[i] += self.grad[i];
    });
  }

  /// tanh approximation of GELU.
  VarT gelu(const VarT& a) {
    constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
    constexpr T kA = T(0.044715);
    std::vector<T> out(a->size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const T x = a->value[i];
      out[i] = T(0.5) * x * (T(1) + std::tanh(kC * (x + kA * x * x * x)));
    }
    return record("gelu", a->shape, std::move(out), {a}, [](Node<T>& self) {
      auto& pa = *self.parents[0];
      T* d = pa.grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const T x = pa.value[i];
        const T t = std::tanh(kC * (x + kA * x * x * x));
        const T dt = (T(1) - t * t) * kC * (T(1) + T(3) * kA * x * x);
        d[i] += self.grad[i] * (T(0.5) * (T(1) + t) + T(0.5) * x * dt);
      }
    });
  }

  // ---- reductions ---------------------------------------------------------

  VarT sum(const VarT& a) {
    T s = 0;
    for (T v : a->value) s += v;
    return record("sum", {}, {s}, {a}, [](Node<T>& self) {
      auto& pa = *self.parents[0];
      T* d = pa.grad_data();
      for (std::size_t i = 0; i < pa.size(); ++i) d[i] += self.grad[0];
    });
  }

  VarT mean(const VarT& a) {
    if (a->size() == 0) throw ContractError("mean of empty tensor");
    return scale(sum(a), T(1) / static_cast<T>(a->size()));
  }

  /// Column-wise mean of a [m×n] → [1×n].
  VarT mean_rows(const VarT& a) {
    require_rank2(a, "mean_rows");
    const std::size_t m = a->shape[0], n = a->shape[1];
    if (m == 0) throw ContractError("mean_rows of zero rows");
    std::vector<T> out(n, T(0));
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[j] += a->value[i * n + j];
    const T inv = T(1) / static_cast<T>(m);
    for (T& v : out) v *= inv;
    return record("mean_rows", {1, n}, std::move(out), {a}, [m, n, inv](Node<T>& self) {
      T* d = self.parents[0]->grad_data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) d[i * n + j] += self.grad[j] * inv;
    });
  }

  VarT dot(const VarT& a, const VarT& b) { return sum(mul(a, b)); }

  /// Selects one element (flat index) as a scalar.
  VarT pick(const VarT& a, std::size_t index) {
    if (index >= a->size())
      throw IndexError("pick: index " + std::to_string(index) + " out of range for " +
                       shape_str(a->shape));
    return record("pick", {}, {a->value[index]}, {a}, [index](Node<T>& self) {
      self.parents[0]->grad_data()[index] += self.grad[0];
    });
  }

  // ---- shape manipulation -------------------------------------------------

  VarT reshape(const VarT& a, Shape shape) {
    if (numel(shape) != a->size())
      throw DimensionError("reshape " + shape_str(a->shape) + " to " + shape_str(shape));
    return record("reshape", std::move(shape), a->value, {a}, pass_through());
  }

  VarT concat_rows(const std::vector<VarT>& parts) {
    if (parts.empty()) throw ContractError("concat_rows of nothing");
    const std::size_t n = parts.front()->cols();
    std::size_t m = 0;
    for (const auto& p : parts) {
      if (p->cols() != n)
        throw DimensionError("concat_rows: " + shape_str(p->shape) + " vs " +
                             shape_str(parts.front()->shape));
      m += p->size() / std::max<std::size_t>(n, 1);
    }
    std::vector<T> out;
    out.reserve(m * n);
    for (const auto& p : parts) out.insert(out.end(), p->value.begin(), p->value.end());
    return record("concat_rows", {m, n}, std::move(out), parts, [](Node<T>& self) {
      std::size_t off = 0;
      for (auto& p : self.parents) {
        if (p->requires_grad) {
          T* d = p->grad_data();
          for (std::size_t i = 0; i < p->size(); ++i) d[i] += self.grad[off + i];
        }
        off += p->size();
      }
    });
  }

  VarT concat_cols(const std::vector<VarT>& parts) {
    if (parts.empty()) throw ContractError("concat_cols of nothing");
    const std::size_t m = parts.front()->rows();
    std::size_t n = 0;
    for (const auto& p : parts) {
      if (p->rows() != m)
        throw DimensionError("concat_cols: " + shape_str(p->shape) + " vs " +
                             shape_str(parts.front()->shape));
      n += p->cols();
    }
    std::vector<T> out(m * n);
    std::size_t c0 = 0;
    for (const auto& p : parts) {
      const std::size_t pc = p->cols();
      for (std::size_t i = 0; i < m; ++i)
        std::copy_n(p->value.begin() + i * pc, pc, out.begin() + i * n + c0);
      c0 += pc;
    }
    return record("concat_cols", {m, n}, std::move(out), parts, [m, n](Node<T>& self) {
      std::size_t c = 0;
      for (auto& p : self.parents) {
        const std::size_t pc = p->cols();
        if (p->requires_grad) {
          T* d = p->grad_data();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < pc; ++j) d[i * pc + j] += self.grad[i * n + c + j];
        }
        c += pc;
      }
    });
  }

  VarT slice_rows(const VarT& a, std::size_t start, std::size_t count) {
    require_rank2(a, "slice_rows");
    const std::size_t n = a->shape[1];
    if (start + count > a->shape[0])
      throw IndexError("slice_rows [" + std::to_string(start) + ", +" + std::to_string(count) +
                       ") of " + shape_str(a->shape));
    std::vector<T> out(a->value.begin() + start * n, a->value.begin() + (start + count) * n);
    return record("slice_rows", {count, n}, std::move(out), {a}, [start, n](Node<T>& self) {
      T* d = self.parents[0]->grad_data() + start * n;
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
    });
  }

  VarT slice_cols(const VarT& a, std::size_t start, std::size_t count) {
    require_rank2(a, "slice_cols");
    const std::size_t m = a->shape[0], n = a->shape[1];
    if (start + count > n)
      throw IndexError("slice_cols [" + std::to_string(start) + ", +" + std::to_string(count) +
                       ") of " + shape_str(a->shape));
    std::vector<T> out(m * count);
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(a->value.begin() + i * n + start, count, out.begin() + i * count);
    return record("slice_cols", {m, count}, std::move(out), {a},
                  [m, n, start, count](Node<T>& self) {
                    T* d = self.parents[0]->grad_data();
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < count; ++j)
                        d[i * n + start + j] += self.grad[i * count + j];
                  });
  }

  /// Overwrites positions where mask is set with `fill`; those positions get
  /// no gradient.
  VarT mask_fill(const VarT& a, std::vector<std::uint8_t> mask, T fill) {
    if (mask.size() != a->size())
      throw DimensionError("mask_fill: mask of " + std::to_string(mask.size()) + " for " +
                           shape_str(a->shape));
    std::vector<T> out(a->value);
    for (std::size_t i = 0; i < out.size(); ++i)
      if (mask[i]) out[i] = fill;
    return record("mask_fill", a->shape, std::move(out), {a},
                  [mask = std::move(mask)](Node<T>& self) {
                    T* d = self.parents[0]->grad_data();
                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                      if (!mask[i]) d[i] += self.grad[i];
                  });
  }

  /// Same values, no gradient path.
  VarT stop_gradient(const VarT& a) { return constant(a->shape, a->value); }

  // ---- normalization ------------------------------------------------------

  VarT softmax(const VarT& x, int axis = -1) {
    auto [outer, d, inner] = axis_split(x->shape, axis, "softmax");
    std::vector<T> out(x->size());
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        auto at = [&](std::size_t k) { return (o * d + k) * inner + in; };
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t k = 0; k < d; ++k) mx = std::max(mx, x->value[at(k)]);
        T z = 0;
        for (std::size_t k = 0; k < d; ++k) z += (out[at(k)] = std::exp(x->value[at(k)] - mx));
        for (std::size_t k = 0; k < d; ++k) out[at(k)] /= z;
      }
    return record("softmax", x->shape, std::move(out), {x},
                  [outer, d, inner](Node<T>& self) {
                    T* dx = self.parents[0]->grad_data();
                    for (std::size_t o = 0; o < outer; ++o)
                      for (std::size_t in = 0; in < inner; ++in) {
                        auto at = [&](std::size_t k) { return (o * d + k) * inner + in; };
                        T s = 0;
                        for (std::size_t k = 0; k < d; ++k) s += self.grad[at(k)] * self.value[at(k)];
                        for (std::size_t k = 0; k < d; ++k)
                          dx[at(k)] += self.value[at(k)] * (self.grad[at(k)] - s);
                      }
                  });
  }

  VarT log_softmax(const VarT& x, int axis = -1) {
    auto [outer, d, inner] = axis_split(x->shape, axis, "log_softmax");
    std::vector<T> out(x->size());
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        auto at = [&](std::size_t k) { return (o * d + k) * inner + in; };
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t k = 0; k < d; ++k) mx = std::max(mx, x->value[at(k)]);
        T z = 0;
        for (std::size_t k = 0; k < d; ++k) z += std::exp(x->value[at(k)] - mx);
        const T lz = mx + std::log(z);
        for (std::size_t k = 0; k < d; ++k) out[at(k)] = x->value[at(k)] - lz;
      }
    return record("log_softmax", x->shape, std::move(out), {x},
                  [outer, d, inner](Node<T>& self) {
                    T* dx = self.parents[0]->grad_data();
                    for (std::size_t o = 0; o < outer; ++o)
                      for (std::size_t in = 0; in < inner; ++in) {
                        auto at = [&](std::size_t k) { return (o * d + k) * inner + in; };
                        T s = 0;
                        for (std::size_t k = 0; k < d; ++k) s += self.grad[at(k)];
                        for (std::size_t k = 0; k < d; ++k)
                          dx[at(k)] += self.grad[at(k)] - std::exp(self.value[at(k)]) * s;
                      }
                  });
  }

  /// Row-wise layer normalization of x [m×n] with affine gain and bias [n].
  VarT layer_norm(const VarT& x, const VarT& gain, const VarT& bias, T eps = T(1e-5)) {
    const std::size_t n = x->cols();
    const std::size_t m = x->size() / std::max<std::size_t>(n, 1);
    if (gain->size() != n || bias->size() != n)
      throw DimensionError("layer_norm: affine params do not match " + shape_str(x->shape));
    std::vector<T> out(x->size());
    std::vector<T> xhat(x->size());
    std::vector<T> rstd(m);
    for (std::size_t i = 0; i < m; ++i) {
      const T* row = x->value.data() + i * n;
      T mu = 0;
      for (std::size_t j = 0; j < n; ++j) mu += row[j];
      mu /= static_cast<T>(n);
      T var = 0;
      for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
      var /= static_cast<T>(n);
      rstd[i] = T(1) / std::sqrt(var + eps);
      for (std::size_t j = 0; j < n; ++j) {
        xhat[i * n + j] = (row[j] - mu) * rstd[i];
        out[i * n + j] = xhat[i * n + j] * gain->value[j] + bias->value[j];
      }
    }
    return record("layer_norm", x->shape, std::move(out), {x, gain, bias},
                  [m, n, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
                    auto& px = *self.parents[0];
                    auto& pg = *self.parents[1];
                    auto& pb = *self.parents[2];
                    const T* dy = self.grad.data();
                    if (pg.requires_grad) {
                      T* dg = pg.grad_data();
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) dg[j] += dy[i * n + j] * xhat[i * n + j];
                    }
                    if (pb.requires_grad) {
                      T* db = pb.grad_data();
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) db[j] += dy[i * n + j];
                    }
                    if (px.requires_grad) {
                      T* dx = px.grad_data();
                      for (std::size_t i = 0; i < m; ++i) {
                        T mean_dxhat = 0, mean_dxhat_xhat = 0;
                        for (std::size_t j = 0; j < n; ++j) {
                          const T dxh = dy[i * n + j] * pg.value[j];
                          mean_dxhat += dxh;
                          mean_dxhat_xhat += dxh * xhat[i * n + j];
                        }
                        mean_dxhat /= static_cast<T>(n);
                        mean_dxhat_xhat /= static_cast<T>(n);
                        for (std::size_t j = 0; j < n; ++j) {
                          const T dxh = dy[i * n + j] * pg.value[j];
                          dx[i * n + j] +=
                              rstd[i] * (dxh - mean_dxhat - xhat[i * n + j] * mean_dxhat_xhat);
                        }
                      }
                    }
                  });
  }

  // ---- embeddings ---------------------------------------------------------

  /// Gathers rows of table [V×d] by id. Gradient reaches the table only.
  VarT embedding_lookup(const VarT& table, std::span<const int> ids) {
    require_rank2(table, "embedding_lookup");
    const std::size_t V = table->shape[0], d = table->shape[1];
    std::vector<T> out(ids.size() * d);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= V)
        throw IndexError("embedding id " + std::to_string(ids[r]) + " outside vocabulary of " +
                         std::to_string(V));
      std::copy_n(table->value.begin() + ids[r] * d, d, out.begin() + r * d);
    }
    std::vector<int> idv(ids.begin(), ids.end());
    return record("embedding_lookup", {ids.size(), d}, std::move(out), {table},
                  [d, idv = std::move(idv)](Node<T>& self) {
                    T* dt = self.parents[0]->grad_data();
                    for (std::size_t r = 0; r < idv.size(); ++r)
                      for (std::size_t j = 0; j < d; ++j) dt[idv[r] * d + j] += self.grad[r * d + j];
                  });
  }

  /// Soft or one-hot rows [m×V] times table [V×d]; differentiable in both.
  VarT embedding_rows(const VarT& table, const VarT& rows) {
    if (rows->cols() != table->shape.at(0))
      throw DimensionError("embedding_rows: rows " + shape_str(rows->shape) +
                           " do not match table " + shape_str(table->shape));
    return matmul(rows->shape.size() == 2 ? rows : reshape(rows, {1, rows->size()}), table);
  }

  // ---- discrete estimators ------------------------------------------------

  /// Forward: one-hot of each row's argmax (ties → lowest index).
  /// Backward: the downstream gradient is handed to `soft` unchanged.
  VarT straight_through(const VarT& soft) {
    const std::size_t V = soft->cols();
    const std::size_t m = soft->size() / std::max<std::size_t>(V, 1);
    std::vector<T> out(soft->size(), T(0));
    for (std::size_t i = 0; i < m; ++i) {
      const T* row = soft->value.data() + i * V;
      out[i * V + static_cast<std::size_t>(std::max_element(row, row + V) - row)] = T(1);
    }
    return record("straight_through", soft->shape, std::move(out), {soft}, pass_through());
  }

  /// K one-hot rows for the K largest entries of soft [1×V], in descending
  /// order. Every row passes its gradient straight through to the shared
  /// soft distribution.
  VarT top_k_straight_through(const VarT& soft, std::size_t k) {
    const std::size_t V = soft->size();
    if (k < 1 || k > V)
      throw ContractError("top-K with K=" + std::to_string(k) + " over " + std::to_string(V) +
                          " tokens");
    std::vector<std::size_t> order(V);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return soft->value[a] > soft->value[b];
    });
    std::vector<T> out(k * V, T(0));
    for (std::size_t r = 0; r < k; ++r) out[r * V + order[r]] = T(1);
    return record("top_k_straight_through", {k, V}, std::move(out), {soft},
                  [k, V](Node<T>& self) {
                    T* d = self.parents[0]->grad_data();
                    for (std::size_t r = 0; r < k; ++r)
                      for (std::size_t v = 0; v < V; ++v) d[v] += self.grad[r * V + v];
                  });
  }

  // ---- backward -----------------------------------------------------------

  /// Accumulates d(root)/d(node) into every requires_grad ancestor. Op-node
  /// gradients are reset on each call; parameter gradients accumulate.
  void backward(const VarT& root) {
    if (root->size() != 1)
      throw ContractError("backward needs a scalar root, got " + shape_str(root->shape));
    for (auto& n : tape_) n->grad.clear();
    if (!root->requires_grad) return;
    root->grad.assign(1, T(1));
    auto it = std::find(tape_.rbegin(), tape_.rend(), root);
    if (it == tape_.rend()) return;  // root is a parameter leaf
    for (; it != tape_.rend(); ++it) {
      Node<T>& n = **it;
      if (!n.grad.empty() && n.backward_fn) n.backward_fn(n);
    }
  }

 private:
  using BackwardFn = std::function<void(Node<T>&)>;

  static BackwardFn pass_through() {
    return [](Node<T>& self) {
      T* d = self.parents[0]->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
    };
  }

  VarT record(const char* op, Shape shape, std::vector<T> value, std::vector<VarT> parents,
              BackwardFn fn) {
    auto n = std::make_shared<Node<T>>();
    n->op = op;
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->requires_grad = grad_enabled_ && std::any_of(parents.begin(), parents.end(),
                                                    [](const VarT& p) { return p->requires_grad; });
    if (n->requires_grad) {
      n->backward_fn = std::move(fn);
      n->parents = std::move(parents);
    }
    tape_.push_back(n);
    return n;
  }

  static void require_rank2(const VarT& a, const char* op) {
    if (a->shape.size() != 2)
      throw DimensionError(std::string(op) + " expects a matrix, got " + shape_str(a->shape));
  }

  static void require_same(const VarT& a, const VarT& b, const char* op) {
    if (a->shape != b->shape)
      throw DimensionError(std::string(op) + ": " + shape_str(a->shape) + " vs " +
                           shape_str(b->shape));
  }

  struct AxisSplit {
    std::size_t outer, dim, inner;
  };

  static AxisSplit axis_split(const Shape& shape, int axis, const char* op) {
    const int rank = static_cast<int>(shape.size());
    if (rank == 0) return {1, 1, 1};
    const int ax = axis < 0 ? axis + rank : axis;
    if (ax < 0 || ax >= rank)
      throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " for " +
                           shape_str(shape));
    AxisSplit s{1, shape[ax], 1};
    for (int i = 0; i < ax; ++i) s.outer *= shape[i];
    for (int i = ax + 1; i < rank; ++i) s.inner *= shape[i];
    if (s.dim == 0) throw ContractError(std::string(op) + " over an empty axis");
    return s;
  }

  std::uint64_t seed_;
  std::mt19937_64 rng_;
  bool grad_enabled_;
  std::vector<VarT> tape_;
};

/// Max relative error between analytic gradients and central differences:
/// |a - n| / max(|a|, |n|, 1e-8) over every element of every input that
/// requires a gradient. `build` must construct a scalar from the inputs and
/// be deterministic for the fixed graph seed.
template <typename T, typename Build>
double grad_check(Build&& build, const std::vector<Var<T>>& inputs, double eps = 1e-3,
                  std::uint64_t seed = 0) {
  for (const auto& x : inputs) x->grad.clear();
  {
    Graph<T> g(seed);
    g.backward(build(g));
  }
  auto eval = [&] {
    Graph<T> g(seed);
    return static_cast<double>(build(g)->item());
  };
  double worst = 0.0;
  for (const auto& x : inputs) {
    if (!x->requires_grad) continue;
    const std::vector<T> analytic =
        x->grad.empty() ? std::vector<T>(x->size(), T(0)) : x->grad;
    for (std::size_t i = 0; i < x->size(); ++i) {
      const T saved = x->value[i];
      x->value[i] = static_cast<T>(saved + eps);
      const double fp = eval();
      x->value[i] = static_cast<T>(saved - eps);
      const double fm = eval();
      x->value[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = static_cast<double>(analytic[i]);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace hypogen
