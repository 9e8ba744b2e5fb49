// Copyright 2026 The mimkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mimkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

namespace mimkit {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---- Tensor -------------------------------------------------------------------

template <typename T>
Tensor<T>::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), T(0)) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + shape_str(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
  }
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
Tensor<T> Tensor<T>::matrix(std::initializer_list<std::initializer_list<T>> rows) {
  const std::size_t m = rows.size();
  const std::size_t n = m ? rows.begin()->size() : 0;
  std::vector<T> data;
  data.reserve(m * n);
  for (const auto& r : rows) {
    if (r.size() != n) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({m, n}, std::move(data));
}

template <typename T>
Tensor<T> Tensor<T>::vector(std::initializer_list<T> values) {
  return Tensor({values.size()}, std::vector<T>(values));
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

// ---- Tape ---------------------------------------------------------------------

template <typename T>
Tensor<T> Tape<T>::parameter(const std::string& name, const Tensor<T>& value) {
  for (const auto& p : params_) {
    if (p.name == name) throw ContractError("parameter registered twice: " + name);
  }
  Tensor<T> t = record(value.shape(), value.values(), nullptr);
  params_.push_back({name, t.node_, value.shape()});
  return t;
}

template <typename T>
Tensor<T> Tape<T>::record(Shape shape, std::vector<T> data, BackwardFn fn) {
  Tensor<T> t(std::move(shape), std::move(data));
  t.tape_ = this;
  t.node_ = sizes_.size();
  sizes_.push_back(t.numel());
  fns_.push_back(std::move(fn));
  return t;
}

template <typename T>
GradMap<T> Tape<T>::backward(const Tensor<T>& loss) {
  if (loss.tape_ != this) throw ContractError("loss is not recorded on this tape");
  if (loss.numel() != 1) throw ContractError("backward needs a scalar loss, got " + shape_str(loss.shape()));
  GradBuffers<T> grads(sizes_);
  grads.at(loss.node_)[0] = T(1);
  for (std::size_t i = loss.node_ + 1; i-- > 0;) {
    if (!fns_[i] || !grads.has(i)) continue;
    std::span<T> g = grads.at(i);
    if (probe_) probe_(i, g);
    fns_[i](g, grads);
  }
  GradMap<T> out;
  for (const auto& p : params_) {
    std::vector<T> g = grads.has(p.node) ? std::move(grads.raw(p.node)) : std::vector<T>(sizes_[p.node], T(0));
    out.emplace(p.name, Tensor<T>(p.shape, std::move(g)));
  }
  return out;
}

// ---- helpers ------------------------------------------------------------------

namespace {

constexpr std::size_t kNoNode = std::numeric_limits<std::size_t>::max();

template <typename T>
Tape<T>* tape_of(std::initializer_list<const Tensor<T>*> xs) {
  Tape<T>* tape = nullptr;
  for (const Tensor<T>* x : xs) {
    if (!x->on_tape()) continue;
    if (tape && tape != x->tape()) throw ContractError("op inputs recorded on different tapes");
    tape = x->tape();
  }
  return tape;
}

template <typename T>
std::size_t node_of(const Tensor<T>& x) {
  return x.on_tape() ? x.node() : kNoNode;
}

template <typename T>
Tensor<T> emit(Tape<T>* tape, Shape shape, std::vector<T> data, typename Tape<T>::BackwardFn fn) {
  if (!tape) return Tensor<T>(std::move(shape), std::move(data));
  return tape->record(std::move(shape), std::move(data), std::move(fn));
}

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

void require_matrix(const Shape& s, const char* op) {
  require(s.size() == 2, std::string(op) + ": expected a matrix, got " + shape_str(s));
}

// c[m x n] (+)= op(a) * op(b), row-major.
template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool ta, bool tb) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = ta ? a[p * m + i] : a[i * k + p];
      if (aip == T(0)) continue;
      if (!tb) {
        const T* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) ci[j] += aip * b[j * k + p];
      }
    }
  }
}

}  // namespace

// ---- linear algebra -----------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a.shape(), "matmul");
  require_matrix(b.shape(), "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul: inner extents differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<T> c(m * n, T(0));
  gemm(a.data().data(), b.data().data(), c.data(), m, k, n, false, false);
  Tape<T>* tape = tape_of({&a, &b});
  const std::size_t na = node_of(a), nb = node_of(b);
  typename Tape<T>::BackwardFn fn;
  if (tape) {
    fn = [na, nb, av = nb != kNoNode ? a.values() : std::vector<T>{}, bv = na != kNoNode ? b.values() : std::vector<T>{},
          m, k, n](std::span<const T> g, GradBuffers<T>& grads) {
      if (na != kNoNode) gemm(g.data(), bv.data(), grads.at(na).data(), m, n, k, false, true);
      if (nb != kNoNode) gemm(av.data(), g.data(), grads.at(nb).data(), k, m, n, true, false);
    };
  }
  return emit(tape, {m, n}, std::move(c), std::move(fn));
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_matrix(a.shape(), "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  Tape<T>* tape = tape_of({&a});
  const std::size_t na = node_of(a);
  return emit(tape, {n, m}, std::move(out), [na, m, n](std::span<const T> g, GradBuffers<T>& grads) {
    auto ga = grads.at(na);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  require(shape_numel(shape) == a.numel(), "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  const std::size_t na = node_of(a);
  return emit(tape_of({&a}), std::move(shape), a.values(), [na](std::span<const T> g, GradBuffers<T>& grads) {
    auto ga = grads.at(na);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

// ---- elementwise --------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  const std::size_t na = node_of(a), nb = node_of(b);
  return emit(tape_of({&a, &b}), a.shape(), std::move(out), [na, nb](std::span<const T> g, GradBuffers<T>& grads) {
    for (std::size_t id : {na, nb}) {
      if (id == kNoNode) continue;
      auto gx = grads.at(id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "sub: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  const std::size_t na = node_of(a), nb = node_of(b);
  return emit(tape_of({&a, &b}), a.shape(), std::move(out), [na, nb](std::span<const T> g, GradBuffers<T>& grads) {
    if (na != kNoNode) {
      auto ga = grads.at(na);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (nb != kNoNode) {
      auto gb = grads.at(nb);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  const std::size_t na = node_of(a), nb = node_of(b);
  return emit(tape_of({&a, &b}), a.shape(), std::move(out),
              [na, nb, av = a.values(), bv = b.values()](std::span<const T> g, GradBuffers<T>& grads) {
                if (na != kNoNode) {
                  auto ga = grads.at(na);
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                }
                if (nb != kNoNode) {
                  auto gb = grads.at(nb);
                  for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                }
              });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  const std::size_t na = node_of(a);
  return emit(tape_of({&a}), a.shape(), std::move(out), [na, factor](std::span<const T> g, GradBuffers<T>& grads) {
    auto ga = grads.at(na);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * a[i];
  const std::size_t na = node_of(a);
  return emit(tape_of({&a}), a.shape(), std::move(out),
              [na, av = a.values()](std::span<const T> g, GradBuffers<T>& grads) {
                auto ga = grads.at(na);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += T(2) * av[i] * g[i];
              });
}

template <typename T>
Tensor<T> add_rowwise(const Tensor<T>& a, const Tensor<T>& v) {
  require_matrix(a.shape(), "add_rowwise");
  const std::size_t m = a.dim(0), n = a.dim(1);
  require(v.numel() == n, "add_rowwise: row vector has " + std::to_string(v.numel()) + " values, need " + std::to_string(n));
  std::vector<T> out(a.values());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += v[j];
  const std::size_t na = node_of(a), nv = node_of(v);
  return emit(tape_of({&a, &v}), a.shape(), std::move(out), [na, nv, m, n](std::span<const T> g, GradBuffers<T>& grads) {
    if (na != kNoNode) {
      auto ga = grads.at(na);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (nv != kNoNode) {
      auto gv = grads.at(nv);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gv[j] += g[i * n + j];
    }
  });
}

// ---- reductions ---------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = T(0);
  for (T x : a.data()) s += x;
  const std::size_t na = node_of(a);
  return emit(tape_of({&a}), Shape{}, std::vector<T>{s}, [na](std::span<const T> g, GradBuffers<T>& grads) {
    auto ga = grads.at(na);
    for (auto& x : ga) x += g[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  require(a.numel() > 0, "mean of empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& a) {
  require_matrix(a.shape(), "mean_rows");
  const std::size_t m = a.dim(0), n = a.dim(1);
  require(m > 0, "mean_rows of zero rows");
  std::vector<T> out(n, T(0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += a[i * n + j];
  const T inv = T(1) / static_cast<T>(m);
  for (auto& x : out) x *= inv;
  const std::size_t na = node_of(a);
  return emit(tape_of({&a}), Shape{n}, std::move(out), [na, m, n, inv](std::span<const T> g, GradBuffers<T>& grads) {
    auto ga = grads.at(na);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j] * inv;
  });
}

// ---- nonlinearities -----------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  require(axis < x.rank(), "softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
  for (T v : x.data()) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
  }
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  std::vector<T> y(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = x[base];
      for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, x[base + k * inner]);
      T z = T(0);
      for (std::size_t k = 0; k < len; ++k) {
        const T e = std::exp(x[base + k * inner] - mx);
        y[base + k * inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < len; ++k) y[base + k * inner] /= z;
    }
  }
  const std::size_t nx = node_of(x);
  std::vector<T> yv = y;
  return emit(tape_of({&x}), s, std::move(y),
              [nx, yv = std::move(yv), outer, inner, len](std::span<const T> g, GradBuffers<T>& grads) {
                auto gx = grads.at(nx);
                for (std::size_t o = 0; o < outer; ++o) {
                  for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * len * inner + in;
                    T dot = T(0);
                    for (std::size_t k = 0; k < len; ++k) dot += g[base + k * inner] * yv[base + k * inner];
                    for (std::size_t k = 0; k < len; ++k) {
                      const std::size_t idx = base + k * inner;
                      gx[idx] += yv[idx] * (g[idx] - dot);
                    }
                  }
                }
              });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  require(x.rank() >= 1, "layer_norm: scalar input");
  if (!(eps > T(0))) throw ConfigError("layer_norm: eps must be positive");
  const std::size_t n = x.shape().back();
  require(gain.numel() == n && bias.numel() == n, "layer_norm: gain/bias extent must be " + std::to_string(n));
  const std::size_t rows = n ? x.numel() / n : 0;
  std::vector<T> y(x.numel()), xhat(x.numel()), rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * n;
    T mu = T(0);
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(n);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (xr[j] - mu) * rstd[r];
      y[r * n + j] = xhat[r * n + j] * gain[j] + bias[j];
    }
  }
  const std::size_t nx = node_of(x), ng = node_of(gain), nb = node_of(bias);
  return emit(tape_of({&x, &gain, &bias}), x.shape(), std::move(y),
              [nx, ng, nb, n, rows, xhat = std::move(xhat), rstd = std::move(rstd), gv = gain.values()](
                  std::span<const T> g, GradBuffers<T>& grads) {
                if (ng != kNoNode) {
                  auto gg = grads.at(ng);
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < n; ++j) gg[j] += g[r * n + j] * xhat[r * n + j];
                }
                if (nb != kNoNode) {
                  auto gb = grads.at(nb);
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
                }
                if (nx != kNoNode) {
                  auto gx = grads.at(nx);
                  for (std::size_t r = 0; r < rows; ++r) {
                    T m1 = T(0), m2 = T(0);
                    for (std::size_t j = 0; j < n; ++j) {
                      const T gh = g[r * n + j] * gv[j];
                      m1 += gh;
                      m2 += gh * xhat[r * n + j];
                    }
                    m1 /= static_cast<T>(n);
                    m2 /= static_cast<T>(n);
                    for (std::size_t j = 0; j < n; ++j) {
                      const T gh = g[r * n + j] * gv[j];
                      gx[r * n + j] += rstd[r] * (gh - m1 - xhat[r * n + j] * m2);
                    }
                  }
                }
              });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T kC = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kA = static_cast<T>(0.044715);
  std::vector<T> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const T v = x[i];
    y[i] = T(0.5) * v * (T(1) + std::tanh(kC * (v + kA * v * v * v)));
  }
  const std::size_t nx = node_of(x);
  return emit(tape_of({&x}), x.shape(), std::move(y), [nx, xv = x.values()](std::span<const T> g, GradBuffers<T>& grads) {
    auto gx = grads.at(nx);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = xv[i];
      const T t = std::tanh(kC * (v + kA * v * v * v));
      const T d = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * kC * (T(1) + T(3) * kA * v * v);
      gx[i] += g[i] * d;
    }
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  const std::size_t nx = node_of(x);
  return emit(tape_of({&x}), x.shape(), std::move(y), [nx, xv = x.values()](std::span<const T> g, GradBuffers<T>& grads) {
    auto gx = grads.at(nx);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > T(0)) gx[i] += g[i];
  });
}

template <typename T>
Tensor<T> smooth_l1(const Tensor<T>& x, T beta) {
  if (!(beta > T(0))) throw ConfigError("smooth_l1: beta must be positive");
  std::vector<T> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const T a = std::abs(x[i]);
    y[i] = a < beta ? T(0.5) * x[i] * x[i] / beta : a - T(0.5) * beta;
  }
  const std::size_t nx = node_of(x);
  return emit(tape_of({&x}), x.shape(), std::move(y),
              [nx, beta, xv = x.values()](std::span<const T> g, GradBuffers<T>& grads) {
                auto gx = grads.at(nx);
                for (std::size_t i = 0; i < g.size(); ++i) {
                  const T v = xv[i];
                  const T d = std::abs(v) < beta ? v / beta : (v > T(0) ? T(1) : T(-1));
                  gx[i] += g[i] * d;
                }
              });
}

// ---- indexing -----------------------------------------------------------------

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
  require_matrix(x.shape(), "gather_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<T> out(rows.size() * n);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] < m, "gather_rows: index " + std::to_string(rows[r]) + " out of range");
    std::copy_n(x.data().begin() + rows[r] * n, n, out.begin() + r * n);
  }
  const std::size_t nx = node_of(x);
  return emit(tape_of({&x}), Shape{rows.size(), n}, std::move(out),
              [nx, n, idx = std::vector<std::size_t>(rows.begin(), rows.end())](std::span<const T> g, GradBuffers<T>& grads) {
                auto gx = grads.at(nx);
                for (std::size_t r = 0; r < idx.size(); ++r)
                  for (std::size_t j = 0; j < n; ++j) gx[idx[r] * n + j] += g[r * n + j];
              });
}

template <typename T>
Tensor<T> scatter_rows(const Tensor<T>& base, const Tensor<T>& src, std::span<const std::size_t> rows) {
  require_matrix(base.shape(), "scatter_rows");
  require_matrix(src.shape(), "scatter_rows");
  const std::size_t m = base.dim(0), n = base.dim(1);
  require(src.dim(1) == n && src.dim(0) == rows.size(), "scatter_rows: source " + shape_str(src.shape()) +
                                                             " does not fit " + std::to_string(rows.size()) + " rows");
  std::vector<T> out(base.values());
  std::vector<char> replaced(m, 0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] < m, "scatter_rows: index out of range");
    require(!replaced[rows[r]], "scatter_rows: duplicate index");
    replaced[rows[r]] = 1;
    std::copy_n(src.data().begin() + r * n, n, out.begin() + rows[r] * n);
  }
  const std::size_t nb = node_of(base), ns = node_of(src);
  return emit(tape_of({&base, &src}), base.shape(), std::move(out),
              [nb, ns, n, replaced = std::move(replaced), idx = std::vector<std::size_t>(rows.begin(), rows.end())](
                  std::span<const T> g, GradBuffers<T>& grads) {
                if (nb != kNoNode) {
                  auto gb = grads.at(nb);
                  for (std::size_t i = 0; i < replaced.size(); ++i) {
                    if (replaced[i]) continue;
                    for (std::size_t j = 0; j < n; ++j) gb[i * n + j] += g[i * n + j];
                  }
                }
                if (ns != kNoNode) {
                  auto gs = grads.at(ns);
                  for (std::size_t r = 0; r < idx.size(); ++r)
                    for (std::size_t j = 0; j < n; ++j) gs[r * n + j] += g[idx[r] * n + j];
                }
              });
}

template <typename T>
Tensor<T> repeat_rows(const Tensor<T>& v, std::size_t count) {
  const std::size_t n = v.numel();
  std::vector<T> out(count * n);
  for (std::size_t r = 0; r < count; ++r) std::copy_n(v.data().begin(), n, out.begin() + r * n);
  const std::size_t nv = node_of(v);
  return emit(tape_of({&v}), Shape{count, n}, std::move(out), [nv, n, count](std::span<const T> g, GradBuffers<T>& grads) {
    auto gv = grads.at(nv);
    for (std::size_t r = 0; r < count; ++r)
      for (std::size_t j = 0; j < n; ++j) gv[j] += g[r * n + j];
  });
}

template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a.shape(), "concat_rows");
  require_matrix(b.shape(), "concat_rows");
  require(a.dim(1) == b.dim(1), "concat_rows: column extents differ");
  std::vector<T> out(a.values());
  out.insert(out.end(), b.data().begin(), b.data().end());
  const std::size_t na = node_of(a), nb = node_of(b), split = a.numel();
  return emit(tape_of({&a, &b}), Shape{a.dim(0) + b.dim(0), a.dim(1)}, std::move(out),
              [na, nb, split](std::span<const T> g, GradBuffers<T>& grads) {
                if (na != kNoNode) {
                  auto ga = grads.at(na);
                  for (std::size_t i = 0; i < split; ++i) ga[i] += g[i];
                }
                if (nb != kNoNode) {
                  auto gb = grads.at(nb);
                  for (std::size_t i = split; i < g.size(); ++i) gb[i - split] += g[i];
                }
              });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  require_matrix(x.shape(), "slice_rows");
  require(begin + count <= x.dim(0), "slice_rows: range out of bounds");
  const std::size_t n = x.dim(1);
  std::vector<T> out(x.data().begin() + begin * n, x.data().begin() + (begin + count) * n);
  const std::size_t nx = node_of(x), off = begin * n;
  return emit(tape_of({&x}), Shape{count, n}, std::move(out), [nx, off](std::span<const T> g, GradBuffers<T>& grads) {
    auto gx = grads.at(nx);
    for (std::size_t i = 0; i < g.size(); ++i) gx[off + i] += g[i];
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  require_matrix(x.shape(), "slice_cols");
  const std::size_t m = x.dim(0), n = x.dim(1);
  require(begin + count <= n, "slice_cols: range out of bounds");
  std::vector<T> out(m * count);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(x.data().begin() + i * n + begin, count, out.begin() + i * count);
  const std::size_t nx = node_of(x);
  return emit(tape_of({&x}), Shape{m, count}, std::move(out),
              [nx, m, n, begin, count](std::span<const T> g, GradBuffers<T>& grads) {
                auto gx = grads.at(nx);
                for (std::size_t i = 0; i < m; ++i)
                  for (std::size_t j = 0; j < count; ++j) gx[i * n + begin + j] += g[i * count + j];
              });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t m = parts[0].dim(0);
  std::size_t n = 0;
  Tape<T>* tape = nullptr;
  for (const auto& p : parts) {
    require_matrix(p.shape(), "concat_cols");
    require(p.dim(0) == m, "concat_cols: row extents differ");
    n += p.dim(1);
    Tape<T>* t = tape_of({&p});
    if (t && tape && t != tape) throw ContractError("op inputs recorded on different tapes");
    if (t) tape = t;
  }
  std::vector<T> out(m * n);
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // node, width
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    for (std::size_t i = 0; i < m; ++i) std::copy_n(p.data().begin() + i * w, w, out.begin() + i * n + col);
    spans.emplace_back(node_of(p), w);
    col += w;
  }
  return emit(tape, Shape{m, n}, std::move(out), [spans = std::move(spans), m, n](std::span<const T> g, GradBuffers<T>& grads) {
    std::size_t c = 0;
    for (const auto& [id, w] : spans) {
      if (id != kNoNode) {
        auto gp = grads.at(id);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * n + c + j];
      }
      c += w;
    }
  });
}

// ---- instantiation ------------------------------------------------------------

#define MIMKIT_INSTANTIATE(T)                                                                         \
  template class Tensor<T>;                                                                           \
  template class Tape<T>;                                                                             \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> transpose(const Tensor<T>&);                                                     \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> scale(const Tensor<T>&, T);                                                      \
  template Tensor<T> square(const Tensor<T>&);                                                        \
  template Tensor<T> add_rowwise(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> sum(const Tensor<T>&);                                                           \
  template Tensor<T> mean(const Tensor<T>&);                                                          \
  template Tensor<T> mean_rows(const Tensor<T>&);                                                     \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                          \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);             \
  template Tensor<T> gelu(const Tensor<T>&);                                                          \
  template Tensor<T> relu(const Tensor<T>&);                                                          \
  template Tensor<T> smooth_l1(const Tensor<T>&, T);                                                  \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);                     \
  template Tensor<T> scatter_rows(const Tensor<T>&, const Tensor<T>&, std::span<const std::size_t>);  \
  template Tensor<T> repeat_rows(const Tensor<T>&, std::size_t);                                      \
  template Tensor<T> concat_rows(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                          \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                          \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);

MIMKIT_INSTANTIATE(float)
MIMKIT_INSTANTIATE(double)

#undef MIMKIT_INSTANTIATE

}  // namespace mimkit
