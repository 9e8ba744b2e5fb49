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

#pragma once

// Dense row-major tensors with a define-by-run gradient tape.
//
// A Tensor owns its values. When any input of an op lives on a Tape the
// result is recorded on that tape together with a closure that maps the
// output gradient back onto the inputs. Tape::backward replays those
// closures in exact reverse recording order.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mimkit/errors.hpp"

namespace mimkit {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
class Tape;

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }
  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows);
  static Tensor vector(std::initializer_list<T> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const T> data() const { return data_; }
  std::span<T> mutable_data() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T operator[](std::size_t i) const { return data_[i]; }
  T& operator[](std::size_t i) { return data_[i]; }
  T at(std::size_t row, std::size_t col) const { return data_[row * shape_.at(1) + col]; }
  T item() const;

  bool on_tape() const { return tape_ != nullptr; }
  Tape<T>* tape() const { return tape_; }
  std::size_t node() const { return node_; }

  // Copy of the values with no tape attachment.
  Tensor detach() const { return Tensor(shape_, data_); }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

 private:
  friend class Tape<T>;
  Shape shape_;
  std::vector<T> data_;
  Tape<T>* tape_ = nullptr;
  std::size_t node_ = 0;
};

// Gradient buffers indexed by tape node, allocated on first touch.
template <typename T>
class GradBuffers {
 public:
  explicit GradBuffers(const std::vector<std::size_t>& sizes) : sizes_(sizes), grads_(sizes.size()) {}

  std::span<T> at(std::size_t node) {
    auto& g = grads_[node];
    if (g.empty() && sizes_[node] != 0) g.assign(sizes_[node], T(0));
    return g;
  }
  bool has(std::size_t node) const { return !grads_[node].empty(); }
  std::vector<T>& raw(std::size_t node) { return grads_[node]; }

 private:
  const std::vector<std::size_t>& sizes_;
  std::vector<std::vector<T>> grads_;
};

template <typename T>
using GradMap = std::map<std::string, Tensor<T>>;

template <typename T>
class Tape {
 public:
  // Receives the output gradient and accumulates into the input buffers.
  using BackwardFn = std::function<void(std::span<const T> grad_out, GradBuffers<T>& grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a trainable leaf. Each name may be registered once.
  Tensor<T> parameter(const std::string& name, const Tensor<T>& value);

  // Records a computed value. Used by op implementations.
  Tensor<T> record(Shape shape, std::vector<T> data, BackwardFn fn);

  // Gradients of a scalar loss for every registered parameter. Parameters
  // unreachable from the loss receive zero gradients.
  GradMap<T> backward(const Tensor<T>& loss);

  std::size_t size() const { return sizes_.size(); }
  std::size_t parameter_count() const { return params_.size(); }

  // Test hook: called on every op's output gradient before its closure runs.
  void set_backward_probe(std::function<void(std::size_t node, std::span<T>)> probe) {
    probe_ = std::move(probe);
  }

 private:
  std::vector<std::size_t> sizes_;
  std::vector<BackwardFn> fns_;
  struct Param {
    std::string name;
    std::size_t node;
    Shape shape;
  };
  std::vector<Param> params_;
  std::function<void(std::size_t, std::span<T>)> probe_;
};

// ---- ops --------------------------------------------------------------------
// All ops accept plain or taped tensors. Mixed-tape inputs are a contract
// error. Matrices are rank 2, vectors rank 1.

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> square(const Tensor<T>& a);
// a[m x n] + v[n] on every row.
template <typename T> Tensor<T> add_rowwise(const Tensor<T>& a, const Tensor<T>& v);

template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
// [m x n] -> [n], mean over rows.
template <typename T> Tensor<T> mean_rows(const Tensor<T>& a);

template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);
// Normalizes over the last axis; gain and bias have the last extent.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps);
// tanh approximation.
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
// Elementwise 0.5 x^2 / beta if |x| < beta, else |x| - 0.5 beta.
template <typename T> Tensor<T> smooth_l1(const Tensor<T>& x, T beta);

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows);
// Copy of base with rows[i] replaced by src row i.
template <typename T>
Tensor<T> scatter_rows(const Tensor<T>& base, const Tensor<T>& src, std::span<const std::size_t> rows);
// v[n] stacked count times -> [count x n].
template <typename T> Tensor<T> repeat_rows(const Tensor<T>& v, std::size_t count);
template <typename T> Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t count);
template <typename T> Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count);
template <typename T> Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);

inline constexpr double kLayerNormEps = 1e-6;

}  // namespace mimkit
