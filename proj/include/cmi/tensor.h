// Copyright 2026 The CMI Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CMI_TENSOR_H_
#define CMI_TENSOR_H_

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <type_traits>
#include <vector>

namespace cmi {

// Dense row-major matrix. Rows are exposed as spans so the math helpers
// below work on matrix rows and plain vectors alike.
template <typename Real>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, Real fill = Real(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Real& operator()(std::size_t r, std::size_t c) {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  Real operator()(std::size_t r, std::size_t c) const {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }

  std::span<Real> row(std::size_t r) {
    assert(r < rows_);
    return {data_.data() + r * cols_, cols_};
  }
  std::span<const Real> row(std::size_t r) const {
    assert(r < rows_);
    return {data_.data() + r * cols_, cols_};
  }

  std::span<Real> flat() { return data_; }
  std::span<const Real> flat() const { return data_; }

  void Fill(Real value) { std::fill(data_.begin(), data_.end(), value); }

  template <typename To>
  Matrix<To> Cast() const {
    Matrix<To> out(rows_, cols_);
    for (std::size_t i = 0; i < data_.size(); ++i) {
      out.flat()[i] = static_cast<To>(data_[i]);
    }
    return out;
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Real> data_;
};

// The helpers take spans of either constness so matrix rows, const rows and
// vectors mix freely.
template <typename T, typename U>
std::remove_const_t<T> Dot(std::span<T> a, std::span<U> b) {
  assert(a.size() == b.size());
  std::remove_const_t<T> sum = 0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
  return sum;
}

template <typename T>
std::remove_const_t<T> Norm(std::span<T> a) {
  return std::sqrt(Dot(a, a));
}

// y += alpha * x
template <typename Real, typename T>
void Axpy(std::type_identity_t<Real> alpha, std::span<T> x,
          std::span<Real> y) {
  assert(x.size() == y.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

// out = W x, W is out.size() x x.size().
template <typename Real, typename T>
void MatVec(const Matrix<Real>& w, std::span<T> x, std::span<Real> out) {
  assert(w.rows() == out.size() && w.cols() == x.size());
  for (std::size_t r = 0; r < w.rows(); ++r) out[r] = Dot(w.row(r), x);
}

// out += W^T y
template <typename Real, typename T>
void MatTVecAdd(const Matrix<Real>& w, std::span<T> y, std::span<Real> out) {
  assert(w.rows() == y.size() && w.cols() == out.size());
  for (std::size_t r = 0; r < w.rows(); ++r) Axpy(y[r], w.row(r), out);
}

// W += a b^T
template <typename Real, typename T, typename U>
void OuterAdd(std::span<T> a, std::span<U> b, Matrix<Real>& w) {
  assert(w.rows() == a.size() && w.cols() == b.size());
  for (std::size_t r = 0; r < a.size(); ++r) Axpy(a[r], b, w.row(r));
}

template <typename To, typename From>
std::vector<To> CastVector(const std::vector<From>& v) {
  return std::vector<To>(v.begin(), v.end());
}

}  // namespace cmi

#endif  // CMI_TENSOR_H_
