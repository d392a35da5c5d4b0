#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "bnn/errors.hpp"

namespace bnn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using ColumnVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Dense row-major tensor. Rank 0 is a scalar (empty shape, one value).
// Two-dimensional views go through Eigen maps so callers can write matrix
// expressions without copying.
template <typename Scalar>
class DenseTensor {
 public:
  using scalar_type = Scalar;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;
  using VectorMap = Eigen::Map<ColumnVector<Scalar>>;
  using ConstVectorMap = Eigen::Map<const ColumnVector<Scalar>>;

  DenseTensor() : values_(ColumnVector<Scalar>::Zero(1)) {}

  explicit DenseTensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)) {
    check_extents();
    values_ = ColumnVector<Scalar>::Constant(static_cast<Eigen::Index>(numel(shape_)), fill);
  }

  DenseTensor(Shape shape, std::vector<Scalar> values) : shape_(std::move(shape)) {
    check_extents();
    if (values.size() != numel(shape_)) {
      throw DimensionError("tensor of shape " + to_string(shape_) + " needs " +
                           std::to_string(numel(shape_)) + " values, got " +
                           std::to_string(values.size()));
    }
    values_ = ConstVectorMap(values.data(), static_cast<Eigen::Index>(values.size()));
  }

  template <typename Derived>
  DenseTensor(Shape shape, const Eigen::DenseBase<Derived>& values) : shape_(std::move(shape)) {
    check_extents();
    if (static_cast<std::size_t>(values.size()) != numel(shape_)) {
      throw DimensionError("tensor of shape " + to_string(shape_) + " needs " +
                           std::to_string(numel(shape_)) + " values, got " +
                           std::to_string(values.size()));
    }
    values_.resize(values.size());
    // Row-major flatten regardless of the source storage order.
    Eigen::Index k = 0;
    for (Eigen::Index r = 0; r < values.rows(); ++r)
      for (Eigen::Index c = 0; c < values.cols(); ++c) values_[k++] = values.derived()(r, c);
  }

  static DenseTensor scalar(Scalar value) { return DenseTensor(Shape{}, value); }
  static DenseTensor vector(std::initializer_list<Scalar> values) {
    return DenseTensor(Shape{values.size()}, std::vector<Scalar>(values));
  }
  static DenseTensor zeros_like(const DenseTensor& other) { return DenseTensor(other.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return static_cast<std::size_t>(values_.size()); }
  std::size_t dim(std::size_t axis) const {
    if (axis >= shape_.size()) throw DimensionError("axis out of range for " + to_string(shape_));
    return shape_[axis];
  }

  Scalar& operator[](std::size_t i) { return values_[static_cast<Eigen::Index>(i)]; }
  Scalar operator[](std::size_t i) const { return values_[static_cast<Eigen::Index>(i)]; }
  Scalar& at(std::size_t r, std::size_t c) { return values_[static_cast<Eigen::Index>(r * cols() + c)]; }
  Scalar at(std::size_t r, std::size_t c) const {
    return values_[static_cast<Eigen::Index>(r * cols() + c)];
  }
  Scalar item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape_));
    return values_[0];
  }

  ColumnVector<Scalar>& values() noexcept { return values_; }
  const ColumnVector<Scalar>& values() const noexcept { return values_; }
  auto array() { return values_.array(); }
  auto array() const { return values_.array(); }

  // Rows/cols of the 2-D view: rank 0 -> 1x1, rank 1 -> 1xn, rank k -> shape[0] x rest.
  std::size_t rows() const noexcept { return shape_.size() >= 2 ? shape_[0] : 1; }
  std::size_t cols() const noexcept {
    if (shape_.empty()) return 1;
    if (shape_.size() == 1) return shape_[0];
    return size() / shape_[0];
  }
  MatrixMap matrix() {
    return MatrixMap(values_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
  }
  ConstMatrixMap matrix() const {
    return ConstMatrixMap(values_.data(), static_cast<Eigen::Index>(rows()),
                          static_cast<Eigen::Index>(cols()));
  }

  DenseTensor reshaped(Shape shape) const {
    if (numel(shape) != size())
      throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    DenseTensor out = *this;
    out.shape_ = std::move(shape);
    return out;
  }

  bool all_finite() const { return values_.allFinite(); }

  friend bool operator==(const DenseTensor& a, const DenseTensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  void check_extents() const {
    for (std::size_t e : shape_)
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape_));
  }

  Shape shape_;
  ColumnVector<Scalar> values_;
};

using Tensor = DenseTensor<double>;

template <typename Scalar>
DenseTensor<Scalar> map_values(const DenseTensor<Scalar>& t, const std::function<Scalar(Scalar)>& f) {
  DenseTensor<Scalar> out = t;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(out[i]);
  return out;
}

}  // namespace bnn
