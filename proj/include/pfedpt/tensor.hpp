#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pfedpt {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index shape_size(const Shape& s) {
  Index n = 1;
  for (Index e : s) {
    if (e <= 0) throw std::invalid_argument("tensor: extents must be positive");
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

/// Dense row-major tensor over a flat Eigen vector. Float carries the
/// experiment path, double the verification path.
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(VectorX<Scalar>::Zero(shape_size(shape_))) {}
  Tensor(Shape shape, VectorX<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_))
      throw std::invalid_argument("tensor: data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_str(shape_));
  }

  const Shape& shape() const { return shape_; }
  Index dim(size_t i) const { return shape_.at(i); }
  size_t rank() const { return shape_.size(); }
  Index size() const { return data_.size(); }

  VectorX<Scalar>& data() { return data_; }
  const VectorX<Scalar>& data() const { return data_; }

  Scalar* raw() { return data_.data(); }
  const Scalar* raw() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  bool all_finite() const { return data_.allFinite(); }

  /// Same data viewed under a different shape (row-major reindexing).
  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size())
      throw std::invalid_argument("tensor: reshape " + shape_str(shape_) + " -> " +
                                  shape_str(shape) + " changes element count");
    return Tensor(std::move(shape), data_);
  }

  /// 2-D row-major view; rows*cols must cover the whole tensor.
  Eigen::Map<RowMatrix<Scalar>> matrix(Index rows, Index cols) {
    if (rows * cols != data_.size()) throw std::invalid_argument("tensor: bad matrix view");
    return Eigen::Map<RowMatrix<Scalar>>(data_.data(), rows, cols);
  }
  Eigen::Map<const RowMatrix<Scalar>> matrix(Index rows, Index cols) const {
    if (rows * cols != data_.size()) throw std::invalid_argument("tensor: bad matrix view");
    return Eigen::Map<const RowMatrix<Scalar>>(data_.data(), rows, cols);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

 private:
  Shape shape_;
  VectorX<Scalar> data_;
};

template <typename Scalar>
Tensor<Scalar> zeros(Shape shape) {
  return Tensor<Scalar>(std::move(shape));
}

template <typename Scalar>
Tensor<Scalar> full(Shape shape, Scalar v) {
  Tensor<Scalar> t(std::move(shape));
  t.data().setConstant(v);
  return t;
}

}  // namespace pfedpt
