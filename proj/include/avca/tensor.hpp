#pragma once

#include <Eigen/Core>

#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "avca/errors.hpp"

namespace avca {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Shape = std::vector<Index>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename Derived>
std::string shape_string(const Eigen::DenseBase<Derived>& m) {
  return shape_string(Shape{m.rows(), m.cols()});
}

/// Dense tensor of rank 1 or 2 backed by a row-major Eigen matrix.
///
/// A rank-1 tensor of length n is stored as a 1 x n matrix, so row-major
/// iteration over `data()` reproduces the flat buffer order in both cases.
template <typename Scalar>
class Tensor {
 public:
  using MatrixType = Matrix<Scalar>;

  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : shape_(std::move(shape)), requires_grad_(requires_grad) {
    const auto [r, c] = storage_dims(shape_);
    data_ = MatrixType::Zero(r, c);
  }

  Tensor(Shape shape, MatrixType data, bool requires_grad = false)
      : shape_(std::move(shape)), data_(std::move(data)), requires_grad_(requires_grad) {
    const auto [r, c] = storage_dims(shape_);
    if (data_.rows() != r || data_.cols() != c) {
      throw DimensionError("tensor shape " + shape_string(shape_) + " does not match buffer " +
                           shape_string(data_));
    }
  }

  static Tensor matrix(MatrixType data, bool requires_grad = false) {
    Shape shape{data.rows(), data.cols()};
    return Tensor(std::move(shape), std::move(data), requires_grad);
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return data_.size(); }

  MatrixType& data() { return data_; }
  const MatrixType& data() const { return data_; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool has_grad() const { return grad_.has_value(); }
  MatrixType& grad() {
    if (!grad_) throw ContractError("tensor " + shape_string(shape_) + " has no gradient");
    return *grad_;
  }
  const MatrixType& grad() const {
    if (!grad_) throw ContractError("tensor " + shape_string(shape_) + " has no gradient");
    return *grad_;
  }

  void accumulate_grad(const MatrixType& g) {
    if (g.rows() != data_.rows() || g.cols() != data_.cols()) {
      throw DimensionError("gradient " + shape_string(g) + " does not match tensor " + shape_string(shape_));
    }
    if (!grad_) grad_ = MatrixType::Zero(data_.rows(), data_.cols());
    *grad_ += g;
  }

  // Allocates a zero gradient when none exists.
  void zero_grad() {
    if (grad_) {
      grad_->setZero();
    } else {
      grad_ = MatrixType::Zero(data_.rows(), data_.cols());
    }
  }
  void clear_grad() { grad_.reset(); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>(), requires_grad_);
  }

 private:
  static std::pair<Index, Index> storage_dims(const Shape& shape) {
    if (shape.empty() || shape.size() > 2) {
      throw DimensionError("tensor rank must be 1 or 2, got shape " + shape_string(shape));
    }
    for (Index d : shape) {
      if (d <= 0) throw DimensionError("tensor dimensions must be positive: " + shape_string(shape));
    }
    return shape.size() == 1 ? std::pair<Index, Index>{1, shape[0]}
                             : std::pair<Index, Index>{shape[0], shape[1]};
  }

  Shape shape_;
  MatrixType data_;
  bool requires_grad_ = false;
  std::optional<MatrixType> grad_;
};

template <typename Scalar>
bool all_finite(const Matrix<Scalar>& m) {
  return m.allFinite();
}

}  // namespace avca
