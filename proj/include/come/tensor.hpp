// Dense row-major tensors and the handful of numeric kernels the rest of the
// engine is written against.
//
// Axis order everywhere is (batch, token, channel). A rank-3 tensor is viewed
// one sample at a time as an Eigen row-major (token x channel) matrix map, so
// callers can use ordinary Eigen expressions on it.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace come {

using Index = Eigen::Index;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using RowMatrixf = RowMatrix<float>;
using RowMatrixd = RowMatrix<double>;

template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

/// Thrown when operand shapes do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an input lies outside an operation's mathematical domain.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Shape-tagged flat buffer. product(shape) == data.size() always holds.
template <typename Scalar = float>
class DenseTensor {
 public:
  using value_type = Scalar;

  DenseTensor() = default;

  explicit DenseTensor(std::vector<Index> shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)), data_(checked_size(shape_), fill) {}

  DenseTensor(std::vector<Index> shape, std::vector<Scalar> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_size(shape_) != data_.size()) {
      throw DimensionError("tensor data length does not match shape");
    }
  }

  /// Copies a matrix expression into a rank-2 tensor.
  template <typename Derived>
  static DenseTensor from_matrix(const Eigen::MatrixBase<Derived>& m) {
    DenseTensor t({m.rows(), m.cols()});
    t.matrix() = m.template cast<Scalar>();
    return t;
  }

  const std::vector<Index>& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::size_t size() const { return data_.size(); }

  std::span<Scalar> data() { return data_; }
  std::span<const Scalar> data() const { return data_; }
  std::vector<Scalar>& storage() { return data_; }
  const std::vector<Scalar>& storage() const { return data_; }

  /// Rank-2 view.
  MatrixMap<Scalar> matrix() {
    require_rank(2);
    return MatrixMap<Scalar>(data_.data(), shape_[0], shape_[1]);
  }
  ConstMatrixMap<Scalar> matrix() const {
    require_rank(2);
    return ConstMatrixMap<Scalar>(data_.data(), shape_[0], shape_[1]);
  }

  /// Rank-3 view of one batch sample as (token x channel).
  MatrixMap<Scalar> sample(Index b) {
    require_rank(3);
    return MatrixMap<Scalar>(data_.data() + b * shape_[1] * shape_[2], shape_[1], shape_[2]);
  }
  ConstMatrixMap<Scalar> sample(Index b) const {
    require_rank(3);
    return ConstMatrixMap<Scalar>(data_.data() + b * shape_[1] * shape_[2], shape_[1],
                                  shape_[2]);
  }

  Scalar& operator()(Index i, Index j) { return data_[flat({i, j})]; }
  Scalar operator()(Index i, Index j) const { return data_[flat({i, j})]; }
  Scalar& operator()(Index i, Index j, Index k) { return data_[flat({i, j, k})]; }
  Scalar operator()(Index i, Index j, Index k) const { return data_[flat({i, j, k})]; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
  }

  template <typename Other>
  DenseTensor<Other> cast() const {
    return DenseTensor<Other>(shape_, std::vector<Other>(data_.begin(), data_.end()));
  }

  friend bool operator==(const DenseTensor&, const DenseTensor&) = default;

 private:
  static std::size_t checked_size(const std::vector<Index>& shape) {
    std::size_t n = 1;
    for (Index d : shape) {
      if (d < 0) throw DimensionError("negative tensor dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  void require_rank(Index r) const {
    if (rank() != r) {
      throw DimensionError("expected rank " + std::to_string(r) + " tensor, got rank " +
                           std::to_string(rank()));
    }
  }

  std::size_t flat(std::initializer_list<Index> idx) const {
    if (static_cast<Index>(idx.size()) != rank()) throw DimensionError("index rank mismatch");
    std::size_t off = 0;
    std::size_t a = 0;
    for (Index i : idx) {
      if (i < 0 || i >= shape_[a]) throw std::out_of_range("tensor index out of range");
      off = off * static_cast<std::size_t>(shape_[a]) + static_cast<std::size_t>(i);
      ++a;
    }
    return off;
  }

  std::vector<Index> shape_;
  std::vector<Scalar> data_;
};

using Tensor = DenseTensor<float>;

// Matrix product with 64-bit accumulation regardless of the storage scalar.
template <typename A, typename B>
auto matmul(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b)
    -> RowMatrix<typename A::Scalar> {
  using Scalar = typename A::Scalar;
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul inner dimensions differ: " + std::to_string(a.cols()) +
                         " vs " + std::to_string(b.rows()));
  }
  RowMatrixd acc = a.template cast<double>() * b.template cast<double>();
  return acc.template cast<Scalar>();
}

template <typename Scalar>
DenseTensor<Scalar> matmul(const DenseTensor<Scalar>& a, const DenseTensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2) throw DimensionError("matmul expects rank-2 tensors");
  return DenseTensor<Scalar>::from_matrix(matmul(a.matrix(), b.matrix()));
}

/// Numerically stabilised softmax over each row of `logits`, in place.
///
/// `bias`, when given, is added to every row before normalisation (one
/// additive term per column). Exponentials stay in the storage scalar; the
/// normalising sum is accumulated in double.
template <typename Derived>
void softmax_rows_inplace(Eigen::MatrixBase<Derived>& logits,
                          const RowVector<typename Derived::Scalar>* bias = nullptr) {
  using Scalar = typename Derived::Scalar;
  if (logits.cols() < 1) throw DomainError("softmax over an empty row");
  if (bias != nullptr && bias->size() != logits.cols()) {
    throw DimensionError("softmax bias length does not match row length");
  }
  for (Index r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    if (bias != nullptr) row += *bias;
    const Scalar peak = row.maxCoeff();
    row.array() = (row.array() - peak).exp();
    const double total = row.template cast<double>().sum();
    row *= static_cast<Scalar>(1.0 / total);
  }
}

template <typename Derived>
RowMatrix<typename Derived::Scalar> softmax_rows(
    const Eigen::MatrixBase<Derived>& logits,
    const std::optional<RowVector<typename Derived::Scalar>>& bias = std::nullopt) {
  RowMatrix<typename Derived::Scalar> out = logits;
  softmax_rows_inplace(out, bias ? &*bias : nullptr);
  return out;
}

template <typename Scalar>
DenseTensor<Scalar> softmax_rows(const DenseTensor<Scalar>& logits,
                                 const std::optional<std::vector<Scalar>>& bias = std::nullopt) {
  auto out = logits;
  auto m = out.matrix();
  if (bias) {
    RowVector<Scalar> b = Eigen::Map<const RowVector<Scalar>>(bias->data(),
                                                              static_cast<Index>(bias->size()));
    softmax_rows_inplace(m, &b);
  } else {
    softmax_rows_inplace(m);
  }
  return out;
}

/// GELU, tanh approximation.
template <typename Scalar>
inline Scalar gelu(Scalar x) {
  constexpr Scalar kC = Scalar(0.7978845608028654);  // sqrt(2/pi)
  return Scalar(0.5) * x * (Scalar(1) + std::tanh(kC * (x + Scalar(0.044715) * x * x * x)));
}

}  // namespace come
