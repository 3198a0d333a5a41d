#pragma once

// The two matrizations of cross-correlation. W̄1 stacks flattened filters as
// rows and multiplies the receptive-field matrix; W̄2 embeds every filter at
// every output position and multiplies the flattened input. The tensor SVD
// rewrites a conv layer as three stacked cross-correlations.

#include <cstddef>
#include <optional>
#include <vector>

#include "ddp/tensor.hpp"

namespace ddp {

template <typename Scalar>
struct UnfoldedWeights {
  Tensor<Scalar> matrix;  // (d, c·k1·k2)
  std::size_t d = 0, c = 0, k1 = 0, k2 = 0;
};

template <typename Scalar>
UnfoldedWeights<Scalar> unfold_weights(const Tensor<Scalar>& w) {
  detail::require_filter_bank(w);
  const std::size_t d = w.extent(0), c = w.extent(1), k1 = w.extent(2), k2 = w.extent(3);
  return {reshape(w, Shape{d, c * k1 * k2}), d, c, k1, k2};
}

/// Inverse of unfold_weights.
template <typename Scalar>
Tensor<Scalar> fold_weights(const UnfoldedWeights<Scalar>& wu) {
  return reshape(wu.matrix, Shape{wu.d, wu.c, wu.k1, wu.k2});
}

inline constexpr std::size_t kDefaultToeplitzBudget = 100'000'000;

/// Toeplitz matrization (d·n1·n2, c·m1·m2). Row r = (h, i, j) holds filter h
/// embedded at (i·stride, j·stride). The dense matrix is only built when its
/// element count fits the budget; rows can always be generated on demand.
template <typename Scalar>
class ToeplitzWeights {
 public:
  ToeplitzWeights(Tensor<Scalar> w, std::size_t m1, std::size_t m2, std::size_t stride,
                  std::size_t element_budget)
      : w_(std::move(w)) {
    detail::require_filter_bank(w_);
    d_ = w_.extent(0);
    geometry_ = ConvGeometry::make(w_.extent(1), m1, m2, w_.extent(2), w_.extent(3), stride);
    const std::size_t rows_ = rows(), cols_ = cols();
    if (cols_ != 0 && rows_ <= element_budget / cols_) {
      Tensor<Scalar> dense(Shape{rows_, cols_});
      for (std::size_t r = 0; r < rows_; ++r) scatter_row(r, dense.data().subspan(r * cols_, cols_));
      dense_ = std::move(dense);
    }
  }

  std::size_t rows() const { return d_ * geometry_.positions(); }
  std::size_t cols() const { return geometry_.input_size(); }
  std::size_t filters() const { return d_; }
  const ConvGeometry& geometry() const { return geometry_; }
  const Tensor<Scalar>& weights() const { return w_; }

  bool materialized() const { return dense_.has_value(); }
  const Tensor<Scalar>& matrix() const {
    if (!dense_) throw Error(ErrorKind::InvalidParameter, "Toeplitz matrix exceeds the element budget");
    return *dense_;
  }

  /// Row r as a flat vector of length c·m1·m2.
  Tensor<Scalar> row(std::size_t r) const {
    Tensor<Scalar> out(Shape{cols()});
    if (dense_) {
      std::copy_n(dense_->data().begin() + static_cast<std::ptrdiff_t>(r * cols()), cols(), out.data().begin());
    } else {
      scatter_row(r, out.data());
    }
    return out;
  }

  /// Dot product of row r with a flat input, visiting only the filter taps.
  Scalar row_dot(std::size_t r, std::span<const Scalar> x) const {
    const auto [h, i, j] = split_row(r);
    const auto& g = geometry_;
    Scalar acc = 0;
    std::size_t tap = h * g.field_size();
    for (std::size_t rc = 0; rc < g.c; ++rc)
      for (std::size_t s = 0; s < g.k1; ++s)
        for (std::size_t t = 0; t < g.k2; ++t)
          acc += w_[tap++] * x[(rc * g.m1 + i * g.stride + s) * g.m2 + j * g.stride + t];
    return acc;
  }

 private:
  struct RowIndex {
    std::size_t h, i, j;
  };
  RowIndex split_row(std::size_t r) const {
    if (r >= rows()) throw Error(ErrorKind::IndexOutOfBounds, "Toeplitz row " + std::to_string(r));
    const std::size_t p = geometry_.positions();
    return {r / p, (r % p) / geometry_.n2, (r % p) % geometry_.n2};
  }
  void scatter_row(std::size_t r, std::span<Scalar> out) const {
    const auto [h, i, j] = split_row(r);
    const auto& g = geometry_;
    std::fill(out.begin(), out.end(), Scalar(0));
    std::size_t tap = h * g.field_size();
    for (std::size_t rc = 0; rc < g.c; ++rc)
      for (std::size_t s = 0; s < g.k1; ++s)
        for (std::size_t t = 0; t < g.k2; ++t)
          out[(rc * g.m1 + i * g.stride + s) * g.m2 + j * g.stride + t] = w_[tap++];
  }

  Tensor<Scalar> w_;
  std::size_t d_ = 0;
  ConvGeometry geometry_;
  std::optional<Tensor<Scalar>> dense_;
};

template <typename Scalar>
ToeplitzWeights<Scalar> toeplitz_weights(const Tensor<Scalar>& w, std::size_t m1, std::size_t m2,
                                         std::size_t stride, std::size_t element_budget) {
  return ToeplitzWeights<Scalar>(w, m1, m2, stride, element_budget);
}

template <typename Scalar>
ToeplitzWeights<Scalar> toeplitz_weights(const Tensor<Scalar>& w, std::size_t m, std::size_t stride = 1,
                                         std::size_t element_budget = kDefaultToeplitzBudget) {
  return ToeplitzWeights<Scalar>(w, m, m, stride, element_budget);
}

/// W̄1 · Ψ(X), shape (d, n1·n2).
template <typename Scalar>
Tensor<Scalar> conv_via_w1(const UnfoldedWeights<Scalar>& wu, const ReceptiveFieldMatrix<Scalar>& psi) {
  if (wu.matrix.extent(1) != psi.matrix.extent(0))
    throw Error(ErrorKind::ShapeMismatch, "unfolded weights " + wu.matrix.shape().str() +
                                              " cannot multiply receptive fields " + psi.matrix.shape().str());
  return from_matrix(RowMatrix<Scalar>(wu.matrix.matrix() * psi.matrix.matrix()));
}

/// W̄2 · φ(X), length d·n1·n2.
template <typename Scalar>
Tensor<Scalar> conv_via_w2(const ToeplitzWeights<Scalar>& wt, const Tensor<Scalar>& x_flat) {
  if (x_flat.size() != wt.cols())
    throw Error(ErrorKind::ShapeMismatch, "Toeplitz matrix has " + std::to_string(wt.cols()) +
                                              " columns, input has " + std::to_string(x_flat.size()));
  Tensor<Scalar> y(Shape{wt.rows()});
  if (wt.materialized()) {
    y.vec() = wt.matrix().matrix() * x_flat.vec();
  } else {
    for (std::size_t r = 0; r < wt.rows(); ++r) y[r] = wt.row_dot(r, x_flat.data());
  }
  return y;
}

/// d×d Gram blocks of W̄2 after grouping rows by spatial offset; block
/// i·n2+j holds the inner products of all filters embedded at (i, j).
template <typename Scalar>
std::vector<Tensor<Scalar>> w2_gram_diagonal_blocks(const ToeplitzWeights<Scalar>& wt) {
  const std::size_t d = wt.filters(), p = wt.geometry().positions(), cols = wt.cols();
  std::vector<Tensor<Scalar>> blocks;
  blocks.reserve(p);
  RowMatrix<Scalar> rows(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(cols));
  for (std::size_t pos = 0; pos < p; ++pos) {
    for (std::size_t h = 0; h < d; ++h) rows.row(static_cast<Eigen::Index>(h)) = wt.row(h * p + pos).vec().transpose();
    blocks.push_back(from_matrix(RowMatrix<Scalar>(rows * rows.transpose())));
  }
  return blocks;
}

/// Tensor form of the SVD of W̄1: u4 (d,d,1,1), s4 (d,ck²,1,1),
/// v4 (ck²,c,k1,k2).
struct TensorSvd {
  DenseTensor u4;
  DenseTensor s4;
  DenseTensor v4;
  std::vector<double> singular_values;
};

TensorSvd tensor_svd(const DenseTensor& w);

/// φ_U(U) ⋆ (φ_S(S) ⋆ (φ_Vᵀ(Vᵀ) ⋆ x)). The Vᵀ stage uses `stride`; the 1×1
/// stages always use stride 1.
DenseTensor apply_tensor_svd(const TensorSvd& ts, const DenseTensor& x, std::size_t stride = 1);

}  // namespace ddp
