#pragma once

// Dense row-major tensors, the index algebra relating multi-indices to flat
// positions, receptive-field projection/embedding and direct cross-correlation.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ddp/error.hpp"

namespace ddp {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using ColVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MultiIndex = std::vector<std::size_t>;

class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}
  explicit Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
    if (dims_.empty()) throw Error(ErrorKind::ShapeMismatch, "tensor order must be at least 1");
    std::size_t count = 1;
    for (std::size_t d : dims_) {
      if (d == 0) throw Error(ErrorKind::ShapeMismatch, "zero extent in shape " + str());
      if (count > std::numeric_limits<std::size_t>::max() / d)
        throw Error(ErrorKind::ShapeMismatch, "element count overflows for shape " + str());
      count *= d;
    }
    count_ = count;
  }

  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  /// Product of all extents.
  std::size_t count() const noexcept { return count_; }

  std::string str() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
    os << ')';
    return os.str();
  }

  friend bool operator==(const Shape& a, const Shape& b) { return a.dims_ == b.dims_; }

 private:
  std::vector<std::size_t> dims_;
  std::size_t count_ = 0;
};

/// Row-major flat position of `alpha` in a tensor of the given shape.
inline std::size_t flatten_index(const Shape& shape, std::span<const std::size_t> alpha) {
  if (alpha.size() != shape.rank())
    throw Error(ErrorKind::IndexOutOfBounds, "index order does not match shape " + shape.str());
  std::size_t flat = 0;
  for (std::size_t j = 0; j < alpha.size(); ++j) {
    if (alpha[j] >= shape[j])
      throw Error(ErrorKind::IndexOutOfBounds, "component " + std::to_string(j) + " = " +
                                                   std::to_string(alpha[j]) + " outside shape " +
                                                   shape.str());
    flat = flat * shape[j] + alpha[j];
  }
  return flat;
}

inline std::size_t flatten_index(const Shape& shape, std::initializer_list<std::size_t> alpha) {
  return flatten_index(shape, std::span<const std::size_t>(alpha.begin(), alpha.size()));
}

/// Inverse of flatten_index.
inline MultiIndex unflatten_index(const Shape& shape, std::size_t flat) {
  if (flat >= shape.count())
    throw Error(ErrorKind::IndexOutOfBounds, "flat index " + std::to_string(flat) +
                                                 " outside shape " + shape.str());
  MultiIndex alpha(shape.rank());
  for (std::size_t j = shape.rank(); j-- > 0;) {
    alpha[j] = flat % shape[j];
    flat /= shape[j];
  }
  return alpha;
}

template <typename Scalar>
class Tensor {
 public:
  using value_type = Scalar;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_.count(), Scalar(0)) {}
  Tensor(Shape shape, std::vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_.count())
      throw Error(ErrorKind::ShapeMismatch, "buffer of length " + std::to_string(data_.size()) +
                                                " does not fill shape " + shape_.str());
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.rank(); }
  std::size_t extent(std::size_t axis) const { return shape_[axis]; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<const Scalar> data() const noexcept { return data_; }
  std::span<Scalar> data() noexcept { return data_; }
  const std::vector<Scalar>& buffer() const noexcept { return data_; }

  Scalar& operator[](std::size_t flat) { return data_[flat]; }
  const Scalar& operator[](std::size_t flat) const { return data_[flat]; }

  template <typename... I>
  Scalar& operator()(I... idx) {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }
  template <typename... I>
  const Scalar& operator()(I... idx) const {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }

  const Scalar& at(std::span<const std::size_t> alpha) const { return data_[flatten_index(shape_, alpha)]; }
  Scalar& at(std::span<const std::size_t> alpha) { return data_[flatten_index(shape_, alpha)]; }

  /// View as a flat Eigen vector.
  Eigen::Map<const ColVector<Scalar>> vec() const {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }
  Eigen::Map<ColVector<Scalar>> vec() { return {data_.data(), static_cast<Eigen::Index>(data_.size())}; }

  /// View of an order-2 tensor as a row-major Eigen matrix.
  Eigen::Map<const RowMatrix<Scalar>> matrix() const {
    require_matrix();
    return {data_.data(), static_cast<Eigen::Index>(shape_[0]), static_cast<Eigen::Index>(shape_[1])};
  }
  Eigen::Map<RowMatrix<Scalar>> matrix() {
    require_matrix();
    return {data_.data(), static_cast<Eigen::Index>(shape_[0]), static_cast<Eigen::Index>(shape_[1])};
  }

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(data_.begin(), data_.end());
    return Tensor<Other>(shape_, std::move(out));
  }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(other);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& other) {
    require_same_shape(other);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
  }
  Tensor& operator*=(Scalar a) {
    for (auto& x : data_) x *= a;
    return *this;
  }

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(Scalar s, Tensor a) { return a *= s; }
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> alpha) const {
    return flatten_index(shape_, std::span<const std::size_t>(alpha.begin(), alpha.size()));
  }
  void require_matrix() const {
    if (shape_.rank() != 2) throw Error(ErrorKind::ShapeMismatch, "expected a matrix, got " + shape_.str());
  }
  void require_same_shape(const Tensor& other) const {
    if (!(shape_ == other.shape_))
      throw Error(ErrorKind::ShapeMismatch, shape_.str() + " vs " + other.shape_.str());
  }

  Shape shape_;
  std::vector<Scalar> data_;
};

using DenseTensor = Tensor<double>;

/// Copies any Eigen matrix expression into an order-2 tensor.
template <typename Derived>
Tensor<typename Derived::Scalar> from_matrix(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  Tensor<Scalar> out(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  out.matrix() = m;
  return out;
}

template <typename Derived>
Tensor<typename Derived::Scalar> from_vector(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  Tensor<Scalar> out(Shape{static_cast<std::size_t>(v.size())});
  for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = v(i);
  return out;
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& t, const Shape& new_shape) {
  if (new_shape.count() != t.shape().count())
    throw Error(ErrorKind::ShapeMismatch,
                "cannot reshape " + t.shape().str() + " to " + new_shape.str());
  return Tensor<Scalar>(new_shape, t.buffer());
}

template <typename Scalar>
Tensor<Scalar> flatten(const Tensor<Scalar>& t) {
  return reshape(t, Shape{t.size()});
}

/// Number of valid window positions along one axis.
inline std::size_t output_extent(std::size_t m, std::size_t k, std::size_t stride) {
  if (stride == 0) throw Error(ErrorKind::InvalidParameter, "stride must be at least 1");
  if (k > m)
    throw Error(ErrorKind::ShapeMismatch,
                "kernel extent " + std::to_string(k) + " exceeds input extent " + std::to_string(m));
  return (m - k) / stride + 1;
}

/// Spatial bookkeeping for one layer: input (c, m1, m2), kernel (k1, k2),
/// output positions (n1, n2).
struct ConvGeometry {
  std::size_t c = 0, m1 = 0, m2 = 0, k1 = 0, k2 = 0, stride = 1, n1 = 0, n2 = 0;

  static ConvGeometry make(std::size_t c, std::size_t m1, std::size_t m2, std::size_t k1,
                           std::size_t k2, std::size_t stride = 1) {
    ConvGeometry g{c, m1, m2, k1, k2, stride, 0, 0};
    g.n1 = output_extent(m1, k1, stride);
    g.n2 = output_extent(m2, k2, stride);
    return g;
  }
  std::size_t field_size() const { return c * k1 * k2; }
  std::size_t positions() const { return n1 * n2; }
  std::size_t input_size() const { return c * m1 * m2; }
};

namespace detail {
template <typename Scalar>
void require_chw(const Tensor<Scalar>& x, const char* what) {
  if (x.rank() != 3) throw Error(ErrorKind::ShapeMismatch, std::string(what) + " must be order 3, got " + x.shape().str());
}
template <typename Scalar>
void require_filter_bank(const Tensor<Scalar>& w) {
  if (w.rank() != 4) throw Error(ErrorKind::ShapeMismatch, "weights must be order 4, got " + w.shape().str());
}
}  // namespace detail

/// Window of extent (k1, k2) read from x at spatial offset (i, j).
template <typename Scalar>
Tensor<Scalar> extract_receptive_field(const Tensor<Scalar>& x, std::size_t i, std::size_t j,
                                       std::size_t k1, std::size_t k2) {
  detail::require_chw(x, "input");
  const std::size_t c = x.extent(0), m1 = x.extent(1), m2 = x.extent(2);
  if (k1 == 0 || k2 == 0 || i + k1 > m1 || j + k2 > m2)
    throw Error(ErrorKind::IndexOutOfBounds, "window at (" + std::to_string(i) + "," +
                                                 std::to_string(j) + ") exceeds " + x.shape().str());
  Tensor<Scalar> out(Shape{c, k1, k2});
  std::size_t pos = 0;
  for (std::size_t r = 0; r < c; ++r)
    for (std::size_t s = 0; s < k1; ++s)
      for (std::size_t t = 0; t < k2; ++t) out[pos++] = x[(r * m1 + i + s) * m2 + j + t];
  return out;
}

template <typename Scalar>
Tensor<Scalar> extract_receptive_field(const Tensor<Scalar>& x, std::size_t i, std::size_t j, std::size_t k) {
  return extract_receptive_field(x, i, j, k, k);
}

/// Zero tensor of spatial extent (m1, m2) holding t at offset (i, j).
template <typename Scalar>
Tensor<Scalar> embed_receptive_field(const Tensor<Scalar>& t, std::size_t i, std::size_t j,
                                     std::size_t m1, std::size_t m2) {
  detail::require_chw(t, "receptive field");
  const std::size_t c = t.extent(0), k1 = t.extent(1), k2 = t.extent(2);
  if (i + k1 > m1 || j + k2 > m2)
    throw Error(ErrorKind::IndexOutOfBounds, "embedding at (" + std::to_string(i) + "," +
                                                 std::to_string(j) + ") exceeds spatial extent");
  Tensor<Scalar> out(Shape{c, m1, m2});
  std::size_t pos = 0;
  for (std::size_t r = 0; r < c; ++r)
    for (std::size_t s = 0; s < k1; ++s)
      for (std::size_t u = 0; u < k2; ++u) out[(r * m1 + i + s) * m2 + j + u] = t[pos++];
  return out;
}

template <typename Scalar>
Tensor<Scalar> embed_receptive_field(const Tensor<Scalar>& t, std::size_t i, std::size_t j, std::size_t m) {
  return embed_receptive_field(t, i, j, m, m);
}

template <typename Scalar>
struct ReceptiveFieldMatrix {
  Tensor<Scalar> matrix;  // (c·k1·k2, n1·n2)
  ConvGeometry geometry;
};

/// Columns are the flattened receptive fields, column i·n2+j at offset
/// (i·stride, j·stride).
template <typename Scalar>
ReceptiveFieldMatrix<Scalar> build_receptive_field_matrix(const Tensor<Scalar>& x, std::size_t k1,
                                                          std::size_t k2, std::size_t stride) {
  detail::require_chw(x, "input");
  const auto g = ConvGeometry::make(x.extent(0), x.extent(1), x.extent(2), k1, k2, stride);
  const std::size_t rows = g.field_size(), cols = g.positions();
  Tensor<Scalar> psi(Shape{rows, cols});
  for (std::size_t i = 0; i < g.n1; ++i)
    for (std::size_t j = 0; j < g.n2; ++j) {
      const std::size_t col = i * g.n2 + j;
      std::size_t row = 0;
      for (std::size_t r = 0; r < g.c; ++r)
        for (std::size_t s = 0; s < k1; ++s)
          for (std::size_t t = 0; t < k2; ++t)
            psi[(row++) * cols + col] = x[(r * g.m1 + i * stride + s) * g.m2 + j * stride + t];
    }
  return {std::move(psi), g};
}

template <typename Scalar>
ReceptiveFieldMatrix<Scalar> build_receptive_field_matrix(const Tensor<Scalar>& x, std::size_t k,
                                                          std::size_t stride = 1) {
  return build_receptive_field_matrix(x, k, k, stride);
}

/// Direct valid cross-correlation. The accumulation order (r, then s, then t)
/// is fixed; this routine is the reference every matrization is checked
/// against.
template <typename Scalar>
Tensor<Scalar> cross_correlate(const Tensor<Scalar>& w, const Tensor<Scalar>& x, std::size_t stride = 1) {
  detail::require_filter_bank(w);
  detail::require_chw(x, "input");
  const std::size_t d = w.extent(0), c = w.extent(1), k1 = w.extent(2), k2 = w.extent(3);
  if (x.extent(0) != c)
    throw Error(ErrorKind::ShapeMismatch, "weights expect " + std::to_string(c) +
                                              " channels, input has " + std::to_string(x.extent(0)));
  const auto g = ConvGeometry::make(c, x.extent(1), x.extent(2), k1, k2, stride);
  Tensor<Scalar> y(Shape{d, g.n1, g.n2});
  for (std::size_t h = 0; h < d; ++h)
    for (std::size_t i = 0; i < g.n1; ++i)
      for (std::size_t j = 0; j < g.n2; ++j) {
        Scalar acc = 0;
        for (std::size_t r = 0; r < c; ++r)
          for (std::size_t s = 0; s < k1; ++s)
            for (std::size_t t = 0; t < k2; ++t)
              acc += w[((h * c + r) * k1 + s) * k2 + t] *
                     x[(r * g.m1 + i * stride + s) * g.m2 + j * stride + t];
        y[(h * g.n1 + i) * g.n2 + j] = acc;
      }
  return y;
}

/// Zero padding on both spatial axes.
template <typename Scalar>
Tensor<Scalar> zero_pad(const Tensor<Scalar>& x, std::size_t pad) {
  detail::require_chw(x, "input");
  if (pad == 0) return x;
  return embed_receptive_field(x, pad, pad, x.extent(1) + 2 * pad, x.extent(2) + 2 * pad);
}

template <typename Scalar>
Scalar max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.size() != b.size())
    throw Error(ErrorKind::ShapeMismatch, a.shape().str() + " vs " + b.shape().str());
  Scalar worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace ddp
