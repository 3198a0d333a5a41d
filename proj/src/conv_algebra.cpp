#include "ddp/conv_algebra.hpp"

#include "ddp/spectral.hpp"

namespace ddp {

TensorSvd tensor_svd(const DenseTensor& w) {
  const auto wu = unfold_weights(w);
  const std::size_t d = wu.d, f = wu.c * wu.k1 * wu.k2;
  const auto factors = svd(wu.matrix);

  TensorSvd out;
  out.u4 = reshape(from_matrix(RowMatrix<double>(factors.u)), Shape{d, d, 1, 1});
  RowMatrix<double> sigma = RowMatrix<double>::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(f));
  for (Eigen::Index i = 0; i < factors.s.size(); ++i) sigma(i, i) = factors.s(i);
  out.s4 = reshape(from_matrix(sigma), Shape{d, f, 1, 1});
  out.v4 = reshape(from_matrix(RowMatrix<double>(factors.v.transpose())), Shape{f, wu.c, wu.k1, wu.k2});
  out.singular_values.assign(factors.s.data(), factors.s.data() + factors.s.size());
  return out;
}

DenseTensor apply_tensor_svd(const TensorSvd& ts, const DenseTensor& x, std::size_t stride) {
  if (x.rank() != 3 || x.extent(0) != ts.v4.extent(1))
    throw Error(ErrorKind::ShapeMismatch, "input " + x.shape().str() + " does not match tensor SVD with " +
                                              std::to_string(ts.v4.extent(1)) + " channels");
  const auto projected = cross_correlate(ts.v4, x, stride);
  const auto scaled = cross_correlate(ts.s4, projected, 1);
  return cross_correlate(ts.u4, scaled, 1);
}

}  // namespace ddp
