#include <gtest/gtest.h>

#include "ddp/conv_algebra.hpp"
#include "oracles.hpp"

using namespace ddp;

namespace {

struct Instance {
  DenseTensor w, x;
  std::size_t stride;
};

Instance random_instance(std::mt19937_64& rng, std::size_t max_d = 4, std::size_t max_c = 4, std::size_t max_k = 3,
                         std::size_t max_m = 8) {
  const std::size_t d = oracle::uniform_int(rng, 1, max_d), c = oracle::uniform_int(rng, 1, max_c);
  const std::size_t k = oracle::uniform_int(rng, 1, max_k), m = oracle::uniform_int(rng, k, max_m);
  const std::size_t stride = oracle::uniform_int(rng, 1, 2);
  return {oracle::random_tensor(Shape{d, c, k, k}, rng), oracle::random_tensor(Shape{c, m, m}, rng), stride};
}

}  // namespace

TEST(UnfoldWeights, StacksFlattenedFilters) {
  const DenseTensor w(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  const auto wu = unfold_weights(w);
  EXPECT_EQ(wu.matrix.shape(), (Shape{1, 4}));
  EXPECT_EQ(wu.matrix.buffer(), (std::vector<double>{1, 2, 3, 4}));
  const auto col = unfold_weights(DenseTensor(Shape{2, 1, 1, 1}, {7, -3}));
  EXPECT_EQ(col.matrix.shape(), (Shape{2, 1}));
  EXPECT_EQ(col.matrix(1, 0), -3);
}

TEST(UnfoldWeights, FoldRecoversTensor) {
  std::mt19937_64 rng(1);
  const auto w = oracle::random_tensor(Shape{3, 2, 3, 3}, rng);
  EXPECT_EQ(fold_weights(unfold_weights(w)), w);
}

TEST(Toeplitz, WorkedExample) {
  const DenseTensor w(Shape{1, 1, 2, 2}, {1, 2, 3, 4});  // a, b, c, d
  const auto wt = toeplitz_weights(w, 3);
  ASSERT_TRUE(wt.materialized());
  const std::vector<double> expected = {1, 2, 0, 3, 4, 0, 0, 0, 0,  //
                                        0, 1, 2, 0, 3, 4, 0, 0, 0,  //
                                        0, 0, 0, 1, 2, 0, 3, 4, 0,  //
                                        0, 0, 0, 0, 1, 2, 0, 3, 4};
  EXPECT_EQ(wt.matrix().shape(), (Shape{4, 9}));
  EXPECT_EQ(wt.matrix().buffer(), expected);
}

TEST(Toeplitz, FullWindowCoincidesWithUnfolding) {
  std::mt19937_64 rng(2);
  const auto w = oracle::random_tensor(Shape{3, 2, 3, 3}, rng);
  const auto wt = toeplitz_weights(w, 3);
  EXPECT_EQ(wt.matrix(), unfold_weights(w).matrix);
}

TEST(Toeplitz, MatchesImpulseResponseOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    const auto [w, x, stride] = random_instance(rng, 3, 3, 3, 6);
    const std::size_t m = x.extent(1);
    const auto wt = toeplitz_weights(w, m, stride);
    std::size_t rows = 0, cols = 0;
    const auto ref = oracle::toeplitz_by_impulses(w, m, m, stride, rows, cols);
    ASSERT_EQ(wt.rows(), rows);
    ASSERT_EQ(wt.cols(), cols);
    EXPECT_EQ(wt.matrix().buffer(), ref);
  }
}

TEST(Toeplitz, RowsHoldEveryTapOnce) {
  std::mt19937_64 rng(4);
  const auto w = oracle::random_tensor(Shape{2, 2, 2, 2}, rng, 0.1, 1.0);  // no zero taps
  const auto wt = toeplitz_weights(w, 4);
  EXPECT_EQ(wt.rows(), 2u * 3 * 3);
  for (std::size_t r = 0; r < wt.rows(); ++r) {
    const auto row = wt.row(r);
    const auto nonzero = std::count_if(row.data().begin(), row.data().end(), [](double v) { return v != 0; });
    EXPECT_EQ(nonzero, 8);
  }
}

TEST(Toeplitz, LazyRowsMatchDenseRows) {
  std::mt19937_64 rng(5);
  const auto w = oracle::random_tensor(Shape{3, 2, 3, 3}, rng);
  const auto dense = toeplitz_weights(w, 7, 2);
  const auto lazy = toeplitz_weights(w, 7, 2, /*element_budget=*/10);
  ASSERT_TRUE(dense.materialized());
  ASSERT_FALSE(lazy.materialized());
  EXPECT_THROW((void)lazy.matrix(), Error);
  const auto x = oracle::random_tensor(Shape{2 * 7 * 7}, rng);
  for (std::size_t r = 0; r < dense.rows(); ++r) {
    EXPECT_EQ(lazy.row(r), dense.row(r));
    EXPECT_NEAR(lazy.row_dot(r, x.data()), dense.row(r).vec().dot(x.vec()), 1e-12);
  }
}

TEST(ConvViaW1, WorkedExample) {
  const DenseTensor w(Shape{1, 1, 2, 2}, {1, 0, 0, 1});
  DenseTensor x(Shape{1, 3, 3});
  for (std::size_t i = 0; i < 9; ++i) x[i] = static_cast<double>(i + 1);
  const auto y = conv_via_w1(unfold_weights(w), build_receptive_field_matrix(x, 2));
  EXPECT_EQ(y.buffer(), (std::vector<double>{6, 8, 12, 14}));
  const auto zero = conv_via_w1(unfold_weights(DenseTensor(Shape{1, 1, 2, 2})), build_receptive_field_matrix(x, 2));
  EXPECT_EQ(zero.vec().cwiseAbs().maxCoeff(), 0.0);
  const auto yt = conv_via_w2(toeplitz_weights(w, 3), flatten(x));
  EXPECT_EQ(yt.buffer(), (std::vector<double>{6, 8, 12, 14}));
}

TEST(Matrization, BothProductsMatchCorrelationOracle) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const auto [w, x, stride] = random_instance(rng);
    const auto ref = oracle::correlate(w, x, stride);
    const auto y1 = conv_via_w1(unfold_weights(w), build_receptive_field_matrix(x, w.extent(2), stride));
    const auto y2 = conv_via_w2(toeplitz_weights(w, x.extent(1), stride), flatten(x));
    ASSERT_EQ(y1.size(), ref.size());
    ASSERT_EQ(y2.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
      EXPECT_NEAR(y1[i], ref[i], 1e-10);
      EXPECT_NEAR(y2[i], ref[i], 1e-10);
    }
  }
}

TEST(Matrization, LazyToeplitzProductMatchesDense) {
  std::mt19937_64 rng(7);
  const auto [w, x, stride] = random_instance(rng);
  const auto dense = conv_via_w2(toeplitz_weights(w, x.extent(1), stride), flatten(x));
  const auto lazy = conv_via_w2(toeplitz_weights(w, x.extent(1), stride, 1), flatten(x));
  EXPECT_LE(max_abs_diff(dense, lazy), 1e-12);
}

TEST(GramBlocks, IdentityFilterExample) {
  const DenseTensor w(Shape{1, 1, 2, 2}, {1, 0, 0, 1});
  const auto blocks = w2_gram_diagonal_blocks(toeplitz_weights(w, 3));
  ASSERT_EQ(blocks.size(), 4u);
  for (const auto& b : blocks) EXPECT_EQ(b.buffer(), (std::vector<double>{2}));
}

TEST(GramBlocks, EqualFilterGram) {
  std::mt19937_64 rng(8);
  const auto w = oracle::random_tensor(Shape{3, 2, 2, 2}, rng);
  const auto blocks = w2_gram_diagonal_blocks(toeplitz_weights(w, 4));
  const auto gram = oracle::filter_gram(w);
  ASSERT_EQ(blocks.size(), 9u);
  for (const auto& b : blocks)
    for (std::size_t i = 0; i < gram.size(); ++i) EXPECT_NEAR(b[i], gram[i], 1e-10);
  const auto single = w2_gram_diagonal_blocks(toeplitz_weights(w, 2));
  ASSERT_EQ(single.size(), 1u);
}

TEST(TensorSvd, ScalarCase) {
  const auto ts = tensor_svd(DenseTensor(Shape{1, 1, 1, 1}, {2}));
  EXPECT_EQ(ts.singular_values, (std::vector<double>{2}));
  EXPECT_EQ(ts.u4.buffer(), (std::vector<double>{1}));
  EXPECT_EQ(ts.v4.buffer(), (std::vector<double>{1}));
  const auto y = apply_tensor_svd(ts, DenseTensor(Shape{1, 1, 1}, {5}));
  EXPECT_NEAR(y[0], 10.0, 1e-14);
  const auto zero = apply_tensor_svd(ts, DenseTensor(Shape{1, 1, 1}));
  EXPECT_EQ(zero[0], 0.0);
}

TEST(TensorSvd, OrthogonalFilters) {
  // Filters 3·e0 and 2·e1 in R^4.
  const DenseTensor w(Shape{2, 1, 2, 2}, {3, 0, 0, 0, 0, 2, 0, 0});
  const auto ts = tensor_svd(w);
  ASSERT_EQ(ts.singular_values.size(), 2u);
  EXPECT_NEAR(ts.singular_values[0], 3.0, 1e-14);
  EXPECT_NEAR(ts.singular_values[1], 2.0, 1e-14);
  EXPECT_EQ(ts.u4.shape(), (Shape{2, 2, 1, 1}));
  EXPECT_EQ(ts.s4.shape(), (Shape{2, 4, 1, 1}));
  EXPECT_EQ(ts.v4.shape(), (Shape{4, 1, 2, 2}));
}

TEST(TensorSvd, ReconstructsCorrelation) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 40; ++trial) {
    const auto [w, x, stride] = random_instance(rng);
    const auto y = apply_tensor_svd(tensor_svd(w), x, stride);
    const auto ref = oracle::correlate(w, x, stride);
    ASSERT_EQ(y.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-9);
  }
}

TEST(TensorSvd, FixedInstance) {
  std::mt19937_64 rng(10);
  const auto w = oracle::random_tensor(Shape{3, 2, 2, 2}, rng);
  const auto x = oracle::random_tensor(Shape{2, 5, 5}, rng);
  EXPECT_LE(max_abs_diff(apply_tensor_svd(tensor_svd(w), x), cross_correlate(w, x)), 1e-9);
}
