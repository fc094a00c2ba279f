#include <gtest/gtest.h>

#include <cmath>

#include "neonext/neocell.hpp"
#include "neonext/neoinit.hpp"

using namespace neonext;

TEST(NeoInit, SquareIsIdentity) {
  EXPECT_EQ(neoinit({7, 7, false, 0}), Matrix::identity(7));
  EXPECT_EQ(neoinit({1, 1, false, 0}), Matrix::identity(1));
}

TEST(NeoInit, TwoByFourBanded) {
  EXPECT_EQ(neoinit({2, 4, false, 0}), (Matrix{{0.5, 0.5, 0, 0}, {0, 0, 0.5, 0.5}}));
}

TEST(NeoInit, FourByTwoIsTransposedBand) {
  EXPECT_EQ(neoinit({4, 2, false, 0}), (Matrix{{0.5, 0}, {0.5, 0}, {0, 0.5}, {0, 0.5}}));
}

TEST(NeoInit, ThreeBySevenLeavesTrailingZeroColumn) {
  const Matrix m = neoinit({3, 7, false, 0});
  EXPECT_EQ(m, (Matrix{{0.5, 0.5, 0, 0, 0, 0, 0}, {0, 0, 0.5, 0.5, 0, 0, 0}, {0, 0, 0, 0, 0.5, 0.5, 0}}));
}

TEST(NeoInit, OneByTwoIsAveragePoolRow) { EXPECT_EQ(neoinit({1, 2, false, 0}), (Matrix{{0.5, 0.5}})); }

TEST(NeoInit, RoundsHalfAwayFromZero) {
  // step = round(5/2) = 3: row 0 spans [0, 3), row 1 the clipped band [3, 5).
  const double t = 1.0 / 3.0;
  EXPECT_EQ(neoinit_pattern(2, 5), (Matrix{{t, t, t, 0, 0}, {0, 0, 0, 0.5, 0.5}}));
}

TEST(NeoInit, StepLargerThanNeededLeavesZeroRows) {
  // 3x8: step = round(8/3) = 3; rows [0,3), [3,6), [6,8).
  const Matrix m = neoinit_pattern(3, 8);
  const double t = 1.0 / 3.0;
  EXPECT_EQ(m, (Matrix{{t, t, t, 0, 0, 0, 0, 0}, {0, 0, 0, t, t, t, 0, 0}, {0, 0, 0, 0, 0, 0, 0.5, 0.5}}));
  // 4x5: step = round(1.25) = 1; row 3 covers [3,4), column 4 never covered.
  const Matrix n = neoinit_pattern(4, 5);
  for (std::size_t r = 0; r < 4; ++r) EXPECT_EQ(n(r, r), 1.0);
  for (std::size_t r = 0; r < 4; ++r) EXPECT_EQ(n(r, 4), 0.0);
}

TEST(NeoInit, NoiseDecomposesIntoPatternPlusGaussianFill) {
  for (auto [r, c] : {std::pair<std::size_t, std::size_t>{7, 7}, {2, 4}, {3, 7}, {5, 2}}) {
    Rng a(99), b(99);
    const Matrix noisy = neoinit({r, c, true, 0}, a);
    const Matrix pattern = neoinit_pattern(r, c);
    const Matrix noise = gaussian_fill(b, r, c, 1.0 / std::sqrt(static_cast<double>(r * c)));
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) EXPECT_EQ(noisy(i, j), pattern(i, j) + noise(i, j));
  }
}

TEST(NeoInit, SeededOverloadIsDeterministic) {
  EXPECT_EQ(neoinit({4, 6, true, 17}), neoinit({4, 6, true, 17}));
  EXPECT_NE(neoinit({4, 6, true, 17}), neoinit({4, 6, true, 18}));
}

TEST(NeoInitProperties, SquareIsIdentityOperator) {
  Rng rng(1);
  for (std::size_t k : {1u, 2u, 4u, 7u}) {
    const Matrix m = neoinit_pattern(k, k);
    const Matrix x = gaussian_fill(rng, k, 3, 1.0);
    EXPECT_EQ(matmul(m, x), x);
  }
}

TEST(NeoInitProperties, RowSumsAreOneOrZero) {
  for (std::size_t r = 1; r <= 9; ++r)
    for (std::size_t c = r + 1; c <= 12; ++c) {
      const Matrix m = neoinit_pattern(r, c);
      for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += m(i, j);
        EXPECT_TRUE(std::abs(s - 1.0) < 1e-15 || s == 0.0) << r << "x" << c << " row " << i << " sum " << s;
      }
    }
}

TEST(NeoInitProperties, DivisibleWideShapesCoverEachColumnOnce) {
  for (std::size_t r = 1; r <= 6; ++r)
    for (std::size_t mult = 2; mult <= 4; ++mult) {
      const std::size_t c = r * mult;
      const Matrix m = neoinit_pattern(r, c);
      for (std::size_t j = 0; j < c; ++j) {
        int nonzero = 0;
        for (std::size_t i = 0; i < r; ++i) nonzero += m(i, j) != 0.0;
        EXPECT_EQ(nonzero, 1) << r << "x" << c << " column " << j;
      }
      for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += m(i, j);
        EXPECT_NEAR(s, 1.0, 1e-15);
      }
    }
}

TEST(NeoInitProperties, TallShapesHaveUnitColumnSums) {
  for (std::size_t c = 1; c <= 4; ++c)
    for (std::size_t mult = 2; mult <= 3; ++mult) {
      const std::size_t r = c * mult;
      const Matrix m = neoinit_pattern(r, c);
      for (std::size_t j = 0; j < c; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < r; ++i) s += m(i, j);
        EXPECT_NEAR(s, 1.0, 1e-15) << r << "x" << c;
      }
    }
}

TEST(NeoInitProperties, NoisyMeanEqualsPattern) {
  const std::size_t r = 2, c = 4, seeds = 10000;
  Matrix sum(r, c);
  for (std::size_t s = 0; s < seeds; ++s) {
    const Matrix m = neoinit({r, c, true, s});
    for (std::size_t i = 0; i < r * c; ++i) sum.data()[i] += m.data()[i];
  }
  const Matrix pattern = neoinit_pattern(r, c);
  const double sigma = 1.0 / std::sqrt(static_cast<double>(r * c));
  for (std::size_t i = 0; i < r * c; ++i)
    EXPECT_LE(std::abs(sum.data()[i] / seeds - pattern.data()[i]), 4.0 * sigma / std::sqrt(double(seeds)));
}

TEST(NeoInitLayer, NoiseFreeSquareLayerIsIdentity) {
  Rng rng(3);
  const NeoCellSpec spec{{GroupSpec{0, 2, 4, 4, 4, 4, 0}, GroupSpec{2, 4, 7, 7, 7, 7, 3}}, false};
  NeoCellParams p = NeoCellParams::zeros(spec);
  for (std::size_t c = 0; c < 4; ++c) {
    const auto& g = spec.group_of(c);
    p.left[c] = neoinit({g.h_out, g.h, false, 0});
    p.right[c] = neoinit({g.w, g.w_out, false, 0});
  }
  Tensor4 x({2, 4, 28, 28});
  for (double& v : x.data()) v = rng.normal();
  EXPECT_EQ(forward_patchwise(x, spec, p), x);
}
