#include "tokengt/favor.hpp"

#include <gtest/gtest.h>

#include <algorithm>

using namespace tokengt;

namespace {
double rel_error(const Matrix& approx, const Matrix& exact) { return (approx - exact).norm() / exact.norm(); }
}  // namespace

TEST(OrthogonalFeatures, BlocksAreOrthogonal) {
    Rng rng(RngSeed{1});
    const Matrix w = orthogonal_random_features(10, 4, rng);
    ASSERT_EQ(w.rows(), 10);
    for (int b = 0; b < 2; ++b) {
        const Matrix blk = w.middleRows(b * 4, 4);
        const Matrix g = blk * blk.transpose();
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j)
                if (i != j) {
                    EXPECT_NEAR(g(i, j), 0.0, 1e-10);
                }
    }
}

TEST(OrthogonalFeatures, NormsFollowChi) {
    Rng rng(RngSeed{2});
    const Matrix w = orthogonal_random_features(4000, 8, rng);
    // E[|w|^2] = d for chi(d).
    EXPECT_NEAR(w.rowwise().squaredNorm().mean(), 8.0, 0.3);
}

TEST(Favor, SingleKeyIsExact) {
    const Matrix q = gaussian_matrix(5, 4, RngSeed{3});
    const Matrix k = gaussian_matrix(1, 4, RngSeed{4});
    const Matrix v = gaussian_matrix(1, 3, RngSeed{5});
    const Matrix out = favor_attention(q, k, v, {16, RngSeed{6}, 256});
    for (int i = 0; i < 5; ++i) EXPECT_LE((out.row(i) - v.row(0)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Favor, IdenticalKeysAverageValues) {
    const Matrix q = gaussian_matrix(3, 4, RngSeed{7});
    const Matrix k = gaussian_matrix(1, 4, RngSeed{8}).replicate(6, 1);
    const Matrix v = gaussian_matrix(6, 2, RngSeed{9});
    const Matrix out = favor_attention(q, k, v, {8, RngSeed{10}, 256});
    const RowVector mean = v.colwise().mean();
    for (int i = 0; i < 3; ++i) EXPECT_LE((out.row(i) - mean).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Favor, ExactReferenceMatchesSoftmax) {
    const Matrix q = gaussian_matrix(4, 3, RngSeed{11});
    const Matrix k = gaussian_matrix(5, 3, RngSeed{12});
    const Matrix v = gaussian_matrix(5, 2, RngSeed{13});
    const Matrix ref = exact_softmax_attention(q, k, v);
    for (int i = 0; i < 4; ++i) {
        RowVector w(5);
        for (int j = 0; j < 5; ++j) w(j) = std::exp(q.row(i).dot(k.row(j)) / std::sqrt(3.0));
        w /= w.sum();
        EXPECT_LE((w * v - ref.row(i)).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Favor, BlockSizeDoesNotChangeResult) {
    const Matrix q = gaussian_matrix(37, 6, RngSeed{14}) * 0.5;
    const Matrix k = gaussian_matrix(20, 6, RngSeed{15}) * 0.5;
    const Matrix v = gaussian_matrix(20, 3, RngSeed{16});
    const Matrix a = favor_attention(q, k, v, {32, RngSeed{17}, 256});
    const Matrix b = favor_attention(q, k, v, {32, RngSeed{17}, 5});
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Favor, ErrorDecreasesWithFeatures) {
    std::vector<double> med;
    for (std::size_t m : {16u, 64u, 256u}) {
        std::vector<double> errs;
        for (std::uint64_t s = 0; s < 10; ++s) {
            const Matrix q = gaussian_matrix(64, 16, RngSeed{100 + s}) * 0.5;
            const Matrix k = gaussian_matrix(64, 16, RngSeed{200 + s}) * 0.5;
            const Matrix v = gaussian_matrix(64, 16, RngSeed{300 + s});
            errs.push_back(rel_error(favor_attention(q, k, v, {m, RngSeed{400 + s}, 256}), exact_softmax_attention(q, k, v)));
        }
        std::nth_element(errs.begin(), errs.begin() + 5, errs.end());
        med.push_back(errs[5]);
    }
    EXPECT_GT(med[0], med[1]);
    EXPECT_GT(med[1], med[2]);
}

TEST(Favor, Deterministic) {
    const Matrix q = gaussian_matrix(8, 4, RngSeed{18});
    const Matrix v = gaussian_matrix(8, 2, RngSeed{19});
    EXPECT_EQ(favor_attention(q, q, v, {16, RngSeed{20}, 256}), favor_attention(q, q, v, {16, RngSeed{20}, 256}));
}

TEST(Favor, ShapeErrors) {
    EXPECT_THROW(favor_attention(Matrix::Zero(2, 3), Matrix::Zero(2, 4), Matrix::Zero(2, 1), {}), std::invalid_argument);
    EXPECT_THROW(favor_attention(Matrix::Zero(2, 3), Matrix::Zero(2, 3), Matrix::Zero(3, 1), {}), std::invalid_argument);
    EXPECT_THROW(favor_attention(Matrix::Zero(2, 3), Matrix::Zero(2, 3), Matrix::Zero(2, 1), {0, RngSeed{}, 256}),
                 std::invalid_argument);
}
