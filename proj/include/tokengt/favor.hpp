#pragma once

// Softmax attention approximated with positive random features. Nothing here
// allocates an N x N buffer: keys are summarised into m x d_v and m x 1
// statistics and queries are streamed through them in row blocks.

#include "tokengt/numerics.hpp"

#include <cmath>
#include <sstream>

namespace tokengt {

struct KernelAttentionConfig {
    std::size_t features = 64;  // m_f
    RngSeed seed{};
    std::size_t query_block = 256;
};

/// m x d projection with block-orthogonal rows whose norms follow chi(d).
inline Matrix orthogonal_random_features(std::size_t m, std::size_t d, Rng& rng) {
    require(m >= 1 && d >= 1, "orthogonal_random_features: m and d must be >= 1");
    Matrix omega(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
    std::size_t row = 0;
    while (row < m) {
        const Matrix q = qr_orthonormal(gaussian_matrix(d, d, rng));
        const std::size_t take = std::min(d, m - row);
        for (std::size_t r = 0; r < take; ++r) {
            const double radius = gaussian_matrix(1, d, rng).norm();
            omega.row(static_cast<Eigen::Index>(row + r)) = q.col(static_cast<Eigen::Index>(r)).transpose() * radius;
        }
        row += take;
    }
    return omega;
}

/// softmax(Q K^T / sqrt(d)) V, materialized. Reference only.
inline Matrix exact_softmax_attention(const Matrix& q, const Matrix& k, const Matrix& v) {
    require(q.cols() == k.cols() && k.rows() == v.rows(), "exact_softmax_attention: shape mismatch");
    return softmax_rows((q * k.transpose()) / std::sqrt(static_cast<double>(q.cols()))) * v;
}

/// Linear-memory approximation of exact_softmax_attention.
inline Matrix favor_attention(const Matrix& q, const Matrix& k, const Matrix& v, const KernelAttentionConfig& cfg) {
    require(q.cols() == k.cols(), "favor_attention: query and key widths must match");
    require(k.rows() == v.rows(), "favor_attention: key and value counts must match");
    require(cfg.features >= 1, "favor_attention: need at least one feature");
    const auto d = static_cast<std::size_t>(q.cols());
    const auto m = static_cast<Eigen::Index>(cfg.features);
    Rng rng(cfg.seed);
    const Matrix omega = orthogonal_random_features(cfg.features, d, rng);
    const double in_scale = std::pow(static_cast<double>(d), -0.25);
    const double feat_scale = 1.0 / std::sqrt(static_cast<double>(m));

    // Key features, shifted by one global constant (cancels in the ratio).
    Matrix kf = (k * in_scale) * omega.transpose();  // N_k x m
    for (Eigen::Index j = 0; j < kf.rows(); ++j) kf.row(j).array() -= 0.5 * in_scale * in_scale * k.row(j).squaredNorm();
    const double kmax = kf.maxCoeff();
    kf = ((kf.array() - kmax).exp() * feat_scale).matrix();
    const Matrix kv = kf.transpose() * v;                 // m x d_v
    const RowVector ksum = kf.colwise().sum();            // 1 x m
    kf.resize(0, 0);

    Matrix out(q.rows(), v.cols());
    const auto block = static_cast<Eigen::Index>(std::max<std::size_t>(1, cfg.query_block));
    for (Eigen::Index start = 0; start < q.rows(); start += block) {
        const auto rows = std::min(block, q.rows() - start);
        // Per-query shift: the -|q|^2/2 term and the row max both cancel in the ratio.
        Matrix qf = (q.middleRows(start, rows) * in_scale) * omega.transpose();
        for (Eigen::Index i = 0; i < rows; ++i) {
            const double mx = qf.row(i).maxCoeff();
            qf.row(i) = ((qf.row(i).array() - mx).exp() * feat_scale).matrix();
        }
        const Matrix num = qf * kv;
        const Vector den = qf * ksum.transpose();
        for (Eigen::Index i = 0; i < rows; ++i) {
            if (!(den(i) > 0.0) || !std::isfinite(den(i))) {
                std::ostringstream msg;
                msg << "favor_attention: degenerate denominator " << den(i) << " at query " << (start + i);
                throw std::runtime_error(msg.str());
            }
            out.row(start + i) = num.row(i) / std::max(den(i), 1e-9);
        }
    }
    return out;
}

}  // namespace tokengt
