#pragma once

#include "tokengt/equivariant.hpp"
#include "tokengt/graphs.hpp"
#include "tokengt/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace tokengt {

enum class IdentifierKind { ORF, Laplacian, ExactOrthonormal, RandomNonOrthogonal };

inline std::string to_string(IdentifierKind k) {
    switch (k) {
        case IdentifierKind::ORF: return "orf";
        case IdentifierKind::Laplacian: return "lap";
        case IdentifierKind::ExactOrthonormal: return "exact";
        case IdentifierKind::RandomNonOrthogonal: return "random-nonorth";
    }
    return "?";
}

inline IdentifierKind identifier_kind_from_string(const std::string& s) {
    if (s == "orf") return IdentifierKind::ORF;
    if (s == "lap") return IdentifierKind::Laplacian;
    if (s == "exact") return IdentifierKind::ExactOrthonormal;
    if (s == "random-nonorth") return IdentifierKind::RandomNonOrthogonal;
    throw std::invalid_argument("unknown identifier kind: " + s);
}

struct NodeIdentifiers {
    Matrix P;  // n x d_p
    IdentifierKind kind = IdentifierKind::ORF;

    std::size_t n() const { return static_cast<std::size_t>(P.rows()); }
    std::size_t d_p() const { return static_cast<std::size_t>(P.cols()); }
};

struct TypeIdentifiers {
    Matrix E;  // bell(k) x d_e
    bool trainable = true;

    std::size_t count() const { return static_cast<std::size_t>(E.rows()); }
    std::size_t d_e() const { return static_cast<std::size_t>(E.cols()); }
};

namespace detail {
inline Matrix fit_columns(const Matrix& m, std::size_t d_p) {
    Matrix out = Matrix::Zero(m.rows(), static_cast<Eigen::Index>(d_p));
    const auto keep = std::min<Eigen::Index>(m.cols(), static_cast<Eigen::Index>(d_p));
    out.leftCols(keep) = m.leftCols(keep);
    return out;
}
}  // namespace detail

/// Rows of a random orthogonal matrix. Zero-padded when n < d_p. When n > d_p
/// the thin QR factor of an n x d_p Gaussian is used, which has the same
/// distribution as d_p columns sampled from the full n x n factor.
inline NodeIdentifiers orf_identifiers(std::size_t n, std::size_t d_p, Rng& rng) {
    require(n >= 1 && d_p >= 1, "orf_identifiers: n and d_p must be >= 1");
    if (n <= d_p) return {detail::fit_columns(qr_orthonormal(gaussian_matrix(n, n, rng)), d_p), IdentifierKind::ORF};
    return {thin_qr_orthonormal(gaussian_matrix(n, d_p, rng)), IdentifierKind::ORF};
}

inline NodeIdentifiers orf_identifiers(std::size_t n, std::size_t d_p, RngSeed seed) {
    Rng rng(seed);
    return orf_identifiers(n, d_p, rng);
}

/// Eigenvectors of the normalized Laplacian, ascending eigenvalue, truncated or zero-padded.
inline NodeIdentifiers lap_identifiers(const Graph& g, std::size_t d_p) {
    require(d_p >= 1, "lap_identifiers: d_p must be >= 1");
    const auto eig = sym_eig(normalized_laplacian(g));
    return {detail::fit_columns(eig.vectors, d_p), IdentifierKind::Laplacian};
}

inline NodeIdentifiers exact_orthonormal_identifiers(std::size_t n, std::size_t d_p) {
    require(d_p >= n, "exact_orthonormal_identifiers: d_p must be >= n");
    Matrix p = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d_p));
    p.leftCols(static_cast<Eigen::Index>(n)).setIdentity();
    return {p, IdentifierKind::ExactOrthonormal};
}

inline NodeIdentifiers random_nonorthogonal_identifiers(std::size_t n, std::size_t d_p, Rng& rng) {
    Matrix p = gaussian_matrix(n, d_p, rng);
    for (Eigen::Index r = 0; r < p.rows(); ++r) p.row(r).normalize();
    return {p, IdentifierKind::RandomNonOrthogonal};
}

inline NodeIdentifiers random_nonorthogonal_identifiers(std::size_t n, std::size_t d_p, RngSeed seed) {
    Rng rng(seed);
    return random_nonorthogonal_identifiers(n, d_p, rng);
}

inline NodeIdentifiers sign_flip_augment(NodeIdentifiers p, Rng& rng) {
    if (p.kind != IdentifierKind::Laplacian)
        throw std::invalid_argument("sign_flip_augment: only Laplacian identifiers carry a sign ambiguity");
    for (Eigen::Index c = 0; c < p.P.cols(); ++c)
        if (rng.coin()) p.P.col(c) *= -1.0;
    return p;
}

inline NodeIdentifiers sign_flip_augment(NodeIdentifiers p, RngSeed seed) {
    Rng rng(seed);
    return sign_flip_augment(std::move(p), rng);
}

/// Column dropout with inverted scaling so the expectation is unchanged.
inline NodeIdentifiers eigvec_dropout(NodeIdentifiers p, double rate, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("eigvec_dropout: rate must be in [0, 1)");
    if (rate == 0.0) return p;
    const double keep_scale = 1.0 / (1.0 - rate);
    for (Eigen::Index c = 0; c < p.P.cols(); ++c) {
        if (rng.coin(rate))
            p.P.col(c).setZero();
        else
            p.P.col(c) *= keep_scale;
    }
    return p;
}

inline NodeIdentifiers eigvec_dropout(NodeIdentifiers p, double rate, RngSeed seed) {
    Rng rng(seed);
    return eigvec_dropout(std::move(p), rate, rng);
}

/// Unit vectors spaced evenly on a circle in the first two channels.
inline TypeIdentifiers equispaced_type_identifiers(std::size_t k, std::size_t d_e) {
    require(d_e >= 2, "equispaced_type_identifiers: d_e must be >= 2");
    const std::size_t b = bell_number(k);
    Matrix e = Matrix::Zero(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(d_e));
    for (std::size_t r = 0; r < b; ++r) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(r) / static_cast<double>(b);
        e(static_cast<Eigen::Index>(r), 0) = std::cos(angle);
        e(static_cast<Eigen::Index>(r), 1) = std::sin(angle);
    }
    return {e, false};
}

/// Margin between same-class and cross-class type-identifier dot products.
inline double equispaced_epsilon(std::size_t k) {
    return 1.0 - std::cos(2.0 * std::numbers::pi / static_cast<double>(bell_number(k)));
}

inline TypeIdentifiers random_type_identifiers(std::size_t k, std::size_t d_e, Rng& rng, double scale = 1.0) {
    return {gaussian_matrix(bell_number(k), d_e, rng) * scale, true};
}

}  // namespace tokengt
