#pragma once

// Dense linear algebra and optimisation primitives shared by every module.
// Storage is Eigen (row-major, double); the algorithms here (QR, Jacobi,
// softmax, AdamW) are implemented directly so their contracts are explicit.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace tokengt {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

struct RngSeed {
    std::uint64_t value = 0;
};

/// SplitMix64 finaliser; used to derive independent sub-seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline RngSeed derive_seed(RngSeed base, std::uint64_t stream) {
    return RngSeed{mix_seed(base.value ^ mix_seed(stream + 0x51ed270b7a3f1c2dULL))};
}

/// Deterministic random stream. Passed by reference, never shared globally.
class Rng {
public:
    explicit Rng(RngSeed seed) : engine_(mix_seed(seed.value)) {}

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    bool coin(double p_true = 0.5) { return uniform() < p_true; }

    /// Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        std::uniform_int_distribution<int> dist(lo, hi);
        return dist(engine_);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

class RankDeficientError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw std::invalid_argument(what);
}

inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    require(rows >= 1 && cols >= 1, "gaussian_matrix: rows and cols must be >= 1");
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.normal();
    return m;
}

inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, RngSeed seed) {
    Rng rng(seed);
    return gaussian_matrix(rows, cols, rng);
}

namespace detail {

// Modified Gram-Schmidt with one re-orthogonalisation pass ("twice is
// enough"). Columns of `m` become the orthonormal factor; a column whose
// residual norm falls below tol * original norm signals rank deficiency.
inline Matrix orthonormalize_columns(const Matrix& m) {
    Matrix q = m;
    const Eigen::Index cols = q.cols();
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    for (Eigen::Index j = 0; j < cols; ++j) {
        const double original = q.col(j).norm();
        for (int pass = 0; pass < 2; ++pass) {
            for (Eigen::Index i = 0; i < j; ++i) {
                const double proj = q.col(i).dot(q.col(j));
                q.col(j) -= proj * q.col(i);
            }
        }
        const double norm = q.col(j).norm();
        if (original == 0.0 || norm <= 1e-12 * std::max(original, scale))
            throw RankDeficientError("qr_orthonormal: input is rank deficient at column " +
                                     std::to_string(j));
        q.col(j) /= norm;
    }
    return q;
}

}  // namespace detail

/// Orthonormal factor Q of a square full-rank matrix (columns orthonormal).
inline Matrix qr_orthonormal(const Matrix& m) {
    require(m.rows() == m.cols() && m.rows() >= 1, "qr_orthonormal: input must be square");
    return detail::orthonormalize_columns(m);
}

/// Thin QR for tall inputs (rows >= cols); returns rows x cols with orthonormal columns.
inline Matrix thin_qr_orthonormal(const Matrix& m) {
    require(m.rows() >= m.cols() && m.cols() >= 1, "thin_qr_orthonormal: needs rows >= cols >= 1");
    return detail::orthonormalize_columns(m);
}

struct EigenDecomposition {
    Vector values;   // ascending
    Matrix vectors;  // column i pairs with values[i]
};

/// Flip each column so that its first entry with |x| > tol is positive.
inline void canonicalize_column_signs(Matrix& vectors, double tol = 1e-9) {
    for (Eigen::Index c = 0; c < vectors.cols(); ++c) {
        for (Eigen::Index r = 0; r < vectors.rows(); ++r) {
            const double v = vectors(r, c);
            if (std::abs(v) > tol) {
                if (v < 0) vectors.col(c) *= -1.0;
                break;
            }
        }
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
/// Stops once the off-diagonal Frobenius norm drops below 1e-12 (relative to
/// the matrix scale when that exceeds one) or after 100 sweeps.
inline EigenDecomposition sym_eig(const Matrix& s) {
    require(s.rows() == s.cols(), "sym_eig: input must be square");
    const Eigen::Index n = s.rows();
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j)
            if (std::abs(s(i, j) - s(j, i)) > 1e-12)
                throw std::invalid_argument("sym_eig: input is not symmetric");

    Matrix a = s;
    Matrix v = Matrix::Identity(n, n);
    const double scale = std::max(1.0, a.norm());
    auto off_norm = [&] {
        double sum = 0.0;
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j)
                if (i != j) sum += a(i, j) * a(i, j);
        return std::sqrt(sum);
    };

    for (int sweep = 0; sweep < 100 && off_norm() > 1e-12 * scale; ++sweep) {
        for (Eigen::Index p = 0; p < n - 1; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double sn = t * c;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - sn * akq;
                    a(k, q) = sn * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - sn * aqk;
                    a(q, k) = sn * apk + c * aqk;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - sn * vkq;
                    v(k, q) = sn * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index x, Eigen::Index y) { return a(x, x) < a(y, y); });

    EigenDecomposition out{Vector(n), Matrix(n, n)};
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto src = order[static_cast<std::size_t>(i)];
        out.values(i) = a(src, src);
        out.vectors.col(i) = v.col(src);
    }
    canonicalize_column_signs(out.vectors);
    return out;
}

/// Row-wise softmax with row-max subtraction.
inline Matrix softmax_rows(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double mx = m.row(i).maxCoeff();
        double sum = 0.0;
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            out(i, j) = std::exp(m(i, j) - mx);
            sum += out(i, j);
        }
        out.row(i) /= sum;
    }
    return out;
}

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.0;
    double eps = 1e-8;
};

/// Moments for a fixed list of parameter tensors.
class AdamWState {
public:
    AdamWState() = default;
    explicit AdamWState(AdamWConfig config) : config_(config) {}

    AdamWConfig& config() { return config_; }
    const AdamWConfig& config() const { return config_; }
    std::uint64_t step_count() const { return step_; }

private:
    friend void adamw_step(std::span<Matrix* const>, std::span<const Matrix* const>, AdamWState&);
    AdamWConfig config_{};
    std::vector<Matrix> m_, v_;
    std::uint64_t step_ = 0;
};

/// Decoupled-weight-decay Adam update applied in place.
inline void adamw_step(std::span<Matrix* const> params, std::span<const Matrix* const> grads,
                       AdamWState& state) {
    if (params.size() != grads.size())
        throw std::invalid_argument("adamw_step: parameter/gradient count mismatch");
    if (state.m_.empty()) {
        for (const Matrix* p : params) {
            state.m_.push_back(Matrix::Zero(p->rows(), p->cols()));
            state.v_.push_back(Matrix::Zero(p->rows(), p->cols()));
        }
    }
    if (state.m_.size() != params.size())
        throw std::invalid_argument("adamw_step: parameter list changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->rows() != grads[i]->rows() || params[i]->cols() != grads[i]->cols() ||
            params[i]->rows() != state.m_[i].rows() || params[i]->cols() != state.m_[i].cols())
            throw std::invalid_argument("adamw_step: shape mismatch at parameter " +
                                        std::to_string(i));
    }

    const auto& c = state.config_;
    ++state.step_;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step_));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix& p = *params[i];
        const Matrix& g = *grads[i];
        Matrix& m = state.m_[i];
        Matrix& v = state.v_[i];
        p *= (1.0 - c.lr * c.weight_decay);
        m = c.beta1 * m + (1.0 - c.beta1) * g;
        v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
        p.array() -= c.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.eps);
    }
}

/// Linear warmup to `peak` over `warmup` steps, then linear decay to zero at `total`.
inline double warmup_linear_lr(std::size_t step, std::size_t warmup, std::size_t total,
                               double peak) {
    if (warmup > 0 && step < warmup)
        return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
    if (total <= warmup) return peak;
    const double frac = static_cast<double>(total - std::min(step, total)) /
                        static_cast<double>(total - warmup);
    return peak * std::max(0.0, frac);
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Runs fn(i) for i in [0, count) on up to `workers` threads. Each index is
/// handled exactly once; callers write to slot i and reduce afterwards, so the
/// result does not depend on the worker count.
template <class Fn>
void parallel_for_index(std::size_t count, std::size_t workers, Fn&& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, count));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < count; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace tokengt
