#pragma once

// Learned approximation of the 15 second-order equivariant basis tensors by
// one multihead attention layer, supervised head by head.

#include "tokengt/constructive.hpp"
#include "tokengt/experiments/dataset.hpp"
#include "tokengt/identifiers.hpp"
#include "tokengt/tokenizer.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace tokengt {

enum class Layout { Dense, Sparse };

inline std::string to_string(Layout l) { return l == Layout::Dense ? "dense" : "sparse"; }

inline Layout layout_from_string(const std::string& s) {
    if (s == "dense") return Layout::Dense;
    if (s == "sparse") return Layout::Sparse;
    throw std::invalid_argument("unknown layout '" + s + "'");
}

enum class IdentifierMode { None, Random, RandomFirstOrder, ORF, ORFFirstOrder, Lap, Exact };

inline std::string to_string(IdentifierMode m) {
    switch (m) {
        case IdentifierMode::None: return "none";
        case IdentifierMode::Random: return "random";
        case IdentifierMode::RandomFirstOrder: return "random-first-order";
        case IdentifierMode::ORF: return "orf";
        case IdentifierMode::ORFFirstOrder: return "orf-first-order";
        case IdentifierMode::Lap: return "lap";
        case IdentifierMode::Exact: return "exact";
    }
    return "?";
}

inline IdentifierMode identifier_mode_from_string(const std::string& s) {
    for (auto m : {IdentifierMode::None, IdentifierMode::Random, IdentifierMode::RandomFirstOrder, IdentifierMode::ORF,
                   IdentifierMode::ORFFirstOrder, IdentifierMode::Lap, IdentifierMode::Exact})
        if (to_string(m) == s) return m;
    throw std::invalid_argument("unknown identifier mode '" + s + "'");
}

struct SyntheticConfig {
    Layout layout = Layout::Sparse;
    IdentifierMode mode = IdentifierMode::ORF;
    bool type_ids = true;
    std::size_t d = 256;
    std::size_t heads = 15;
    std::size_t d_h = 64;
    std::size_t d_p = 24;
    std::size_t d_e = 24;
    std::size_t steps = 1500;
    std::size_t warmup = 500;
    double peak_lr = 1e-3;
    double weight_decay = 0.0;
    std::size_t batch = 64;
    double dropout = 0.0;
    RngSeed seed{0};
    std::size_t train_count = 512;
    std::size_t test_count = 64;

    /// Row label used in result tables: "none", "type-only", "orf+type", ...
    std::string label() const {
        if (mode == IdentifierMode::None) return type_ids ? "type-only" : "none";
        return to_string(mode) + (type_ids ? "+type" : "");
    }

    void validate() const {
        require(heads == 15, "SyntheticConfig: the order-2 study uses bell(4) = 15 heads");
        require(warmup <= steps, "SyntheticConfig: warmup must not exceed steps");
        require(d >= 1 && d_h >= 1 && d_p >= 1 && d_e >= 1, "SyntheticConfig: widths must be >= 1");
        require(batch >= 1 && steps >= 1, "SyntheticConfig: batch and steps must be >= 1");
        require(train_count >= 1 && test_count >= 1, "SyntheticConfig: dataset sizes must be >= 1");
        require(dropout >= 0.0 && dropout < 1.0, "SyntheticConfig: dropout must be in [0, 1)");
        require(peak_lr > 0.0, "SyntheticConfig: peak_lr must be positive");
    }
};

/// Per-head attention targets over a token sequence with [null] at position 0.
struct BasisTargets {
    std::vector<Matrix> targets;  // (N+1) x (N+1) each
    std::vector<char> row_mask;   // 1 for supervised rows
};

/// Row-normalized B^mu restricted to the tokens present; rows without support
/// put all their mass on [null]. The [null] row itself is unsupervised.
inline BasisTargets make_basis_targets(const TokenSequence& ts) {
    require(ts.size() >= 1 && ts.tokens.front().kind == TokenKind::NullSpecial,
            "make_basis_targets: [null] must be at position 0");
    const auto& joint = ClassTable::get(4);
    const auto T = static_cast<Eigen::Index>(ts.size());
    for (Eigen::Index t = 1; t < T; ++t)
        require(ts.tokens[static_cast<std::size_t>(t)].multi_index.size() == 2,
                "make_basis_targets: every token needs a pair multi-index");
    BasisTargets out;
    out.row_mask.assign(ts.size(), 1);
    out.row_mask[0] = 0;
    std::vector<int> ij(4);
    for (std::size_t h = 0; h < joint.size(); ++h) {
        Matrix m = Matrix::Zero(T, T);
        for (Eigen::Index t = 1; t < T; ++t) {
            const auto& i = ts.tokens[static_cast<std::size_t>(t)].multi_index;
            for (Eigen::Index s = 1; s < T; ++s) {
                const auto& j = ts.tokens[static_cast<std::size_t>(s)].multi_index;
                ij = {i[0], i[1], j[0], j[1]};
                if (class_of(ij) == joint[h]) m(t, s) = 1.0;
            }
            const double sum = m.row(t).sum();
            if (sum > 0)
                m.row(t) /= sum;
            else
                m(t, 0) = 1.0;
        }
        out.targets.push_back(std::move(m));
    }
    return out;
}

/// Token structure of one graph, independent of identifiers and parameters.
struct BasisGraph {
    Graph graph;
    Layout layout = Layout::Sparse;
    std::vector<std::array<int, 2>> index;  // per token (null excluded)
    std::vector<std::uint8_t> type;         // 0 node, 1 edge
    std::vector<std::uint8_t> pair_class;   // N x N joint class of (i, j)
    std::vector<std::uint16_t> counts;      // N x 15 keys per (query, class)

    std::size_t tokens() const { return index.size(); }
};

namespace detail {
/// Joint-class index of (i1, i2, j1, j2) via a 4^4 pattern table.
inline int pair_class_index(int i1, int i2, int j1, int j2) {
    static const std::array<std::uint8_t, 256> table = [] {
        std::array<std::uint8_t, 256> t{};
        const auto& joint = ClassTable::get(4);
        for (int code = 0; code < 256; ++code) {
            const int v[4] = {code & 3, (code >> 2) & 3, (code >> 4) & 3, (code >> 6) & 3};
            t[static_cast<std::size_t>(code)] = static_cast<std::uint8_t>(joint.index_of_multi_index(v));
        }
        return t;
    }();
    const int v[4] = {i1, i2, j1, j2};
    int rgs[4], next = 0;
    for (int p = 0; p < 4; ++p) {
        rgs[p] = -1;
        for (int q = 0; q < p; ++q)
            if (v[q] == v[p]) {
                rgs[p] = rgs[q];
                break;
            }
        if (rgs[p] < 0) rgs[p] = next++;
    }
    return table[static_cast<std::size_t>(rgs[0] | (rgs[1] << 2) | (rgs[2] << 4) | (rgs[3] << 6))];
}
}  // namespace detail

/// Token order matches tokenize_dense / tokenize_sparse(symmetrize = true).
inline BasisGraph prepare_basis_graph(const Graph& g, Layout layout) {
    g.validate();
    BasisGraph b;
    b.graph = g;
    b.layout = layout;
    const int n = static_cast<int>(g.n);
    if (layout == Layout::Dense) {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) b.index.push_back({i, j});
    } else {
        for (int v = 0; v < n; ++v) b.index.push_back({v, v});
        for (const auto& [u, v] : g.edges) b.index.push_back({u, v});
        for (const auto& [u, v] : g.edges) b.index.push_back({v, u});
    }
    const std::size_t N = b.index.size();
    for (const auto& ij : b.index) b.type.push_back(ij[0] == ij[1] ? 0 : 1);
    b.pair_class.resize(N * N);
    b.counts.assign(N * 15, 0);
    for (std::size_t t = 0; t < N; ++t)
        for (std::size_t s = 0; s < N; ++s) {
            const int c = detail::pair_class_index(b.index[t][0], b.index[t][1], b.index[s][0], b.index[s][1]);
            b.pair_class[t * N + s] = static_cast<std::uint8_t>(c);
            ++b.counts[t * 15 + static_cast<std::size_t>(c)];
        }
    return b;
}

inline std::vector<BasisGraph> prepare_basis_graphs(const std::vector<Graph>& graphs, Layout layout) {
    std::vector<BasisGraph> out;
    out.reserve(graphs.size());
    for (const auto& g : graphs) out.push_back(prepare_basis_graph(g, layout));
    return out;
}

/// Tokenized view of a prepared graph with [null] prepended (metadata only).
inline TokenSequence basis_token_sequence(const BasisGraph& b) {
    TokenSequence ts;
    ts.n = b.graph.n;
    ts.k = 2;
    ts.tokens.push_back({TokenKind::NullSpecial, {}, {}, {}});
    for (std::size_t t = 0; t < b.tokens(); ++t)
        ts.tokens.push_back({b.type[t] == 0 ? TokenKind::Node : TokenKind::Edge, {b.index[t][0], b.index[t][1]}, {}, {}});
    return ts;
}

/// Identifiers of one draw: the per-token block [P_{i1} | P_{i2}] and, when
/// tokens share per-node rows, the node table it was gathered from.
struct IdentifierDraw {
    Matrix block;  // N x 2 d_p
    Matrix nodes;  // n x d_p, empty for per-token modes
};

inline IdentifierDraw draw_identifiers(const BasisGraph& b, IdentifierMode mode, std::size_t d_p, Rng& rng,
                                       bool training) {
    const auto N = static_cast<Eigen::Index>(b.tokens());
    const auto dp = static_cast<Eigen::Index>(d_p);
    const std::size_t n = b.graph.n;
    IdentifierDraw out;
    out.block = Matrix::Zero(N, 2 * dp);
    switch (mode) {
        case IdentifierMode::None: out.nodes = Matrix::Zero(static_cast<Eigen::Index>(n), dp); break;
        case IdentifierMode::Random: out.nodes = random_nonorthogonal_identifiers(n, d_p, rng).P; break;
        case IdentifierMode::ORF: out.nodes = orf_identifiers(n, d_p, rng).P; break;
        case IdentifierMode::Exact: out.nodes = exact_orthonormal_identifiers(n, d_p).P; break;
        case IdentifierMode::Lap: {
            auto p = lap_identifiers(b.graph, d_p);
            if (training) p = sign_flip_augment(std::move(p), rng);
            out.nodes = std::move(p.P);
            break;
        }
        case IdentifierMode::RandomFirstOrder:
        case IdentifierMode::ORFFirstOrder:
            // Each token draws its own pair of identifiers; incidence is lost.
            for (Eigen::Index t = 0; t < N; ++t) {
                const Matrix p = mode == IdentifierMode::ORFFirstOrder ? orf_identifiers(2, d_p, rng).P
                                                                       : random_nonorthogonal_identifiers(2, d_p, rng).P;
                out.block.row(t).head(dp) = p.row(0);
                out.block.row(t).tail(dp) = p.row(1);
            }
            return out;
    }
    for (Eigen::Index t = 0; t < N; ++t) {
        out.block.row(t).head(dp) = out.nodes.row(b.index[static_cast<std::size_t>(t)][0]);
        out.block.row(t).tail(dp) = out.nodes.row(b.index[static_cast<std::size_t>(t)][1]);
    }
    return out;
}

inline Matrix identifier_block(const BasisGraph& b, IdentifierMode mode, std::size_t d_p, Rng& rng, bool training) {
    return draw_identifiers(b, mode, d_p, rng, training).block;
}

/// One attention layer with an input projection, trainable type identifiers
/// and a trainable [null] embedding. The value path is irrelevant to the
/// attention targets and is not modelled.
struct BasisModel {
    std::size_t d_p = 0, d_e = 0, d = 0, d_h = 0;
    bool type_ids = true;
    Matrix w_in;   // (2 d_p + d_e) x d
    Matrix null;   // 1 x d
    Matrix E;      // 2 x d_e
    std::vector<Matrix> Wq, Wk, bq, bk;

    std::size_t input_width() const { return 2 * d_p + d_e; }
    std::size_t heads() const { return Wq.size(); }

    static BasisModel zeros(std::size_t d_p, std::size_t d_e, std::size_t d, std::size_t d_h, std::size_t heads,
                            bool type_ids) {
        BasisModel m;
        m.d_p = d_p;
        m.d_e = d_e;
        m.d = d;
        m.d_h = d_h;
        m.type_ids = type_ids;
        m.w_in = Matrix::Zero(static_cast<Eigen::Index>(m.input_width()), static_cast<Eigen::Index>(d));
        m.null = Matrix::Zero(1, static_cast<Eigen::Index>(d));
        m.E = Matrix::Zero(2, static_cast<Eigen::Index>(d_e));
        m.Wq.assign(heads, Matrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d_h)));
        m.Wk = m.Wq;
        m.bq.assign(heads, Matrix::Zero(1, static_cast<Eigen::Index>(d_h)));
        m.bk = m.bq;
        return m;
    }

    static BasisModel init(const SyntheticConfig& cfg, Rng& rng) {
        auto m = zeros(cfg.d_p, cfg.d_e, cfg.d, cfg.d_h, cfg.heads, cfg.type_ids);
        // Two unit-norm identifiers plus a unit type row: unit-variance
        // projected entries keep initial logits O(1) instead of saturating.
        m.w_in = gaussian_matrix(m.input_width(), cfg.d, rng) / std::sqrt(3.0);
        m.null = gaussian_matrix(1, cfg.d, rng);
        if (cfg.type_ids) m.E = gaussian_matrix(2, cfg.d_e, rng) / std::sqrt(static_cast<double>(cfg.d_e));
        const double s = 1.0 / std::sqrt(static_cast<double>(cfg.d));
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            m.Wq[h] = gaussian_matrix(cfg.d, cfg.d_h, rng) * s;
            m.Wk[h] = gaussian_matrix(cfg.d, cfg.d_h, rng) * s;
        }
        return m;
    }

    /// Trainable tensors in a fixed order; E only when type identifiers are on.
    std::vector<Matrix*> parameters() {
        std::vector<Matrix*> p{&w_in, &null};
        if (type_ids) p.push_back(&E);
        for (std::size_t h = 0; h < heads(); ++h) {
            p.push_back(&Wq[h]);
            p.push_back(&Wk[h]);
            p.push_back(&bq[h]);
            p.push_back(&bk[h]);
        }
        return p;
    }

    /// Token inputs [identifier block | E_type].
    Matrix token_inputs(const BasisGraph& b, const Matrix& ids) const {
        require(ids.rows() == static_cast<Eigen::Index>(b.tokens()) &&
                    ids.cols() == static_cast<Eigen::Index>(2 * d_p),
                "BasisModel: identifier block shape mismatch");
        Matrix x(ids.rows(), static_cast<Eigen::Index>(input_width()));
        x.leftCols(ids.cols()) = ids;
        for (Eigen::Index t = 0; t < x.rows(); ++t)
            x.row(t).tail(static_cast<Eigen::Index>(d_e)) = E.row(b.type[static_cast<std::size_t>(t)]);
        return x;
    }
};

namespace detail {

/// Turns one row of scaled logits (length 1 + N, [null] first) into attention
/// in place and returns its squared error against head h's target. With
/// `grad`, the row is then overwritten by gscale times the gradient of that
/// error w.r.t. the logits. `attn`, when given, receives the attention.
inline double fused_row(double* row, Eigen::Index len, const std::uint8_t* pc, std::size_t h, std::uint16_t cnt,
                        double gscale, bool grad, double* attn, Eigen::ArrayXd& scratch) {
    Eigen::Map<Eigen::ArrayXd> r(row, len);
    const double mx = r.maxCoeff();
    r = (r - mx).exp();
    r /= r.sum();
    if (attn) std::copy(row, row + len, attn);
    // Eigen-owned scratch keeps reduction order independent of heap addresses.
    if (scratch.size() < len) scratch.resize(len);
    Eigen::Map<Eigen::ArrayXd> diff(scratch.data(), len);
    const double inv = cnt ? 1.0 / cnt : 0.0;
    const auto hh = static_cast<std::uint8_t>(h);
    diff(0) = r(0) - (cnt == 0 ? 1.0 : 0.0);
    for (Eigen::Index s = 1; s < len; ++s) diff(s) = r(s) - (pc[s - 1] == hh ? inv : 0.0);
    const double err = diff.square().sum();
    if (grad) {
        const double dot = (diff * r).sum();
        r = r * (diff - dot) * gscale;
    }
    return err;
}

/// Generic head: q (N x d_h) against k ((N+1) x d_h, [null] first). Leaves the
/// logit gradient (or, without grad, the attention) in `work`.
inline double head_loss(const Matrix& q, const Matrix& k, const BasisGraph& b, std::size_t h, double scale,
                        Matrix& work, bool grad, Matrix* attn = nullptr) {
    const auto N = q.rows();
    const auto cols = k.rows();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    const double norm = static_cast<double>(N) * static_cast<double>(cols);
    work.noalias() = q * k.transpose();
    work *= inv_sqrt;
    if (attn) attn->resize(N, cols);
    Eigen::ArrayXd scratch;
    double err = 0.0;
    const auto n = static_cast<std::size_t>(N);
    for (Eigen::Index t = 0; t < N; ++t) {
        const auto ti = static_cast<std::size_t>(t);
        err += fused_row(&work(t, 0), cols, &b.pair_class[ti * n], h, b.counts[ti * 15 + h], 2.0 * scale / norm * inv_sqrt,
                         grad, attn ? &(*attn)(t, 0) : nullptr, scratch);
    }
    return err / norm;
}

}  // namespace detail

/// Gradients in the same layout as the model.
inline BasisModel zero_grads_like(const BasisModel& m) {
    return BasisModel::zeros(m.d_p, m.d_e, m.d, m.d_h, m.heads(), m.type_ids);
}

/// Query/key projections with w_in folded in, heads side by side, shared by
/// every graph of a step.
struct FoldedBasisModel {
    Matrix Aq, Ak;     // input_width x (H d_h)
    Matrix bq, bk;     // 1 x (H d_h)
    Matrix knull;      // 1 x (H d_h)

    explicit FoldedBasisModel(const BasisModel& m) {
        const auto H = static_cast<Eigen::Index>(m.heads()), dh = static_cast<Eigen::Index>(m.d_h);
        Aq.resize(m.w_in.rows(), H * dh);
        Ak.resize(m.w_in.rows(), H * dh);
        bq.resize(1, H * dh);
        bk.resize(1, H * dh);
        knull.resize(1, H * dh);
        for (Eigen::Index h = 0; h < H; ++h) {
            const auto hs = static_cast<std::size_t>(h);
            Aq.middleCols(h * dh, dh).noalias() = m.w_in * m.Wq[hs];
            Ak.middleCols(h * dh, dh).noalias() = m.w_in * m.Wk[hs];
            bq.middleCols(h * dh, dh) = m.bq[hs];
            bk.middleCols(h * dh, dh) = m.bk[hs];
            knull.middleCols(h * dh, dh) = m.null * m.Wk[hs] + m.bk[hs];
        }
    }
};

/// Gradients with respect to the folded tensors; see `unfold_grads`.
struct FoldedGrads {
    Matrix Aq, Ak, bq, bk, knull, E;

    explicit FoldedGrads(const BasisModel& m) {
        const auto w = static_cast<Eigen::Index>(m.heads() * m.d_h);
        Aq = Matrix::Zero(m.w_in.rows(), w);
        Ak = Aq;
        bq = Matrix::Zero(1, w);
        bk = bq;
        knull = bq;
        E = Matrix::Zero(m.E.rows(), m.E.cols());
    }
};

struct BasisLoss {
    double mean = 0.0;
    std::vector<double> per_head;
};

/// Loss of one graph (mean over heads), no dropout. With `grads` set,
/// accumulates `scale` times the gradient of that mean. When identifiers
/// are shared per node, every key is a sum of a few per-node and per-type
/// rows, so logits are gathered from an N x (2n + 3) product instead of
/// an N x N one.
inline BasisLoss basis_loss_folded(const BasisModel& m, const FoldedBasisModel& f, const BasisGraph& b,
                                   const IdentifierDraw& ids, FoldedGrads* grads, double scale = 1.0) {
    const Matrix x = m.token_inputs(b, ids.block);
    const auto N = x.rows();
    const auto H = m.heads();
    const auto dh = static_cast<Eigen::Index>(m.d_h);
    const auto dp = static_cast<Eigen::Index>(m.d_p);
    const auto de = static_cast<Eigen::Index>(m.d_e);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    const double norm = static_cast<double>(N) * static_cast<double>(N + 1);
    const double gscale = 2.0 * scale / static_cast<double>(H) / norm * inv_sqrt;
    const bool grad = grads != nullptr;
    const bool structured = ids.nodes.size() > 0;
    const bool dense = b.layout == Layout::Dense;
    const auto n = static_cast<Eigen::Index>(b.graph.n);
    const auto Nu = static_cast<std::size_t>(N);

    // Queries: gathered from per-node and per-type rows when shared, else X Aq.
    Matrix q_all, qa, qb, qw;
    if (structured) {
        qa.noalias() = ids.nodes * f.Aq.topRows(dp);
        qb.noalias() = ids.nodes * f.Aq.middleRows(dp, dp);
        qw.noalias() = m.E * f.Aq.bottomRows(de);
        qw.rowwise() += f.bq.row(0);
        q_all.resize(N, f.Aq.cols());
        for (std::size_t t = 0; t < Nu; ++t)
            q_all.row(static_cast<Eigen::Index>(t)) = qa.row(b.index[t][0]) + qb.row(b.index[t][1]) + qw.row(b.type[t]);
    } else {
        q_all.noalias() = x * f.Aq;
        q_all.rowwise() += f.bq.row(0);
    }
    Matrix dq_all, dkey_all;  // key gradient: per-node/type pieces or per token
    if (grad) dq_all = Matrix::Zero(N, q_all.cols());

    BasisLoss out;
    out.per_head.resize(H);
    Eigen::ArrayXd scratch;
    if (structured) {
        // Key pieces per head: [null | U (slot 1, n) | V (slot 2, n) | W (type, 2)].
        const Matrix u_all = ids.nodes * f.Ak.topRows(dp);
        const Matrix v_all = ids.nodes * f.Ak.middleRows(dp, dp);
        Matrix w_all = m.E * f.Ak.bottomRows(de);
        w_all.rowwise() += f.bk.row(0);
        const Eigen::Index P = 1 + 2 * n + 2;
        if (grad) dkey_all = Matrix::Zero(P, q_all.cols());
        std::vector<int> ka(Nu), kb(Nu), kt(Nu);
        for (std::size_t s = 0; s < Nu; ++s) {
            ka[s] = 1 + b.index[s][0];
            kb[s] = 1 + static_cast<int>(n) + b.index[s][1];
            kt[s] = 1 + 2 * static_cast<int>(n) + b.type[s];
        }
        Matrix pieces(P, dh), r, dr;
        std::vector<double> row(Nu + 1);
        for (std::size_t h = 0; h < H; ++h) {
            const auto c0 = static_cast<Eigen::Index>(h) * dh;
            pieces.row(0) = f.knull.middleCols(c0, dh);
            pieces.middleRows(1, n) = u_all.middleCols(c0, dh);
            pieces.middleRows(1 + n, n) = v_all.middleCols(c0, dh);
            pieces.bottomRows(2) = w_all.middleCols(c0, dh);
            r.noalias() = q_all.middleCols(c0, dh) * pieces.transpose();
            r *= inv_sqrt;
            if (grad) dr = Matrix::Zero(N, P);
            double err = 0.0;
            for (std::size_t t = 0; t < Nu; ++t) {
                const double* rr = &r(static_cast<Eigen::Index>(t), 0);
                row[0] = rr[0];
                if (dense) {
                    // Keys run over all (a, b): an outer sum plus a diagonal type correction.
                    const double* r2 = rr + 1 + n;
                    const double node = rr[1 + 2 * n], edge = rr[2 + 2 * n];
                    for (Eigen::Index a = 0; a < n; ++a) {
                        const double base = rr[1 + a] + edge;
                        double* o = &row[static_cast<std::size_t>(1 + a * n)];
                        for (Eigen::Index c = 0; c < n; ++c) o[c] = base + r2[c];
                        o[a] += node - edge;
                    }
                } else {
                    for (std::size_t s = 0; s < Nu; ++s) row[s + 1] = rr[ka[s]] + rr[kb[s]] + rr[kt[s]];
                }
                err += detail::fused_row(row.data(), static_cast<Eigen::Index>(Nu + 1), &b.pair_class[t * Nu], h,
                                         b.counts[t * 15 + h], gscale, grad, nullptr, scratch);
                if (!grad) continue;
                double* d = &dr(static_cast<Eigen::Index>(t), 0);
                d[0] += row[0];
                if (dense) {
                    double* d2 = d + 1 + n;
                    double diag = 0.0, total = 0.0;
                    for (Eigen::Index a = 0; a < n; ++a) {
                        const double* g = &row[static_cast<std::size_t>(1 + a * n)];
                        double sa = 0.0;
                        for (Eigen::Index c = 0; c < n; ++c) {
                            sa += g[c];
                            d2[c] += g[c];
                        }
                        d[1 + a] += sa;
                        diag += g[a];
                        total += sa;
                    }
                    d[1 + 2 * n] += diag;
                    d[2 + 2 * n] += total - diag;
                } else {
                    for (std::size_t s = 0; s < Nu; ++s) {
                        d[ka[s]] += row[s + 1];
                        d[kb[s]] += row[s + 1];
                        d[kt[s]] += row[s + 1];
                    }
                }
            }
            out.per_head[h] = err / norm;
            out.mean += out.per_head[h] / static_cast<double>(H);
            if (!grad) continue;
            dq_all.middleCols(c0, dh).noalias() = dr * pieces;
            dkey_all.middleCols(c0, dh).noalias() = dr.transpose() * q_all.middleCols(c0, dh);
        }
        if (grad) {
            grads->knull += dkey_all.row(0);
            grads->Ak.topRows(dp).noalias() += ids.nodes.transpose() * dkey_all.middleRows(1, n);
            grads->Ak.middleRows(dp, dp).noalias() += ids.nodes.transpose() * dkey_all.middleRows(1 + n, n);
            const auto dw = dkey_all.bottomRows(2);
            grads->bk += dw.colwise().sum();
            if (m.type_ids) {
                grads->Ak.bottomRows(de).noalias() += m.E.transpose() * dw;
                grads->E.noalias() += dw * f.Ak.bottomRows(de).transpose();
            }
        }
    } else {
        Matrix k_all = x * f.Ak;
        k_all.rowwise() += f.bk.row(0);
        if (grad) dkey_all = Matrix::Zero(N, k_all.cols());
        Matrix k(N + 1, dh), work;
        for (std::size_t h = 0; h < H; ++h) {
            const auto c0 = static_cast<Eigen::Index>(h) * dh;
            k.row(0) = f.knull.middleCols(c0, dh);
            k.bottomRows(N) = k_all.middleCols(c0, dh);
            const Matrix q = q_all.middleCols(c0, dh);
            out.per_head[h] = detail::head_loss(q, k, b, h, scale / static_cast<double>(H), work, grad);
            out.mean += out.per_head[h] / static_cast<double>(H);
            if (!grad) continue;
            dq_all.middleCols(c0, dh).noalias() = work * k;
            const Matrix dk = work.transpose() * q;
            grads->knull.middleCols(c0, dh) += dk.row(0);
            dkey_all.middleCols(c0, dh) = dk.bottomRows(N);
        }
        if (grad) {
            grads->Ak.noalias() += x.transpose() * dkey_all;
            grads->bk += dkey_all.colwise().sum();
            if (m.type_ids) {
                const Matrix dx_type = dkey_all * f.Ak.bottomRows(de).transpose();
                for (Eigen::Index t = 0; t < N; ++t) grads->E.row(b.type[static_cast<std::size_t>(t)]) += dx_type.row(t);
            }
        }
    }
    if (grad && structured) {
        Matrix dqa = Matrix::Zero(qa.rows(), qa.cols()), dqb = dqa, dqw = Matrix::Zero(2, qa.cols());
        for (std::size_t t = 0; t < Nu; ++t) {
            const auto row = dq_all.row(static_cast<Eigen::Index>(t));
            dqa.row(b.index[t][0]) += row;
            dqb.row(b.index[t][1]) += row;
            dqw.row(b.type[t]) += row;
        }
        grads->Aq.topRows(dp).noalias() += ids.nodes.transpose() * dqa;
        grads->Aq.middleRows(dp, dp).noalias() += ids.nodes.transpose() * dqb;
        grads->bq += dqw.colwise().sum();
        if (m.type_ids) {
            grads->Aq.bottomRows(de).noalias() += m.E.transpose() * dqw;
            grads->E.noalias() += dqw * f.Aq.bottomRows(de).transpose();
        }
    } else if (grad) {
        grads->Aq.noalias() += x.transpose() * dq_all;
        grads->bq += dq_all.colwise().sum();
        if (m.type_ids) {
            const Matrix dx_type = dq_all * f.Aq.bottomRows(de).transpose();
            for (Eigen::Index t = 0; t < N; ++t) grads->E.row(b.type[static_cast<std::size_t>(t)]) += dx_type.row(t);
        }
    }
    return out;
}

/// Chain folded gradients back to the model parameters (added into `g`).
inline void unfold_grads(const BasisModel& m, const FoldedGrads& fg, BasisModel& g) {
    const auto dh = static_cast<Eigen::Index>(m.d_h);
    for (std::size_t h = 0; h < m.heads(); ++h) {
        const auto c0 = static_cast<Eigen::Index>(h) * dh;
        const auto aq = fg.Aq.middleCols(c0, dh);
        const auto ak = fg.Ak.middleCols(c0, dh);
        const auto kn = fg.knull.middleCols(c0, dh);
        g.Wq[h].noalias() += m.w_in.transpose() * aq;
        g.Wk[h].noalias() += m.w_in.transpose() * ak;
        g.Wk[h].noalias() += m.null.transpose() * kn;
        g.w_in.noalias() += aq * m.Wq[h].transpose();
        g.w_in.noalias() += ak * m.Wk[h].transpose();
        g.null.noalias() += kn * m.Wk[h].transpose();
        g.bq[h] += fg.bq.middleCols(c0, dh);
        g.bk[h] += fg.bk.middleCols(c0, dh) + kn;
    }
    if (m.type_ids) g.E += fg.E;
}

/// Direct evaluation on [null; X w_in] with optional input dropout. Reference
/// for the folded path and the training path when dropout is on.
inline BasisLoss basis_loss_direct(const BasisModel& m, const BasisGraph& b, const Matrix& ids, BasisModel* grads,
                                   double scale = 1.0, double dropout = 0.0, Rng* rng = nullptr,
                                   std::vector<Matrix>* attn_out = nullptr) {
    const Matrix x = m.token_inputs(b, ids);
    const auto N = x.rows();
    const auto H = m.heads();
    Matrix z(N + 1, static_cast<Eigen::Index>(m.d));
    z.row(0) = m.null;
    z.bottomRows(N).noalias() = x * m.w_in;
    Matrix mask;
    if (dropout > 0.0) {
        require(rng != nullptr, "basis_loss_direct: dropout needs an rng");
        mask = Matrix(z.rows(), z.cols());
        for (Eigen::Index i = 0; i < mask.size(); ++i) mask(i) = rng->coin(dropout) ? 0.0 : 1.0 / (1.0 - dropout);
        z = z.cwiseProduct(mask);
    }
    BasisLoss out;
    out.per_head.resize(H);
    Matrix dz = Matrix::Zero(z.rows(), z.cols());
    Matrix work, attn;
    if (attn_out) attn_out->clear();
    for (std::size_t h = 0; h < H; ++h) {
        const Matrix q = (z.bottomRows(N) * m.Wq[h]).rowwise() + m.bq[h].row(0);
        const Matrix k = (z * m.Wk[h]).rowwise() + m.bk[h].row(0);
        const double lh = detail::head_loss(q, k, b, h, scale / static_cast<double>(H), work, grads != nullptr,
                                            attn_out ? &attn : nullptr);
        out.per_head[h] = lh;
        out.mean += lh / static_cast<double>(H);
        if (attn_out) {
            Matrix full = Matrix::Zero(N + 1, N + 1);
            full.bottomRows(N) = attn;
            attn_out->push_back(std::move(full));
        }
        if (!grads) continue;
        const Matrix dq = work * k;
        const Matrix dk = work.transpose() * q;
        grads->Wq[h].noalias() += z.bottomRows(N).transpose() * dq;
        grads->Wk[h].noalias() += z.transpose() * dk;
        grads->bq[h] += dq.colwise().sum();
        grads->bk[h] += dk.colwise().sum();
        dz.bottomRows(N).noalias() += dq * m.Wq[h].transpose();
        dz.noalias() += dk * m.Wk[h].transpose();
    }
    if (grads) {
        if (dropout > 0.0) dz = dz.cwiseProduct(mask);
        grads->null += dz.row(0);
        grads->w_in.noalias() += x.transpose() * dz.bottomRows(N);
        if (m.type_ids) {
            const Matrix dx_type = dz.bottomRows(N) * m.w_in.bottomRows(static_cast<Eigen::Index>(m.d_e)).transpose();
            for (Eigen::Index t = 0; t < N; ++t) grads->E.row(b.type[static_cast<std::size_t>(t)]) += dx_type.row(t);
        }
    }
    return out;
}

/// Full (N+1) x (N+1) attention per head; the [null] query row is left zero.
inline std::vector<Matrix> basis_attention(const BasisModel& m, const BasisGraph& b, const Matrix& ids) {
    std::vector<Matrix> attn;
    basis_loss_direct(m, b, ids, nullptr, 1.0, 0.0, nullptr, &attn);
    return attn;
}

/// Mean squared error per head between given attention and targets over supervised rows.
inline std::vector<double> basis_l2_from_attention(const std::vector<Matrix>& attn, const BasisTargets& targets) {
    require(attn.size() == targets.targets.size(), "basis_l2_from_attention: head count mismatch");
    std::vector<double> out;
    for (std::size_t h = 0; h < attn.size(); ++h) {
        double s = 0.0;
        std::size_t rows = 0;
        for (Eigen::Index t = 0; t < attn[h].rows(); ++t) {
            if (!targets.row_mask[static_cast<std::size_t>(t)]) continue;
            s += (attn[h].row(t) - targets.targets[h].row(t)).squaredNorm();
            ++rows;
        }
        out.push_back(s / (static_cast<double>(rows) * static_cast<double>(attn[h].cols())));
    }
    return out;
}

struct BasisEval {
    std::vector<double> per_head;
    double mean = 0.0;
};

/// Identifier stream for evaluation: fixed per graph, independent of training.
inline RngSeed eval_identifier_seed(RngSeed seed, std::size_t graph) {
    return derive_seed(derive_seed(seed, 0xe7a1), graph);
}

/// Mean over graphs of the per-graph head losses; no dropout, no augmentation.
/// The sum runs in graph order whatever the worker count.
inline BasisEval eval_basis_l2(const BasisModel& m, const std::vector<BasisGraph>& graphs, const SyntheticConfig& cfg,
                               std::size_t workers = 1) {
    require(!graphs.empty(), "eval_basis_l2: no graphs");
    const FoldedBasisModel f(m);
    std::vector<BasisLoss> losses(graphs.size());
    parallel_for_index(graphs.size(), workers, [&](std::size_t i) {
        Rng rng(eval_identifier_seed(cfg.seed, i));
        const auto ids = draw_identifiers(graphs[i], cfg.mode, cfg.d_p, rng, false);
        losses[i] = basis_loss_folded(m, f, graphs[i], ids, nullptr);
    });
    BasisEval out;
    out.per_head.assign(m.heads(), 0.0);
    for (const auto& l : losses)
        for (std::size_t h = 0; h < m.heads(); ++h) out.per_head[h] += l.per_head[h] / static_cast<double>(graphs.size());
    out.mean = std::accumulate(out.per_head.begin(), out.per_head.end(), 0.0) / static_cast<double>(out.per_head.size());
    return out;
}

struct TrainHistory {
    std::vector<double> loss;  // mean batch loss per step
    std::vector<double> lr;
};

struct BasisRun {
    BasisModel model;
    TrainHistory history;
};

using StepCallback = std::function<void(std::size_t step, double loss)>;

/// AdamW with linear warmup and decay on the mean-over-heads squared error.
/// Identifiers are redrawn per graph per epoch; Laplacian ones get a sign flip.
inline BasisRun train_synthetic(const SyntheticConfig& cfg, const std::vector<BasisGraph>& train,
                                const StepCallback& on_step = {}) {
    cfg.validate();
    require(!train.empty(), "train_synthetic: empty training set");
    Rng init_rng(derive_seed(cfg.seed, 0x1417));
    BasisRun run{BasisModel::init(cfg, init_rng), {}};
    BasisModel& m = run.model;
    AdamWState opt(AdamWConfig{cfg.peak_lr, 0.9, 0.999, cfg.weight_decay, 1e-8});
    Rng order_rng(derive_seed(cfg.seed, 0x0bde));
    Rng dropout_rng(derive_seed(cfg.seed, 0xd80f));
    std::vector<std::size_t> order(train.size());
    std::size_t cursor = order.size(), epoch = 0;
    const double inv_batch = 1.0 / static_cast<double>(cfg.batch);

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        BasisModel g = zero_grads_like(m);
        const FoldedBasisModel f(m);
        FoldedGrads fg(m);
        double batch_loss = 0.0;
        for (std::size_t item = 0; item < cfg.batch; ++item) {
            if (cursor == order.size()) {
                std::iota(order.begin(), order.end(), std::size_t{0});
                std::shuffle(order.begin(), order.end(), order_rng.engine());
                cursor = 0;
                ++epoch;
            }
            const std::size_t gi = order[cursor++];
            Rng id_rng(derive_seed(derive_seed(cfg.seed, 0x1d5 + gi), epoch));
            const auto ids = draw_identifiers(train[gi], cfg.mode, cfg.d_p, id_rng, true);
            const auto l = cfg.dropout > 0.0
                               ? basis_loss_direct(m, train[gi], ids.block, &g, inv_batch, cfg.dropout, &dropout_rng)
                               : basis_loss_folded(m, f, train[gi], ids, &fg, inv_batch);
            batch_loss += l.mean * inv_batch;
        }
        if (cfg.dropout == 0.0) unfold_grads(m, fg, g);
        if (!std::isfinite(batch_loss)) {
            std::ostringstream msg;
            msg << "train_synthetic: loss diverged at step " << step << " (" << cfg.label() << ", "
                << to_string(cfg.layout) << ", seed " << cfg.seed.value << ")";
            throw std::runtime_error(msg.str());
        }
        const double lr = warmup_linear_lr(step, cfg.warmup, cfg.steps, cfg.peak_lr);
        opt.config().lr = lr;
        auto params = m.parameters();
        auto grads = g.parameters();
        adamw_step(params, std::vector<const Matrix*>(grads.begin(), grads.end()), opt);
        run.history.loss.push_back(batch_loss);
        run.history.lr.push_back(lr);
        if (on_step) on_step(step, batch_loss);
    }
    return run;
}

/// Basis-tensor heads written into the learned parameterization, with [null]
/// taking every row whose query class differs from the head's query class.
/// Needs exact identifiers with d_p >= n at evaluation, and n >= 4 in the
/// dense layout so every matching query row has a qualifying key.
inline BasisModel constructed_basis_model(std::size_t d_p, double a) {
    ConstructiveConfig cfg;
    cfg.k = 2;
    cfg.d_p = d_p;
    cfg.d_e = 2;
    cfg.a = a;
    const auto types = equispaced_type_identifiers(2, 2);
    const std::size_t w0 = 2 * d_p + 2;
    const std::size_t dH = 4 * d_p + 4;
    const auto& joint = ClassTable::get(4);
    auto m = BasisModel::zeros(d_p, 2, w0 + 1, dH, joint.size(), true);
    m.E = types.E;
    m.w_in.leftCols(static_cast<Eigen::Index>(w0)).setIdentity();
    m.null(0, static_cast<Eigen::Index>(w0)) = 1.0;
    // Scores lie in [-6, 6]; the [null] key sits far above them for mismatched
    // query classes and far below for matching ones.
    const double null_margin = 8.0;
    const auto t1 = static_cast<Eigen::Index>(4 * d_p);
    for (std::size_t h = 0; h < joint.size(); ++h) {
        const auto qk = build_qk_params(cfg, joint[h], types, d_p, 0, w0);
        m.Wq[h].topRows(static_cast<Eigen::Index>(w0)) = qk.Wq;
        m.Wk[h].topRows(static_cast<Eigen::Index>(w0)) = qk.Wk;
        m.bq[h] = qk.bq;
        m.bk[h] = qk.bk;
        const int gq = ClassTable::get(2).index_of(sub_class(joint[h], 0, 2));
        RowVector knull = RowVector::Zero(static_cast<Eigen::Index>(dH));
        knull.segment(t1, 2) = -null_margin * std::sqrt(a) * types.E.row(gq);
        m.Wk[h].row(static_cast<Eigen::Index>(w0)) = knull - qk.bk.row(0);
    }
    return m;
}

inline nlohmann::json to_json(const SyntheticConfig& c) {
    return {{"layout", to_string(c.layout)}, {"mode", to_string(c.mode)},   {"type_ids", c.type_ids},
            {"d", c.d},                      {"heads", c.heads},            {"d_h", c.d_h},
            {"d_p", c.d_p},                  {"d_e", c.d_e},                {"steps", c.steps},
            {"warmup", c.warmup},            {"peak_lr", c.peak_lr},        {"weight_decay", c.weight_decay},
            {"batch", c.batch},              {"dropout", c.dropout},        {"seed", c.seed.value},
            {"train_count", c.train_count},  {"test_count", c.test_count}};
}

inline SyntheticConfig synthetic_config_from_json(const nlohmann::json& j) {
    SyntheticConfig c;
    c.layout = layout_from_string(j.at("layout").get<std::string>());
    c.mode = identifier_mode_from_string(j.at("mode").get<std::string>());
    c.type_ids = j.at("type_ids").get<bool>();
    j.at("d").get_to(c.d);
    j.at("heads").get_to(c.heads);
    j.at("d_h").get_to(c.d_h);
    j.at("d_p").get_to(c.d_p);
    j.at("d_e").get_to(c.d_e);
    j.at("steps").get_to(c.steps);
    j.at("warmup").get_to(c.warmup);
    j.at("peak_lr").get_to(c.peak_lr);
    j.at("weight_decay").get_to(c.weight_decay);
    j.at("batch").get_to(c.batch);
    j.at("dropout").get_to(c.dropout);
    j.at("seed").get_to(c.seed.value);
    j.at("train_count").get_to(c.train_count);
    j.at("test_count").get_to(c.test_count);
    return c;
}

inline nlohmann::json to_json(const BasisModel& m) {
    using detail::matrix_to_json;
    nlohmann::json heads = nlohmann::json::array();
    for (std::size_t h = 0; h < m.heads(); ++h)
        heads.push_back({{"Wq", matrix_to_json(m.Wq[h])},
                         {"Wk", matrix_to_json(m.Wk[h])},
                         {"bq", matrix_to_json(m.bq[h])},
                         {"bk", matrix_to_json(m.bk[h])}});
    return {{"d_p", m.d_p},
            {"d_e", m.d_e},
            {"d", m.d},
            {"d_h", m.d_h},
            {"type_ids", m.type_ids},
            {"w_in", matrix_to_json(m.w_in)},
            {"null", matrix_to_json(m.null)},
            {"E", matrix_to_json(m.E)},
            {"heads", std::move(heads)}};
}

inline BasisModel basis_model_from_json(const nlohmann::json& j) {
    using detail::matrix_from_json;
    const auto& hs = j.at("heads");
    auto m = BasisModel::zeros(j.at("d_p").get<std::size_t>(), j.at("d_e").get<std::size_t>(),
                               j.at("d").get<std::size_t>(), j.at("d_h").get<std::size_t>(), hs.size(),
                               j.at("type_ids").get<bool>());
    m.w_in = matrix_from_json(j.at("w_in"), m.input_width(), m.d);
    m.null = matrix_from_json(j.at("null"), 1, m.d);
    m.E = matrix_from_json(j.at("E"), 2, m.d_e);
    for (std::size_t h = 0; h < hs.size(); ++h) {
        m.Wq[h] = matrix_from_json(hs[h].at("Wq"), m.d, m.d_h);
        m.Wk[h] = matrix_from_json(hs[h].at("Wk"), m.d, m.d_h);
        m.bq[h] = matrix_from_json(hs[h].at("bq"), 1, m.d_h);
        m.bk[h] = matrix_from_json(hs[h].at("bk"), 1, m.d_h);
    }
    return m;
}

}  // namespace tokengt
