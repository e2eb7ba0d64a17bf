#pragma once

// Explicit attention parameters that reproduce equivariant basis tensors, and
// the stacked construction that reproduces a whole invariant graph network.
//
// Token layout for an order-k input with d feature channels:
//   [ X (d) | P_{i_1} .. P_{i_k} (k*d_p) | E (d_e) | reserved (bell(2k)*d) ]
// D = d + k*d_p + d_e marks the start of the reserved blocks.

#include "tokengt/attention.hpp"
#include "tokengt/equivariant.hpp"
#include "tokengt/identifiers.hpp"
#include "tokengt/tokenizer.hpp"

#include <cmath>
#include <vector>

namespace tokengt {

inline constexpr double kMaxSharpness = 1e8;

struct ConstructiveConfig {
    std::size_t k = 2;
    std::size_t d_p = 0;  // 0 means "use n"
    std::size_t d_e = 2;
    double a = 1e3;

    std::size_t identifier_width(std::size_t n) const { return d_p == 0 ? n : d_p; }
    std::size_t head_width(std::size_t n) const { return k * k * identifier_width(n) + 2 * d_e; }

    void validate(std::size_t n) const {
        require(k >= 1 && k <= 3, "ConstructiveConfig: k must be in [1, 3]");
        require(a > 0.0, "ConstructiveConfig: sharpness a must be positive");
        require(a <= kMaxSharpness, "ConstructiveConfig: sharpness above 1e8 saturates exp");
        require(identifier_width(n) >= n, "ConstructiveConfig: exact identifiers need d_p >= n");
        require(d_e >= 2, "ConstructiveConfig: d_e must be >= 2");
    }
};

/// Restricted-growth string of positions [begin, end) of `mu`, re-canonicalized.
inline EquivalenceClass sub_class(const EquivalenceClass& mu, std::size_t begin, std::size_t end) {
    return class_of(std::span<const int>(mu.rgs).subspan(begin, end - begin));
}

/// +1 iff mu puts query position a and key position l + b in the same block (0-based).
inline int sign_of(std::size_t a, std::size_t b, const EquivalenceClass& mu, std::size_t l) {
    require(a < l && l + b < mu.order(), "sign_of: position out of range");
    return mu.same_block(a, l + b) ? 1 : -1;
}

inline int sign_of(std::size_t a, std::size_t b, const EquivalenceClass& mu) {
    return sign_of(a, b, mu, mu.order() / 2);
}

/// delta(i, j; mu, eps): class-membership terms plus signed index coincidences.
inline double score(std::span<const int> i, std::span<const int> j, const EquivalenceClass& mu, double eps) {
    const std::size_t l = i.size(), k = j.size();
    require(l + k == mu.order(), "score: multi-index orders must sum to the class order");
    const auto gq = sub_class(mu, 0, l);
    const auto gk = sub_class(mu, l, l + k);
    double s = (class_of(i) == gq ? 1.0 : 1.0 - eps) + (class_of(j) == gk ? 1.0 : 1.0 - eps);
    for (std::size_t a = 0; a < l; ++a)
        for (std::size_t b = 0; b < k; ++b)
            if (i[a] == j[b]) s += sign_of(a, b, mu, l);
    return s;
}

struct HeadQK {
    Matrix Wq, Wk, bq, bk;  // d_T x d_H, d_T x d_H, 1 x d_H, 1 x d_H
};

/// Query/key projections for one head targeting class mu (order 2k).
/// `feature_width` is d and `total_width` is d_T of the token rows.
inline HeadQK build_qk_params(const ConstructiveConfig& cfg, const EquivalenceClass& mu, const TypeIdentifiers& types,
                              std::size_t d_p, std::size_t feature_width, std::size_t total_width) {
    const std::size_t k = cfg.k;
    require(mu.order() == 2 * k, "build_qk_params: class order must be 2k");
    require(types.count() == bell_number(k) && types.d_e() == cfg.d_e, "build_qk_params: type identifier shape");
    const std::size_t D = feature_width + k * d_p + cfg.d_e;
    require(total_width >= D, "build_qk_params: token width smaller than the identifier layout");
    const std::size_t dH = k * k * d_p + 2 * cfg.d_e;
    const auto dTi = static_cast<Eigen::Index>(total_width), dHi = static_cast<Eigen::Index>(dH);
    const auto dpi = static_cast<Eigen::Index>(d_p), dei = static_cast<Eigen::Index>(cfg.d_e);
    const double ra = std::sqrt(cfg.a);

    HeadQK p{Matrix::Zero(dTi, dHi), Matrix::Zero(dTi, dHi), Matrix::Zero(1, dHi), Matrix::Zero(1, dHi)};
    const auto id = Matrix::Identity(dpi, dpi);
    for (std::size_t s = 0; s < k; ++s)
        for (std::size_t r = 0; r < k; ++r) {
            const auto col = static_cast<Eigen::Index>((s * k + r) * d_p);
            const auto q_row = static_cast<Eigen::Index>(feature_width + s * d_p);
            const auto k_row = static_cast<Eigen::Index>(feature_width + r * d_p);
            p.Wq.block(q_row, col, dpi, dpi) = static_cast<double>(sign_of(s, r, mu, k)) * ra * id;
            p.Wk.block(k_row, col, dpi, dpi) = ra * id;
        }
    const auto type_row = static_cast<Eigen::Index>(feature_width + k * d_p);
    const auto t1 = static_cast<Eigen::Index>(k * k * d_p);
    const auto t2 = t1 + dei;
    const auto& classes = ClassTable::get(k);
    const int gq = classes.index_of(sub_class(mu, 0, k));
    const int gk = classes.index_of(sub_class(mu, k, 2 * k));
    // Query's own type meets the key-side bias carrying E^{gamma_Q}; the
    // query-side bias carrying E^{gamma_K} meets the key's own type.
    p.Wq.block(type_row, t1, dei, dei) = ra * Matrix::Identity(dei, dei);
    p.bk.block(0, t1, 1, dei) = ra * types.E.row(gq);
    p.Wk.block(type_row, t2, dei, dei) = ra * Matrix::Identity(dei, dei);
    p.bq.block(0, t2, 1, dei) = ra * types.E.row(gk);
    return p;
}

/// Order-k tensor augmented to the layout above, with `reserved` zero channels appended.
inline Matrix augmented_tokens(const DenseTensor& x, const NodeIdentifiers& ids, const TypeIdentifiers& types,
                               std::size_t feature_width, std::size_t reserved) {
    require(x.channels() <= feature_width, "augmented_tokens: input wider than the feature block");
    DenseTensor padded(x.order(), x.n(), feature_width);
    for (std::size_t e = 0; e < x.entries(); ++e) {
        auto src = x.entry(e);
        std::copy(src.begin(), src.end(), padded.entry(e).begin());
    }
    const Matrix xin = tokenize_dense(padded, ids, types).channel_matrix();
    Matrix out = Matrix::Zero(xin.rows(), xin.cols() + static_cast<Eigen::Index>(reserved));
    out.leftCols(xin.cols()) = xin;
    return out;
}

/// Row-normalized B^mu over [n]^k x [n]^k; zero-support rows stay zero.
inline Matrix normalized_basis(const EquivalenceClass& mu, std::size_t n) {
    const std::size_t k = mu.order() / 2;
    const std::size_t N = DenseTensor::ipow(n, k);
    DenseTensor shape(k, n, 1);
    Matrix b = Matrix::Zero(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N));
    std::vector<int> ij(2 * k);
    for (std::size_t i = 0; i < N; ++i) {
        const auto ii = shape.multi_index(i);
        for (std::size_t j = 0; j < N; ++j) {
            const auto jj = shape.multi_index(j);
            std::copy(ii.begin(), ii.end(), ij.begin());
            std::copy(jj.begin(), jj.end(), ij.begin() + static_cast<std::ptrdiff_t>(k));
            if (class_of(ij) == mu) b(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 1.0;
        }
        const double s = b.row(static_cast<Eigen::Index>(i)).sum();
        if (s > 0) b.row(static_cast<Eigen::Index>(i)) /= s;
    }
    return b;
}

/// Attention of the constructed head for class mu on dense tokens of order k.
inline Matrix constructed_attention(std::size_t n, const EquivalenceClass& mu, const ConstructiveConfig& cfg,
                                    const NodeIdentifiers& ids, const TypeIdentifiers& types) {
    const std::size_t k = cfg.k;
    const std::size_t feature_width = 1;
    const Matrix tokens = augmented_tokens(DenseTensor(k, n, feature_width), ids, types, feature_width, 0);
    const auto qk = build_qk_params(cfg, mu, types, ids.d_p(), feature_width, static_cast<std::size_t>(tokens.cols()));
    const Matrix q = (tokens * qk.Wq).rowwise() + qk.bq.row(0);
    const Matrix kk = (tokens * qk.Wk).rowwise() + qk.bk.row(0);
    return softmax_rows((q * kk.transpose()) / std::sqrt(static_cast<double>(qk.Wq.cols())));
}

/// max over rows with non-empty support of |alpha - normalized B^mu|.
inline double verify_lemma1(std::size_t n, const EquivalenceClass& mu, const ConstructiveConfig& cfg,
                            const NodeIdentifiers& ids) {
    require(cfg.a > 0.0 && cfg.a <= kMaxSharpness, "verify_lemma1: sharpness out of range");
    require(ids.n() == n, "verify_lemma1: identifier rows must equal n");
    const auto types = equispaced_type_identifiers(cfg.k, cfg.d_e);
    const Matrix alpha = constructed_attention(n, mu, cfg, ids, types);
    const Matrix target = normalized_basis(mu, n);
    double err = 0.0;
    for (Eigen::Index i = 0; i < target.rows(); ++i) {
        if (target.row(i).sum() == 0.0) continue;
        err = std::max(err, (alpha.row(i) - target.row(i)).cwiseAbs().maxCoeff());
    }
    return err;
}

inline double verify_lemma1(std::size_t n, const EquivalenceClass& mu, const ConstructiveConfig& cfg) {
    return verify_lemma1(n, mu, cfg, exact_orthonormal_identifiers(n, cfg.identifier_width(n)));
}

// ---------------------------------------------------------------------------
// Denormalization

/// g(gamma, mu): number of keys j completing any query i of order-k class gamma
/// to (i, j) in mu. Zero when mu's query part is not gamma.
inline std::size_t completing_keys(const EquivalenceClass& gamma, const EquivalenceClass& mu, std::size_t n) {
    const std::size_t k = gamma.order();
    require(mu.order() == 2 * k, "completing_keys: class order must be 2k");
    if (sub_class(mu, 0, k) != gamma) return 0;
    int query_blocks = 0, key_only = 0;
    std::vector<char> seen(2 * k, 0);
    for (std::size_t p = 0; p < k; ++p) seen[static_cast<std::size_t>(mu.rgs[p])] = 1;
    for (char s : seen) query_blocks += s;
    std::vector<char> fresh(2 * k, 0);
    for (std::size_t p = k; p < 2 * k; ++p) {
        const auto b = static_cast<std::size_t>(mu.rgs[p]);
        if (!seen[b] && !fresh[b]) {
            fresh[b] = 1;
            ++key_only;
        }
    }
    if (static_cast<std::size_t>(query_blocks) > n) return 0;
    std::size_t count = 1;
    for (int f = 0; f < key_only; ++f) {
        const auto avail = static_cast<long long>(n) - query_blocks - f;
        if (avail <= 0) return 0;
        count *= static_cast<std::size_t>(avail);
    }
    return count;
}

/// bell(k) x bell(2k) table of completing-key counts.
inline std::vector<std::vector<std::size_t>> row_sum_table(std::size_t k, std::size_t n) {
    const auto& qc = ClassTable::get(k);
    const auto& jc = ClassTable::get(2 * k);
    std::vector<std::vector<std::size_t>> g(qc.size(), std::vector<std::size_t>(jc.size()));
    for (std::size_t c = 0; c < qc.size(); ++c)
        for (std::size_t h = 0; h < jc.size(); ++h) g[c][h] = completing_keys(qc[c], jc[h], n);
    return g;
}

/// Same table by enumerating every (i, j); rows for classes absent at this n are zero.
inline std::vector<std::vector<std::size_t>> row_sum_table_bruteforce(std::size_t k, std::size_t n) {
    const auto& qc = ClassTable::get(k);
    const auto& jc = ClassTable::get(2 * k);
    std::vector<std::vector<std::size_t>> g(qc.size(), std::vector<std::size_t>(jc.size(), 0));
    std::vector<char> filled(qc.size(), 0);
    DenseTensor shape(k, n, 1);
    std::vector<int> ij(2 * k);
    for (std::size_t i = 0; i < shape.entries(); ++i) {
        const auto ii = shape.multi_index(i);
        const auto c = static_cast<std::size_t>(qc.index_of_multi_index(ii));
        if (filled[c]) continue;
        filled[c] = 1;
        std::copy(ii.begin(), ii.end(), ij.begin());
        for (std::size_t j = 0; j < shape.entries(); ++j) {
            const auto jj = shape.multi_index(j);
            std::copy(jj.begin(), jj.end(), ij.begin() + static_cast<std::ptrdiff_t>(k));
            ++g[c][static_cast<std::size_t>(jc.index_of_multi_index(ij))];
        }
    }
    return g;
}

/// Class deduction and per-class constants shared by the tokenwise functions.
struct DenormalizerContext {
    std::size_t n = 0, k = 0, d = 0, d_p = 0, d_e = 0;
    Matrix E;                                       // type identifiers
    std::vector<std::vector<std::size_t>> g;        // [query class][head]
    std::vector<RowVector> bias;                    // per order-k class, width d

    std::size_t D() const { return d + k * d_p + d_e; }
    std::size_t heads() const { return g.empty() ? 0 : g.front().size(); }

    /// Class index read from the type-identifier slot by nearest dot product.
    std::size_t deduce_class(const RowVector& h) const {
        const RowVector t = h.segment(static_cast<Eigen::Index>(d + k * d_p), static_cast<Eigen::Index>(d_e));
        Eigen::Index best = 0;
        (E * t.transpose()).maxCoeff(&best);
        return static_cast<std::size_t>(best);
    }

    /// F = sum_h g_h * (head h block) + b_gamma, over the first d channels.
    RowVector combine(const RowVector& h, std::size_t cls) const {
        RowVector f = bias[cls];
        for (std::size_t head = 0; head < heads(); ++head) {
            const auto gh = static_cast<double>(g[cls][head]);
            if (gh != 0.0) f += gh * h.segment(static_cast<Eigen::Index>(D() + head * d), static_cast<Eigen::Index>(d));
        }
        return f;
    }
};

/// Tokenwise f: first d channels become sigma(F) (or F), identifiers are kept,
/// reserved blocks are cleared.
inline TokenwiseFunction make_layer_mlp(std::shared_ptr<const DenormalizerContext> ctx, Activation act,
                                        bool apply_activation) {
    return [ctx, act, apply_activation](const RowVector& h) {
        const auto d = static_cast<Eigen::Index>(ctx->d);
        const auto D = static_cast<Eigen::Index>(ctx->D());
        RowVector out = -h;
        RowVector f = ctx->combine(h, ctx->deduce_class(h));
        if (apply_activation)
            for (Eigen::Index j = 0; j < d; ++j) f(j) = activate(act, f(j));
        out.head(d) += f;
        out.segment(d, D - d).setZero();
        return out;
    };
}

/// Tokenwise f': everything cleared except block D + a*d of the token's own
/// class a, which receives F.
inline TokenwiseFunction make_gating_mlp(std::shared_ptr<const DenormalizerContext> ctx, bool passthrough) {
    return [ctx, passthrough](const RowVector& h) {
        const auto d = static_cast<Eigen::Index>(ctx->d);
        const auto D = static_cast<Eigen::Index>(ctx->D());
        RowVector out = -h;
        const std::size_t cls = ctx->deduce_class(h);
        const RowVector f = passthrough ? RowVector(h.head(d)) : ctx->combine(h, cls);
        out.segment(D + static_cast<Eigen::Index>(cls) * d, d) += f;
        return out;
    };
}

struct ConstructedLayer {
    TransformerLayerParams layer;
    Matrix w_in;   // D x d_T
    Matrix w_out;  // d_T x d
    std::shared_ptr<const DenormalizerContext> context;
    std::size_t D = 0, d_T = 0;
};

namespace detail {
inline Matrix pad_matrix(const Matrix& m, std::size_t rows, std::size_t cols) {
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    out.topLeftCorner(m.rows(), m.cols()) = m;
    return out;
}

inline RowVector pad_row(const RowVector& v, std::size_t size) {
    RowVector out = RowVector::Zero(static_cast<Eigen::Index>(size));
    out.head(v.size()) = v;
    return out;
}

inline std::shared_ptr<DenormalizerContext> make_context(std::size_t n, std::size_t k, std::size_t d, std::size_t d_p,
                                                         const TypeIdentifiers& types) {
    auto ctx = std::make_shared<DenormalizerContext>();
    ctx->n = n;
    ctx->k = k;
    ctx->d = d;
    ctx->d_p = d_p;
    ctx->d_e = types.d_e();
    ctx->E = types.E;
    ctx->g = row_sum_table(k, n);
    if (n <= 5 && ctx->g != row_sum_table_bruteforce(k, n))
        throw std::logic_error("row_sum_table: combinatorial count disagrees with enumeration");
    ctx->bias.assign(bell_number(k), RowVector::Zero(static_cast<Eigen::Index>(d)));
    return ctx;
}

/// MSA with bell(2k) constructed heads. Head h routes X_j w_{mu_h} into reserved block h.
inline MSAParams constructed_msa(const ConstructiveConfig& cfg, const TypeIdentifiers& types, std::size_t d_p,
                                 std::size_t d, std::size_t d_T, const std::vector<Matrix>& head_weights) {
    const auto& joint = ClassTable::get(2 * cfg.k);
    const std::size_t D = d + cfg.k * d_p + cfg.d_e;
    const std::size_t dH = cfg.k * cfg.k * d_p + 2 * cfg.d_e;
    MSAParams m = MSAParams::zeros(joint.size(), d_T, dH, d);
    for (std::size_t h = 0; h < joint.size(); ++h) {
        const auto qk = build_qk_params(cfg, joint[h], types, d_p, d, d_T);
        m.Wq[h] = qk.Wq;
        m.Wk[h] = qk.Wk;
        m.bq[h] = qk.bq;
        m.bk[h] = qk.bk;
        m.Wv[h].topRows(static_cast<Eigen::Index>(d)).setIdentity();
        m.Wo[h].block(0, static_cast<Eigen::Index>(D + h * d), static_cast<Eigen::Index>(d),
                      static_cast<Eigen::Index>(d)) = head_weights[h];
    }
    return m;
}
}  // namespace detail

/// Transformer layer reproducing L_{k->k} on n-node inputs. Weights narrower
/// than `width` are zero-padded; width 0 means max(d_in, d_out).
inline ConstructedLayer build_layer_for_equivariant(const EquivariantLayerParams& p, const ConstructiveConfig& cfg,
                                                    std::size_t n, std::size_t width = 0, bool absorb_activation = false,
                                                    Activation act = Activation::Relu) {
    p.validate();
    cfg.validate(n);
    require(p.k == cfg.k && p.l == cfg.k, "build_layer_for_equivariant: layer must be k -> k");
    const std::size_t d = width == 0 ? std::max(p.d_in, p.d_out) : width;
    require(d >= p.d_in && d >= p.d_out, "build_layer_for_equivariant: width below layer widths");
    const std::size_t d_p = cfg.identifier_width(n);
    const auto types = equispaced_type_identifiers(cfg.k, cfg.d_e);
    const std::size_t heads = bell_number(2 * cfg.k);
    const std::size_t D = d + cfg.k * d_p + cfg.d_e;
    const std::size_t d_T = D + heads * d;

    std::vector<Matrix> hw;
    for (const auto& w : p.weights) hw.push_back(detail::pad_matrix(w, d, d));
    auto ctx = detail::make_context(n, cfg.k, d, d_p, types);
    for (std::size_t c = 0; c < p.biases.size(); ++c) ctx->bias[c] = detail::pad_row(p.biases[c], d);

    ConstructedLayer out;
    out.layer.msa = detail::constructed_msa(cfg, types, d_p, d, d_T, hw);
    out.layer.norm_mode = NormMode::None;
    out.layer.exact_mlp = make_layer_mlp(ctx, act, absorb_activation);
    out.context = ctx;
    out.D = D;
    out.d_T = d_T;
    out.w_in = detail::pad_matrix(Matrix::Identity(static_cast<Eigen::Index>(D), static_cast<Eigen::Index>(D)), D, d_T);
    out.w_out = detail::pad_matrix(Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)), d_T, d);
    return out;
}

/// Token rows X' = X^in w_in for the constructed layer.
inline Matrix constructed_input(const DenseTensor& x, const ConstructedLayer& c) {
    const auto& ctx = *c.context;
    const auto ids = exact_orthonormal_identifiers(x.n(), ctx.d_p);
    TypeIdentifiers types{ctx.E, false};
    return augmented_tokens(x, ids, types, ctx.d, 0) * c.w_in;
}

/// max |T(X') w_out - L(x)| over entries and channels.
inline double verify_theorem2(const DenseTensor& x, const EquivariantLayerParams& p, const ConstructiveConfig& cfg) {
    const auto built = build_layer_for_equivariant(p, cfg, x.n());
    const Matrix y = transformer_layer_forward(constructed_input(x, built), built.layer) * built.w_out;
    const Matrix oracle = equivariant_linear_apply(p, x).as_matrix();
    return (y.leftCols(oracle.cols()) - oracle).cwiseAbs().maxCoeff();
}

inline double oracle_scale(const DenseTensor& x, const EquivariantLayerParams& p) {
    return equivariant_linear_apply(p, x).as_matrix().cwiseAbs().maxCoeff();
}

/// Stacked layers, sum-pool and closed-form readout reproducing an IGN.
struct ConstructedIGN {
    std::vector<ConstructedLayer> layers;
    IGNSpec spec;
    std::size_t d = 0, D = 0, d_T = 0, n = 0;

    /// f'': MLP_k(sum_a X^a w_{mu_a} + b_f) over the pooled reserved blocks.
    RowVector readout(const RowVector& pooled) const {
        RowVector z = spec.head.biases.front();
        for (std::size_t a = 0; a < spec.head.weights.size(); ++a) {
            const RowVector block = pooled.segment(static_cast<Eigen::Index>(D + a * d),
                                                   static_cast<Eigen::Index>(spec.head.d_in));
            z += block * spec.head.weights[a];
        }
        return mlp_forward(spec.mlp, spec.activation, z);
    }

    RowVector forward(const DenseTensor& x) const {
        require(x.n() == n && x.order() == spec.k, "ConstructedIGN: input does not match construction");
        const auto& first = layers.front();
        Matrix h = constructed_input(x, first);
        for (const auto& l : layers) h = transformer_layer_forward(h, l.layer);
        return readout(h.colwise().sum());
    }
};

inline ConstructedIGN build_ign_transformer(const IGNSpec& spec, const ConstructiveConfig& cfg, std::size_t n) {
    spec.validate();
    cfg.validate(n);
    require(spec.k == cfg.k, "build_ign_transformer: spec order must equal cfg.k");
    std::size_t d = spec.input_width();
    for (const auto& l : spec.layers) d = std::max({d, l.d_in, l.d_out});
    d = std::max(d, spec.head.d_in);

    ConstructedIGN out;
    out.spec = spec;
    out.d = d;
    out.n = n;
    const std::size_t T = spec.layers.size();
    if (T == 0) {
        // Gating-only layer: attention contributes nothing, f' routes X itself.
        auto base = build_layer_for_equivariant(EquivariantLayerParams::zeros(cfg.k, cfg.k, d, d), cfg, n, d);
        for (auto& w : base.layer.msa.Wo) w.setZero();
        base.layer.exact_mlp = make_gating_mlp(base.context, true);
        out.layers.push_back(std::move(base));
    }
    for (std::size_t t = 0; t < T; ++t) {
        const bool last = t + 1 == T;
        auto built = build_layer_for_equivariant(spec.layers[t], cfg, n, d, !last, spec.activation);
        if (last) built.layer.exact_mlp = make_gating_mlp(built.context, false);
        out.layers.push_back(std::move(built));
    }
    out.D = out.layers.front().D;
    out.d_T = out.layers.front().d_T;
    return out;
}

/// |pipeline(x) - ign_forward(spec, x)| per output channel.
inline RowVector verify_theorem3(const DenseTensor& x, const IGNSpec& spec, const ConstructiveConfig& cfg) {
    const auto built = build_ign_transformer(spec, cfg, x.n());
    return (built.forward(x) - ign_forward(spec, x)).cwiseAbs();
}

}  // namespace tokengt
