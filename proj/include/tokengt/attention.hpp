#pragma once

#include "tokengt/graphs.hpp"
#include "tokengt/numerics.hpp"
#include "tokengt/tokenizer.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <ostream>
#include <vector>

namespace tokengt {

/// Per-head projections. Biases are 1 x d_H matrices so they can be fed to the
/// optimizer alongside the weights.
struct MSAParams {
    std::size_t H = 1, d = 1, d_H = 1, d_v = 1;
    std::vector<Matrix> Wq, Wk, Wv, Wo;  // d x d_H, d x d_H, d x d_v, d_v x d
    std::vector<Matrix> bq, bk;          // 1 x d_H

    static MSAParams zeros(std::size_t H, std::size_t d, std::size_t d_H, std::size_t d_v) {
        MSAParams p{H, d, d_H, d_v, {}, {}, {}, {}, {}, {}};
        p.Wq.assign(H, Matrix::Zero(d, d_H));
        p.Wk.assign(H, Matrix::Zero(d, d_H));
        p.Wv.assign(H, Matrix::Zero(d, d_v));
        p.Wo.assign(H, Matrix::Zero(d_v, d));
        p.bq.assign(H, Matrix::Zero(1, d_H));
        p.bk.assign(H, Matrix::Zero(1, d_H));
        return p;
    }

    static MSAParams random(std::size_t H, std::size_t d, std::size_t d_H, std::size_t d_v, Rng& rng,
                            double scale = -1.0) {
        const double s = scale > 0 ? scale : 1.0 / std::sqrt(static_cast<double>(d));
        auto p = zeros(H, d, d_H, d_v);
        for (std::size_t h = 0; h < H; ++h) {
            p.Wq[h] = gaussian_matrix(d, d_H, rng) * s;
            p.Wk[h] = gaussian_matrix(d, d_H, rng) * s;
            p.Wv[h] = gaussian_matrix(d, d_v, rng) * s;
            p.Wo[h] = gaussian_matrix(d_v, d, rng) / std::sqrt(static_cast<double>(d_v * H));
        }
        return p;
    }

    void validate() const {
        require(H >= 1, "MSAParams: H must be >= 1");
        require(Wq.size() == H && Wk.size() == H && Wv.size() == H && Wo.size() == H && bq.size() == H &&
                    bk.size() == H,
                "MSAParams: per-head parameter count must equal H");
        const auto di = static_cast<Eigen::Index>(d), dh = static_cast<Eigen::Index>(d_H),
                   dv = static_cast<Eigen::Index>(d_v);
        for (std::size_t h = 0; h < H; ++h) {
            require(Wq[h].rows() == di && Wq[h].cols() == dh, "MSAParams: Wq shape");
            require(Wk[h].rows() == di && Wk[h].cols() == dh, "MSAParams: Wk shape");
            require(Wv[h].rows() == di && Wv[h].cols() == dv, "MSAParams: Wv shape");
            require(Wo[h].rows() == dv && Wo[h].cols() == di, "MSAParams: Wo shape");
            require(bq[h].rows() == 1 && bq[h].cols() == dh, "MSAParams: bq shape");
            require(bk[h].rows() == 1 && bk[h].cols() == dh, "MSAParams: bk shape");
        }
    }
};

struct MSAResult {
    Matrix out;                // N x d
    std::vector<Matrix> attn;  // H of N x N
};

inline Matrix attention_logits(const Matrix& x, const MSAParams& p, std::size_t h) {
    const Matrix q = (x * p.Wq[h]).rowwise() + p.bq[h].row(0);
    const Matrix k = (x * p.Wk[h]).rowwise() + p.bk[h].row(0);
    return (q * k.transpose()) / std::sqrt(static_cast<double>(p.d_H));
}

inline MSAResult msa_forward(const Matrix& x, const MSAParams& p) {
    p.validate();
    require(x.cols() == static_cast<Eigen::Index>(p.d), "msa_forward: input width must equal d");
    MSAResult r{Matrix::Zero(x.rows(), x.cols()), {}};
    r.attn.reserve(p.H);
    for (std::size_t h = 0; h < p.H; ++h) {
        r.attn.push_back(softmax_rows(attention_logits(x, p, h)));
        r.out.noalias() += r.attn.back() * ((x * p.Wv[h]) * p.Wo[h]);
    }
    return r;
}

enum class NormMode { None, Pre };

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }
inline double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

/// Tokenwise closed-form replacement for the learned MLP.
using TokenwiseFunction = std::function<RowVector(const RowVector&)>;

struct TransformerLayerParams {
    MSAParams msa;
    // Learned MLP: gelu(H W1 + b1) W2 + b2.
    Matrix W1, b1, W2, b2;
    TokenwiseFunction exact_mlp;
    NormMode norm_mode = NormMode::None;
    Matrix ln1_g, ln1_b, ln2_g, ln2_b;  // 1 x d, used when norm_mode == Pre

    bool uses_exact_mlp() const { return static_cast<bool>(exact_mlp); }

    static TransformerLayerParams random(std::size_t H, std::size_t d, std::size_t d_H, std::size_t d_F,
                                         NormMode norm, Rng& rng) {
        TransformerLayerParams t;
        t.msa = MSAParams::random(H, d, d_H, d_H, rng);
        t.W1 = gaussian_matrix(d, d_F, rng) / std::sqrt(static_cast<double>(d));
        t.b1 = Matrix::Zero(1, d_F);
        t.W2 = gaussian_matrix(d_F, d, rng) / std::sqrt(static_cast<double>(d_F));
        t.b2 = Matrix::Zero(1, d);
        t.norm_mode = norm;
        t.ln1_g = Matrix::Ones(1, d);
        t.ln1_b = Matrix::Zero(1, d);
        t.ln2_g = Matrix::Ones(1, d);
        t.ln2_b = Matrix::Zero(1, d);
        return t;
    }

    void validate() const {
        msa.validate();
        if (uses_exact_mlp()) return;
        const auto d = static_cast<Eigen::Index>(msa.d);
        require(W1.rows() == d && b1.rows() == 1 && b1.cols() == W1.cols() && W2.rows() == W1.cols() &&
                    W2.cols() == d && b2.rows() == 1 && b2.cols() == d,
                "TransformerLayerParams: MLP shapes do not chain");
        if (norm_mode == NormMode::Pre)
            require(ln1_g.cols() == d && ln1_b.cols() == d && ln2_g.cols() == d && ln2_b.cols() == d,
                    "TransformerLayerParams: norm parameter shapes");
    }
};

struct LayerNormCache {
    Matrix xhat;    // normalized input
    Vector inv_std;
};

inline Matrix layer_norm(const Matrix& x, const Matrix& g, const Matrix& b, LayerNormCache* cache = nullptr,
                         double eps = 1e-5) {
    const auto n = x.rows();
    const auto d = static_cast<double>(x.cols());
    Matrix xhat(n, x.cols());
    Vector inv_std(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mean = x.row(i).mean();
        const double var = (x.row(i).array() - mean).square().sum() / d;
        inv_std(i) = 1.0 / std::sqrt(var + eps);
        xhat.row(i) = (x.row(i).array() - mean) * inv_std(i);
    }
    Matrix y = (xhat.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
    if (cache) *cache = {std::move(xhat), std::move(inv_std)};
    return y;
}

/// Returns dx; accumulates dg, db.
inline Matrix layer_norm_backward(const LayerNormCache& c, const Matrix& g, const Matrix& dy, Matrix& dg,
                                  Matrix& db) {
    dg.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
    db.row(0) += dy.colwise().sum();
    const Matrix dxhat = dy.array().rowwise() * g.row(0).array();
    Matrix dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const double m1 = dxhat.row(i).mean();
        const double m2 = (dxhat.row(i).array() * c.xhat.row(i).array()).mean();
        dx.row(i) = (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2) * c.inv_std(i);
    }
    return dx;
}

struct LayerCache {
    Matrix x, msa_in, h, mlp_in, u, act;
    LayerNormCache ln1, ln2;
    std::vector<Matrix> q, k, v, attn, ctx;  // per head; ctx = attn * v
};

/// H = X + MSA(X); out = H + MLP(H), with pre-normalization when requested.
inline Matrix transformer_layer_forward(const Matrix& x, const TransformerLayerParams& p, LayerCache* cache = nullptr,
                                        std::vector<Matrix>* attn_out = nullptr) {
    p.validate();
    require(x.cols() == static_cast<Eigen::Index>(p.msa.d), "transformer_layer_forward: width mismatch");
    const bool pre = p.norm_mode == NormMode::Pre;
    LayerCache local;
    LayerCache& c = cache ? *cache : local;
    c.x = x;
    c.msa_in = pre ? layer_norm(x, p.ln1_g, p.ln1_b, &c.ln1) : x;
    const auto& m = p.msa;
    c.q.resize(m.H);
    c.k.resize(m.H);
    c.v.resize(m.H);
    c.attn.resize(m.H);
    c.ctx.resize(m.H);
    Matrix msa_out = Matrix::Zero(x.rows(), x.cols());
    const double scale = 1.0 / std::sqrt(static_cast<double>(m.d_H));
    for (std::size_t h = 0; h < m.H; ++h) {
        c.q[h] = (c.msa_in * m.Wq[h]).rowwise() + m.bq[h].row(0);
        c.k[h] = (c.msa_in * m.Wk[h]).rowwise() + m.bk[h].row(0);
        c.v[h] = c.msa_in * m.Wv[h];
        c.attn[h] = softmax_rows((c.q[h] * c.k[h].transpose()) * scale);
        c.ctx[h] = c.attn[h] * c.v[h];
        msa_out.noalias() += c.ctx[h] * m.Wo[h];
    }
    if (attn_out) *attn_out = c.attn;
    c.h = x + msa_out;

    if (p.uses_exact_mlp()) {
        Matrix out = c.h;
        for (Eigen::Index i = 0; i < out.rows(); ++i) {
            const RowVector hi = c.h.row(i);
            const RowVector fi = p.exact_mlp(hi);
            require(fi.size() == hi.size(), "exact_mlp: output width must equal input width");
            out.row(i) += fi;
        }
        return out;
    }
    c.mlp_in = pre ? layer_norm(c.h, p.ln2_g, p.ln2_b, &c.ln2) : c.h;
    c.u = (c.mlp_in * p.W1).rowwise() + p.b1.row(0);
    c.act = c.u.unaryExpr([](double v) { return gelu(v); });
    return c.h + ((c.act * p.W2).rowwise() + p.b2.row(0));
}

/// Gradients of the learned layer parameters; same shapes as TransformerLayerParams.
struct LayerGrads {
    MSAParams msa;
    Matrix W1, b1, W2, b2, ln1_g, ln1_b, ln2_g, ln2_b;

    static LayerGrads zeros_like(const TransformerLayerParams& p) {
        LayerGrads g;
        g.msa = MSAParams::zeros(p.msa.H, p.msa.d, p.msa.d_H, p.msa.d_v);
        g.W1 = Matrix::Zero(p.W1.rows(), p.W1.cols());
        g.b1 = Matrix::Zero(1, p.b1.cols());
        g.W2 = Matrix::Zero(p.W2.rows(), p.W2.cols());
        g.b2 = Matrix::Zero(1, p.b2.cols());
        const auto d = static_cast<Eigen::Index>(p.msa.d);
        g.ln1_g = Matrix::Zero(1, d);
        g.ln1_b = Matrix::Zero(1, d);
        g.ln2_g = Matrix::Zero(1, d);
        g.ln2_b = Matrix::Zero(1, d);
        return g;
    }
};

/// Reverse pass through softmax and the bilinear logit map for one head.
/// Accumulates into dWq, dWk, dbq, dbk and dx.
inline void score_backward(const Matrix& x, const Matrix& q, const Matrix& k, const Matrix& attn,
                           const Matrix& d_attn, const Matrix& Wq, const Matrix& Wk, Matrix& dWq, Matrix& dWk,
                           Matrix& dbq, Matrix& dbk, Matrix& dx) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    const Vector row_dot = (attn.array() * d_attn.array()).rowwise().sum();
    const Matrix dS = attn.array() * (d_attn.array().colwise() - row_dot.array());
    const Matrix dQ = (dS * k) * scale;
    const Matrix dK = (dS.transpose() * q) * scale;
    dWq.noalias() += x.transpose() * dQ;
    dWk.noalias() += x.transpose() * dK;
    dbq.row(0) += dQ.colwise().sum();
    dbk.row(0) += dK.colwise().sum();
    dx.noalias() += dQ * Wq.transpose();
    dx.noalias() += dK * Wk.transpose();
}

/// Backward of transformer_layer_forward for the learned path. Accumulates
/// parameter gradients into `g` and returns dL/dx.
inline Matrix transformer_layer_backward(const TransformerLayerParams& p, const LayerCache& c, const Matrix& dout,
                                         LayerGrads& g) {
    require(!p.uses_exact_mlp(), "transformer_layer_backward: exact_mlp layers are not differentiable");
    const bool pre = p.norm_mode == NormMode::Pre;
    // out = h + act W2 + b2
    Matrix dh = dout;
    g.W2.noalias() += c.act.transpose() * dout;
    g.b2.row(0) += dout.colwise().sum();
    Matrix du = dout * p.W2.transpose();
    du.array() *= c.u.unaryExpr([](double v) { return gelu_grad(v); }).array();
    g.W1.noalias() += c.mlp_in.transpose() * du;
    g.b1.row(0) += du.colwise().sum();
    const Matrix dmlp_in = du * p.W1.transpose();
    dh += pre ? layer_norm_backward(c.ln2, p.ln2_g, dmlp_in, g.ln2_g, g.ln2_b) : dmlp_in;

    // h = x + sum_h ctx_h Wo_h
    Matrix dx = dh;
    Matrix dmsa_in = Matrix::Zero(c.msa_in.rows(), c.msa_in.cols());
    const auto& m = p.msa;
    for (std::size_t h = 0; h < m.H; ++h) {
        g.msa.Wo[h].noalias() += c.ctx[h].transpose() * dh;
        const Matrix dctx = dh * m.Wo[h].transpose();
        const Matrix dattn = dctx * c.v[h].transpose();
        const Matrix dv = c.attn[h].transpose() * dctx;
        g.msa.Wv[h].noalias() += c.msa_in.transpose() * dv;
        dmsa_in.noalias() += dv * m.Wv[h].transpose();
        score_backward(c.msa_in, c.q[h], c.k[h], c.attn[h], dattn, m.Wq[h], m.Wk[h], g.msa.Wq[h], g.msa.Wk[h],
                       g.msa.bq[h], g.msa.bk[h], dmsa_in);
    }
    dx += pre ? layer_norm_backward(c.ln1, p.ln1_g, dmsa_in, g.ln1_g, g.ln1_b) : dmsa_in;
    return dx;
}

struct ScoreGradients {
    std::vector<Matrix> dWq, dWk, dbq, dbk;
    Matrix dx;
};

/// Gradients of sum_h <upstream_h, alpha_h> with respect to the score-path
/// parameters and the input.
inline ScoreGradients attention_score_gradients(const Matrix& x, const MSAParams& p,
                                                const std::vector<Matrix>& upstream) {
    p.validate();
    require(x.cols() == static_cast<Eigen::Index>(p.d), "attention_score_gradients: input width must equal d");
    require(upstream.size() == p.H, "attention_score_gradients: need one upstream matrix per head");
    const auto N = x.rows();
    ScoreGradients g;
    g.dx = Matrix::Zero(N, x.cols());
    for (std::size_t h = 0; h < p.H; ++h) {
        require(upstream[h].rows() == N && upstream[h].cols() == N,
                "attention_score_gradients: upstream must be N x N");
        const Matrix q = (x * p.Wq[h]).rowwise() + p.bq[h].row(0);
        const Matrix k = (x * p.Wk[h]).rowwise() + p.bk[h].row(0);
        const Matrix attn = softmax_rows((q * k.transpose()) / std::sqrt(static_cast<double>(p.d_H)));
        g.dWq.push_back(Matrix::Zero(p.Wq[h].rows(), p.Wq[h].cols()));
        g.dWk.push_back(Matrix::Zero(p.Wk[h].rows(), p.Wk[h].cols()));
        g.dbq.push_back(Matrix::Zero(1, p.bq[h].cols()));
        g.dbk.push_back(Matrix::Zero(1, p.bk[h].cols()));
        score_backward(x, q, k, attn, upstream[h], p.Wq[h], p.Wk[h], g.dWq[h], g.dWk[h], g.dbq[h], g.dbk[h], g.dx);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Attention distance

/// Anchor nodes of a token: its node, or the distinct endpoints of an (hyper)edge.
inline std::vector<int> token_anchors(const Token& t) {
    std::vector<int> a;
    for (int v : t.multi_index)
        if (std::find(a.begin(), a.end(), v) == a.end()) a.push_back(v);
    return a;
}

/// Hop distance between two tokens: mean over anchor pairs; infinite if any pair is unreachable.
inline double token_distance(const Token& a, const Token& b, const Matrix& hops) {
    const auto aa = token_anchors(a), bb = token_anchors(b);
    double sum = 0.0;
    for (int u : aa)
        for (int v : bb) {
            const double dist = hops(u, v);
            if (!std::isfinite(dist)) return kUnreachable;
            sum += dist;
        }
    return sum / static_cast<double>(aa.size() * bb.size());
}

/// Per-head mean over query tokens of the attention-weighted hop distance.
/// Special tokens and unreachable pairs are dropped and the remaining weights renormalized.
inline std::vector<double> attention_distance(const std::vector<Matrix>& attn, const TokenSequence& ts,
                                              const Matrix& hops) {
    const auto N = static_cast<Eigen::Index>(ts.size());
    require(hops.rows() == static_cast<Eigen::Index>(ts.n) && hops.cols() == hops.rows(),
            "attention_distance: hop matrix must be n x n");
    Matrix dist = Matrix::Constant(N, N, kUnreachable);
    for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index j = 0; j < N; ++j) {
            const auto& ti = ts.tokens[static_cast<std::size_t>(i)];
            const auto& tj = ts.tokens[static_cast<std::size_t>(j)];
            if (!is_special(ti.kind) && !is_special(tj.kind)) dist(i, j) = token_distance(ti, tj, hops);
        }
    std::vector<double> out;
    for (const auto& a : attn) {
        require(a.rows() == N && a.cols() == N, "attention_distance: attention must be N x N");
        double total = 0.0;
        std::size_t queries = 0;
        for (Eigen::Index i = 0; i < N; ++i) {
            double num = 0.0, den = 0.0;
            for (Eigen::Index j = 0; j < N; ++j) {
                if (!std::isfinite(dist(i, j))) continue;
                num += a(i, j) * dist(i, j);
                den += a(i, j);
            }
            if (den > 0.0) {
                total += num / den;
                ++queries;
            }
        }
        if (queries == 0) throw std::invalid_argument("attention_distance: no finite-distance token pairs");
        out.push_back(total / static_cast<double>(queries));
    }
    return out;
}

/// CSV with one row per query token; the header names each key column by index and kind.
inline void write_attention_csv(std::ostream& os, const Matrix& attn, const TokenSequence& ts) {
    require(attn.rows() == static_cast<Eigen::Index>(ts.size()) && attn.cols() == attn.rows(),
            "write_attention_csv: attention must be N x N");
    os << "query,query_kind";
    for (std::size_t j = 0; j < ts.size(); ++j) os << ",k" << j << ':' << to_string(ts.tokens[j].kind);
    os << '\n';
    os.precision(17);
    for (Eigen::Index i = 0; i < attn.rows(); ++i) {
        os << i << ',' << to_string(ts.tokens[static_cast<std::size_t>(i)].kind);
        for (Eigen::Index j = 0; j < attn.cols(); ++j) os << ',' << attn(i, j);
        os << '\n';
    }
}

}  // namespace tokengt
