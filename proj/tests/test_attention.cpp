#include "tokengt/attention.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <sstream>

using namespace tokengt;

namespace {

// Three explicit loops per head; no matrix products.
Matrix naive_msa(const Matrix& x, const MSAParams& p) {
    const auto N = x.rows();
    Matrix out = Matrix::Zero(N, x.cols());
    for (std::size_t h = 0; h < p.H; ++h) {
        Matrix q(N, p.d_H), k(N, p.d_H), v(N, p.d_v);
        for (Eigen::Index i = 0; i < N; ++i)
            for (std::size_t c = 0; c < p.d_H; ++c) {
                double sq = p.bq[h](0, c), sk = p.bk[h](0, c);
                for (std::size_t r = 0; r < p.d; ++r) {
                    sq += x(i, r) * p.Wq[h](r, c);
                    sk += x(i, r) * p.Wk[h](r, c);
                }
                q(i, c) = sq;
                k(i, c) = sk;
            }
        for (Eigen::Index i = 0; i < N; ++i)
            for (std::size_t c = 0; c < p.d_v; ++c) {
                double s = 0;
                for (std::size_t r = 0; r < p.d; ++r) s += x(i, r) * p.Wv[h](r, c);
                v(i, c) = s;
            }
        for (Eigen::Index i = 0; i < N; ++i) {
            std::vector<double> logits(N);
            double mx = -1e300, z = 0;
            for (Eigen::Index j = 0; j < N; ++j) {
                double s = 0;
                for (std::size_t c = 0; c < p.d_H; ++c) s += q(i, c) * k(j, c);
                logits[j] = s / std::sqrt(double(p.d_H));
                mx = std::max(mx, logits[j]);
            }
            for (auto& l : logits) z += (l = std::exp(l - mx));
            for (Eigen::Index j = 0; j < N; ++j)
                for (std::size_t c = 0; c < p.d_v; ++c)
                    for (std::size_t o = 0; o < p.d; ++o) out(i, o) += logits[j] / z * v(j, c) * p.Wo[h](c, o);
        }
    }
    return out;
}

MSAParams random_msa(std::size_t H, std::size_t d, std::size_t dh, std::uint64_t seed) {
    Rng rng(RngSeed{seed});
    auto p = MSAParams::random(H, d, dh, dh, rng, 0.7);
    for (std::size_t h = 0; h < H; ++h) {
        p.bq[h] = gaussian_matrix(1, dh, rng) * 0.5;
        p.bk[h] = gaussian_matrix(1, dh, rng) * 0.5;
    }
    return p;
}


}  // namespace

TEST(Msa, ZeroLogitsGiveUniform) {
    Rng rng(RngSeed{1});
    auto p = MSAParams::random(1, 3, 2, 2, rng);
    p.Wq[0].setZero();
    p.Wk[0].setZero();
    const Matrix x = gaussian_matrix(5, 3, RngSeed{2});
    const auto r = msa_forward(x, p);
    EXPECT_LE((r.attn[0].array() - 0.2).abs().maxCoeff(), 1e-15);
    const RowVector expected = x.colwise().mean() * p.Wv[0] * p.Wo[0];
    for (Eigen::Index i = 0; i < 5; ++i) EXPECT_LE((r.out.row(i) - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Msa, SingleToken) {
    const auto r = msa_forward(gaussian_matrix(1, 4, RngSeed{3}), random_msa(2, 4, 3, 4));
    EXPECT_EQ(r.attn[0](0, 0), 1.0);
    EXPECT_EQ(r.attn[1](0, 0), 1.0);
}

TEST(Msa, MatchesNaive) {
    const auto p = random_msa(3, 6, 4, 5);
    const Matrix x = gaussian_matrix(7, 6, RngSeed{6});
    const auto r = msa_forward(x, p);
    EXPECT_LE((r.out - naive_msa(x, p)).cwiseAbs().maxCoeff(), 1e-10);
    for (const auto& a : r.attn)
        for (Eigen::Index i = 0; i < a.rows(); ++i) EXPECT_NEAR(a.row(i).sum(), 1.0, 1e-12);
}

TEST(Msa, TokenPermutationEquivariance) {
    const auto p = random_msa(2, 5, 3, 7);
    const Matrix x = gaussian_matrix(6, 5, RngSeed{8});
    Rng rng(RngSeed{9});
    const auto pi = random_permutation(6, rng);
    Matrix xp(6, 5);
    for (int i = 0; i < 6; ++i) xp.row(pi[i]) = x.row(i);
    const Matrix y = msa_forward(x, p).out, yp = msa_forward(xp, p).out;
    for (int i = 0; i < 6; ++i) EXPECT_LE((yp.row(pi[i]) - y.row(i)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Msa, ShapeMismatch) {
    EXPECT_THROW(msa_forward(Matrix::Zero(3, 4), random_msa(1, 5, 2, 1)), std::invalid_argument);
}

TEST(Layer, ResidualOnly) {
    Rng rng(RngSeed{10});
    auto t = TransformerLayerParams::random(2, 4, 3, 8, NormMode::None, rng);
    for (auto& w : t.msa.Wo) w.setZero();
    t.W2.setZero();
    const Matrix x = gaussian_matrix(5, 4, RngSeed{11});
    EXPECT_EQ(transformer_layer_forward(x, t), x);
}

TEST(Layer, NegatingExactMlpLeavesMsa) {
    Rng rng(RngSeed{12});
    auto t = TransformerLayerParams::random(2, 4, 3, 8, NormMode::None, rng);
    t.exact_mlp = [](const RowVector& h) { return RowVector(-h); };
    const Matrix x = gaussian_matrix(5, 4, RngSeed{13});
    EXPECT_LE((transformer_layer_forward(x, t) - Matrix::Zero(5, 4)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Layer, MatchesHandComposition) {
    Rng rng(RngSeed{14});
    const auto t = TransformerLayerParams::random(2, 4, 3, 8, NormMode::None, rng);
    const Matrix x = gaussian_matrix(5, 4, RngSeed{15});
    const Matrix h = x + msa_forward(x, t.msa).out;
    Matrix mlp = (h * t.W1).rowwise() + t.b1.row(0);
    mlp = mlp.unaryExpr([](double v) { return 0.5 * v * (1 + std::erf(v / std::sqrt(2.0))); });
    const Matrix expected = h + ((mlp * t.W2).rowwise() + t.b2.row(0));
    EXPECT_LE((transformer_layer_forward(x, t) - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Layer, PreNormIsShiftInvariantInNormInput) {
    Rng rng(RngSeed{16});
    const auto t = TransformerLayerParams::random(2, 4, 3, 8, NormMode::Pre, rng);
    const Matrix x = gaussian_matrix(5, 4, RngSeed{17});
    EXPECT_TRUE(transformer_layer_forward(x, t).allFinite());
}

TEST(ScoreGrad, ZeroUpstream) {
    const auto p = random_msa(2, 4, 3, 18);
    const Matrix x = gaussian_matrix(4, 4, RngSeed{19});
    const auto g = attention_score_gradients(x, p, {Matrix::Zero(4, 4), Matrix::Zero(4, 4)});
    EXPECT_EQ(g.dx, Matrix::Zero(4, 4));
    EXPECT_EQ(g.dWq[1], Matrix::Zero(4, 3));
    EXPECT_EQ(g.dbk[0], Matrix::Zero(1, 3));
}

TEST(ScoreGrad, FiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto p = random_msa(2, 5, 3, 100 + seed);
        Matrix x = gaussian_matrix(6, 5, RngSeed{200 + seed});
        const std::vector<Matrix> up{gaussian_matrix(6, 6, RngSeed{300 + seed}), gaussian_matrix(6, 6, RngSeed{400 + seed})};
        auto loss = [&] {
            const auto r = msa_forward(x, p);
            return (r.attn[0].cwiseProduct(up[0])).sum() + (r.attn[1].cwiseProduct(up[1])).sum();
        };
        const auto g = attention_score_gradients(x, p, up);
        auto check = [&](Matrix& param, const Matrix& grad) {
            for (Eigen::Index i = 0; i < param.rows(); ++i)
                for (Eigen::Index j = 0; j < param.cols(); ++j) {
                    const double old = param(i, j);
                    param(i, j) = old + 1e-5;
                    const double lp = loss();
                    param(i, j) = old - 1e-5;
                    const double lm = loss();
                    param(i, j) = old;
                    const double fd = (lp - lm) / 2e-5;
                    EXPECT_LE(std::abs(fd - grad(i, j)), 1e-4 * std::max(1.0, std::abs(fd)));
                }
        };
        for (std::size_t h = 0; h < 2; ++h) {
            check(p.Wq[h], g.dWq[h]);
            check(p.Wk[h], g.dWk[h]);
            check(p.bq[h], g.dbq[h]);
            check(p.bk[h], g.dbk[h]);
        }
        check(x, g.dx);
    }
}

TEST(ScoreGrad, RowConstantUpstreamCancels) {
    // A row-constant upstream has zero projection onto the softmax Jacobian.
    const auto p = random_msa(1, 4, 3, 21);
    const Matrix x = gaussian_matrix(5, 4, RngSeed{22});
    Matrix up(5, 5);
    for (int i = 0; i < 5; ++i) up.row(i).setConstant(i + 1.0);
    const auto g = attention_score_gradients(x, p, {up});
    EXPECT_LE(g.dbq[0].cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE(g.dWq[0].cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE(g.dx.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ScoreGrad, BiasQueryGradientWithColumnConstantUpstream) {
    const auto p = random_msa(1, 4, 3, 23);
    Matrix x = gaussian_matrix(5, 4, RngSeed{24});
    const Matrix up = Matrix::Constant(5, 5, 0.7);
    const auto g = attention_score_gradients(x, p, {up});
    EXPECT_LE(g.dbq[0].cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LayerBackward, FiniteDifferences) {
    for (NormMode mode : {NormMode::None, NormMode::Pre}) {
        Rng rng(RngSeed{30});
        auto t = TransformerLayerParams::random(2, 4, 3, 6, mode, rng);
        for (std::size_t h = 0; h < 2; ++h) t.msa.bq[h] = gaussian_matrix(1, 3, rng) * 0.3;
        t.ln1_g = gaussian_matrix(1, 4, rng).array() + 1.0;
        t.ln2_b = gaussian_matrix(1, 4, rng) * 0.2;
        Matrix x = gaussian_matrix(5, 4, RngSeed{31});
        const Matrix w = gaussian_matrix(5, 4, RngSeed{32});
        auto loss = [&] { return transformer_layer_forward(x, t).cwiseProduct(w).sum(); };
        LayerCache cache;
        transformer_layer_forward(x, t, &cache);
        auto g = LayerGrads::zeros_like(t);
        const Matrix dx = transformer_layer_backward(t, cache, w, g);
        auto check = [&](Matrix& param, const Matrix& grad) {
            for (Eigen::Index i = 0; i < param.rows(); ++i)
                for (Eigen::Index j = 0; j < param.cols(); ++j) {
                    const double old = param(i, j);
                    param(i, j) = old + 1e-5;
                    const double lp = loss();
                    param(i, j) = old - 1e-5;
                    const double lm = loss();
                    param(i, j) = old;
                    const double fd = (lp - lm) / 2e-5;
                    EXPECT_LE(std::abs(fd - grad(i, j)), 1e-5 * std::max(1.0, std::abs(fd)));
                }
        };
        check(x, dx);
        check(t.W1, g.W1);
        check(t.b1, g.b1);
        check(t.W2, g.W2);
        check(t.b2, g.b2);
        for (std::size_t h = 0; h < 2; ++h) {
            check(t.msa.Wq[h], g.msa.Wq[h]);
            check(t.msa.Wk[h], g.msa.Wk[h]);
            check(t.msa.Wv[h], g.msa.Wv[h]);
            check(t.msa.Wo[h], g.msa.Wo[h]);
            check(t.msa.bq[h], g.msa.bq[h]);
            check(t.msa.bk[h], g.msa.bk[h]);
        }
        if (mode == NormMode::Pre) {
            check(t.ln1_g, g.ln1_g);
            check(t.ln1_b, g.ln1_b);
            check(t.ln2_g, g.ln2_g);
            check(t.ln2_b, g.ln2_b);
        }
    }
}

namespace {
TokenSequence path_nodes() {
    const Graph g = Graph::from_edges(3, {{0, 1}, {1, 2}});
    TokenSequence ts;
    ts.n = 3;
    for (int v = 0; v < 3; ++v) ts.tokens.push_back({TokenKind::Node, {v, v}, RowVector::Zero(1), {}});
    return ts;
}
}  // namespace

TEST(Distance, UniformOverPath) {
    const auto ts = path_nodes();
    const Matrix hops = hop_distances(Graph::from_edges(3, {{0, 1}, {1, 2}}));
    Matrix a = Matrix::Constant(3, 3, 1.0 / 3.0);
    // Query 0 attends uniformly: (0 + 1 + 2) / 3 = 1. Others attend to themselves.
    a.row(1) << 0, 1, 0;
    a.row(2) << 0, 0, 1;
    EXPECT_NEAR(attention_distance({a}, ts, hops)[0], 1.0 / 3.0, 1e-15);
    TokenSequence first = ts;
    Matrix only(3, 3);
    only << 1.0 / 3, 1.0 / 3, 1.0 / 3, 0, 1, 0, 0, 0, 1;
    EXPECT_NEAR(3.0 * attention_distance({only}, first, hops)[0], 1.0, 1e-14);
}

TEST(Distance, IdentityAttentionIsZero) {
    const auto ts = path_nodes();
    const Matrix hops = hop_distances(Graph::from_edges(3, {{0, 1}, {1, 2}}));
    EXPECT_EQ(attention_distance({Matrix::Identity(3, 3)}, ts, hops)[0], 0.0);
}

TEST(Distance, FarthestTokenGivesEccentricity) {
    const auto ts = path_nodes();
    const Matrix hops = hop_distances(Graph::from_edges(3, {{0, 1}, {1, 2}}));
    Matrix a = Matrix::Zero(3, 3);
    a(0, 2) = a(1, 0) = a(2, 0) = 1.0;
    // Eccentricities 2, 1, 2.
    EXPECT_NEAR(attention_distance({a}, ts, hops)[0], 5.0 / 3.0, 1e-15);
}

TEST(Distance, SpecialsAndUnreachableExcluded) {
    const Graph g = Graph::from_edges(3, {{0, 1}});
    auto ts = tokenize_sparse(g, exact_orthonormal_identifiers(3, 3), equispaced_type_identifiers(2, 2), false);
    ts = prepend_special(ts, TokenKind::GraphSpecial);
    // Tokens: [graph], n0, n1, n2, e01.
    const Matrix hops = hop_distances(g);
    Matrix a = Matrix::Constant(5, 5, 0.2);
    const auto d = attention_distance({a}, ts, hops);
    // n0 -> {n0:0, n1:1, e01:0.5}; n1 -> {1, 0, 0.5}; n2 -> {0}; e01 -> {0.5, 0.5, 0.5}.
    const double expected = ((0 + 1 + 0.5) / 3 + (1 + 0 + 0.5) / 3 + 0.0 + 0.5) / 4.0;
    EXPECT_NEAR(d[0], expected, 1e-15);
}

TEST(Distance, NoFinitePairsThrows) {
    TokenSequence ts;
    ts.n = 1;
    ts.tokens.push_back({TokenKind::GraphSpecial, {}, {}, {}});
    EXPECT_THROW(attention_distance({Matrix::Ones(1, 1)}, ts, Matrix::Zero(1, 1)), std::invalid_argument);
}

TEST(AttentionCsv, HeaderAndRows) {
    const auto ts = path_nodes();
    std::ostringstream os;
    write_attention_csv(os, Matrix::Identity(3, 3), ts);
    const std::string s = os.str();
    EXPECT_EQ(s.substr(0, s.find('\n')), "query,query_kind,k0:node,k1:node,k2:node");
    EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 4);
}
