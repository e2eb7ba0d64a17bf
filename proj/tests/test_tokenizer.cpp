#include "tokengt/tokenizer.hpp"

#include <gtest/gtest.h>

using namespace tokengt;

namespace {
const Graph kEdge = Graph::from_edges(2, {{0, 1}});
}

TEST(Sparse, Counts) {
    const auto p = exact_orthonormal_identifiers(2, 2);
    const auto e = equispaced_type_identifiers(2, 2);
    EXPECT_EQ(tokenize_sparse(kEdge, p, e, false).size(), 3u);
    EXPECT_EQ(tokenize_sparse(kEdge, p, e, true).size(), 4u);
    const Graph g = barabasi_albert(12, 3, RngSeed{1});
    const auto big = tokenize_sparse(g, orf_identifiers(12, 6, RngSeed{2}), e, true);
    EXPECT_EQ(big.size(), g.n + 2 * g.m());
    EXPECT_EQ(prepend_special(big, TokenKind::GraphSpecial).size(), g.n + 2 * g.m() + 1);
}

TEST(Sparse, ChannelLayout) {
    Graph g = kEdge;
    g.node_features = Matrix::Constant(2, 1, 4.0);
    g.edge_features = Matrix::Constant(1, 3, 5.0);
    const auto p = exact_orthonormal_identifiers(2, 2);
    const auto e = equispaced_type_identifiers(2, 2);
    const auto ts = tokenize_sparse(g, p, e, true);
    ASSERT_EQ(ts.width(), 3u + 4u + 2u);
    // Node 1: [4 0 0 | P1 P1 | E0]
    RowVector node(9);
    node << 4, 0, 0, 0, 1, 0, 1, 1, 0;
    EXPECT_EQ(ts.tokens[1].channels, node);
    EXPECT_EQ(ts.tokens[1].multi_index, (std::vector<int>{1, 1}));
    // Edge (0,1): [5 5 5 | P0 P1 | E1]
    RowVector edge(9);
    edge << 5, 5, 5, 1, 0, 0, 1, -1, 0;
    EXPECT_LE((ts.tokens[2].channels - edge).cwiseAbs().maxCoeff(), 1e-15);
    // Reversed copy (1,0).
    EXPECT_EQ(ts.tokens[3].multi_index, (std::vector<int>{1, 0}));
    EXPECT_EQ(ts.tokens[3].kind, TokenKind::Edge);
}

TEST(Sparse, TypeSlotMatchesClass) {
    const Graph g = barabasi_albert(8, 2, RngSeed{3});
    const auto e = equispaced_type_identifiers(2, 3);
    const auto ts = tokenize_sparse(g, orf_identifiers(8, 8, RngSeed{4}), e, true);
    const auto& cls = ClassTable::get(2);
    for (const auto& t : ts.tokens)
        EXPECT_EQ(RowVector(t.channels.tail(3)), RowVector(e.E.row(cls.index_of_multi_index(t.multi_index))));
}

TEST(Sparse, SelfLoopIncidenceIsTwo) {
    Graph g = Graph::from_edges(2, {{0, 0}});
    const auto p = exact_orthonormal_identifiers(2, 2);
    const auto ts = tokenize_sparse(g, p, equispaced_type_identifiers(2, 2), false);
    const RowVector loop = ts.tokens[2].channels.segment(0, 4);
    const RowVector node = ts.tokens[0].channels.segment(0, 4);
    EXPECT_EQ(loop.dot(node), 2.0);
    EXPECT_EQ(ts.tokens[2].kind, TokenKind::Edge);
}

TEST(Sparse, RejectsWrongIdentifierRows) {
    EXPECT_THROW(tokenize_sparse(kEdge, exact_orthonormal_identifiers(3, 3), equispaced_type_identifiers(2, 2), false),
                 std::invalid_argument);
}

TEST(Dense, SecondOrder) {
    const auto x = graph_to_dense(kEdge);
    const auto e = equispaced_type_identifiers(2, 2);
    const auto ts = tokenize_dense(x, exact_orthonormal_identifiers(2, 2), e);
    ASSERT_EQ(ts.size(), 4u);
    EXPECT_EQ(RowVector(ts.tokens[0].channels.tail(2)), RowVector(e.E.row(0)));
    EXPECT_EQ(RowVector(ts.tokens[1].channels.tail(2)), RowVector(e.E.row(1)));
    EXPECT_EQ(ts.tokens[0].kind, TokenKind::Node);
    EXPECT_EQ(ts.tokens[1].kind, TokenKind::Edge);
    EXPECT_EQ(ts.tokens[1].multi_index, (std::vector<int>{0, 1}));
}

TEST(Dense, FirstOrder) {
    DenseTensor x(1, 3, 1);
    x.data()[2] = 9.0;
    const auto p = exact_orthonormal_identifiers(3, 3);
    const auto e = equispaced_type_identifiers(1, 2);
    const auto ts = tokenize_dense(x, p, e);
    RowVector expected(6);
    expected << 9, 0, 0, 1, 1, 0;
    EXPECT_EQ(ts.tokens[2].channels, expected);
}

TEST(Dense, ThirdOrderHyperedges) {
    const auto ts = tokenize_dense(DenseTensor(3, 2, 1), exact_orthonormal_identifiers(2, 2),
                                   equispaced_type_identifiers(3, 2));
    EXPECT_EQ(ts.size(), 8u);
    EXPECT_EQ(ts.tokens[0].kind, TokenKind::Node);
    EXPECT_EQ(ts.tokens[1].kind, TokenKind::Hyperedge);
}

TEST(Dense, PermutationConsistency) {
    const Graph g = barabasi_albert(5, 2, RngSeed{5});
    const auto x = graph_to_dense(g);
    const auto p = orf_identifiers(5, 5, RngSeed{6});
    const auto e = equispaced_type_identifiers(2, 2);
    const Permutation pi{3, 0, 4, 1, 2};
    NodeIdentifiers pp = p;
    for (int r = 0; r < 5; ++r) pp.P.row(pi[r]) = p.P.row(r);
    const auto a = tokenize_dense(x, p, e);
    const auto b = tokenize_dense(permute_tensor(x, pi), pp, e);
    for (const auto& t : a.tokens) {
        const std::vector<int> moved{pi[t.multi_index[0]], pi[t.multi_index[1]]};
        const auto& u = b.tokens[static_cast<std::size_t>(moved[0] * 5 + moved[1])];
        EXPECT_EQ(u.multi_index, moved);
        EXPECT_EQ(u.channels, t.channels);
    }
}

TEST(Dense, RejectsMismatch) {
    EXPECT_THROW(tokenize_dense(DenseTensor(2, 3, 1), exact_orthonormal_identifiers(2, 2), equispaced_type_identifiers(2, 2)),
                 std::invalid_argument);
    EXPECT_THROW(tokenize_dense(DenseTensor(2, 2, 1), exact_orthonormal_identifiers(2, 2), equispaced_type_identifiers(3, 2)),
                 std::invalid_argument);
}

TEST(Special, Prepend) {
    auto ts = tokenize_sparse(kEdge, exact_orthonormal_identifiers(2, 2), equispaced_type_identifiers(2, 2), false);
    ts = prepend_special(ts, TokenKind::GraphSpecial);
    EXPECT_EQ(ts.size(), 4u);
    EXPECT_EQ(ts.tokens[0].kind, TokenKind::GraphSpecial);
    EXPECT_TRUE(ts.tokens[0].multi_index.empty());
    EXPECT_THROW(prepend_special(ts, TokenKind::GraphSpecial), std::invalid_argument);
    EXPECT_THROW(prepend_special(ts, TokenKind::Node), std::invalid_argument);
    EXPECT_EQ(prepend_special(ts, TokenKind::NullSpecial).size(), 5u);
}

TEST(Projection, SelectorZeroAndWidth) {
    auto ts = tokenize_sparse(kEdge, exact_orthonormal_identifiers(2, 2), equispaced_type_identifiers(2, 2), false);
    ts = prepend_special(ts, TokenKind::GraphSpecial);
    InputProjection proj;
    proj.w_in = Matrix::Zero(ts.width(), 3);
    proj.w_in(0, 0) = 1.0;  // first identifier channel
    proj.w_in(4, 2) = 1.0;  // first type channel
    proj.specials[TokenKind::GraphSpecial] = RowVector::Constant(3, 7.0);
    Matrix z = project_input(ts, proj);
    EXPECT_EQ(z.cols(), 3);
    EXPECT_EQ(z.row(0), RowVector::Constant(3, 7.0));
    EXPECT_EQ(z(1, 0), 1.0);
    EXPECT_EQ(z(2, 0), 0.0);
    EXPECT_EQ(z(3, 2), -1.0);
    proj.w_in.setZero();
    z = project_input(ts, proj);
    EXPECT_EQ(z.bottomRows(3), Matrix::Zero(3, 3));
    EXPECT_EQ(z.row(0), RowVector::Constant(3, 7.0));
    proj.w_in = Matrix::Zero(ts.width() + 1, 3);
    EXPECT_THROW(project_input(ts, proj), std::invalid_argument);
}
