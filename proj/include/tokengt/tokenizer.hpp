#pragma once

#include "tokengt/equivariant.hpp"
#include "tokengt/graphs.hpp"
#include "tokengt/identifiers.hpp"

#include <map>
#include <optional>
#include <vector>

namespace tokengt {

enum class TokenKind { Node, Edge, Hyperedge, GraphSpecial, NullSpecial };

inline bool is_special(TokenKind k) { return k == TokenKind::GraphSpecial || k == TokenKind::NullSpecial; }

inline std::string to_string(TokenKind k) {
    switch (k) {
        case TokenKind::Node: return "node";
        case TokenKind::Edge: return "edge";
        case TokenKind::Hyperedge: return "hyperedge";
        case TokenKind::GraphSpecial: return "graph";
        case TokenKind::NullSpecial: return "null";
    }
    return "?";
}

struct Token {
    TokenKind kind = TokenKind::Node;
    std::vector<int> multi_index;  // empty for specials
    RowVector channels;            // [features | k identifier slots | type identifier]
    RowVector embedding;           // specials only; may be empty
};

struct TokenSequence {
    std::vector<Token> tokens;
    std::size_t n = 0;
    std::size_t k = 2;
    std::size_t C = 0;
    std::size_t d_p = 0;
    std::size_t d_e = 0;

    std::size_t size() const { return tokens.size(); }
    std::size_t width() const { return C + k * d_p + d_e; }
    std::size_t special_count() const {
        return static_cast<std::size_t>(
            std::count_if(tokens.begin(), tokens.end(), [](const Token& t) { return is_special(t.kind); }));
    }

    /// Channel rows stacked; special rows are zero.
    Matrix channel_matrix() const {
        Matrix m = Matrix::Zero(static_cast<Eigen::Index>(tokens.size()), static_cast<Eigen::Index>(width()));
        for (std::size_t t = 0; t < tokens.size(); ++t)
            if (!is_special(tokens[t].kind)) m.row(static_cast<Eigen::Index>(t)) = tokens[t].channels;
        return m;
    }
};

namespace detail {
inline RowVector assemble_token(const RowVector& feat, std::size_t C, std::span<const int> idx,
                                const NodeIdentifiers& p, const RowVector& type_row) {
    const auto dp = static_cast<Eigen::Index>(p.d_p());
    RowVector ch = RowVector::Zero(static_cast<Eigen::Index>(C) + static_cast<Eigen::Index>(idx.size()) * dp +
                                   type_row.size());
    ch.head(feat.size()) = feat;
    Eigen::Index off = static_cast<Eigen::Index>(C);
    for (int v : idx) {
        ch.segment(off, dp) = p.P.row(v);
        off += dp;
    }
    ch.tail(type_row.size()) = type_row;
    return ch;
}
}  // namespace detail

/// Order-2 sparse tokens: nodes ascending, then edges in input order, then
/// reversed edge copies when `symmetrize` is set.
inline TokenSequence tokenize_sparse(const Graph& g, const NodeIdentifiers& p, const TypeIdentifiers& e,
                                     bool symmetrize) {
    g.validate();
    if (p.n() != g.n) throw std::invalid_argument("tokenize_sparse: identifier rows must equal n");
    if (e.count() < 2) throw std::invalid_argument("tokenize_sparse: need node and edge type identifiers");
    TokenSequence ts;
    ts.n = g.n;
    ts.k = 2;
    ts.C = std::max(g.node_feature_dim(), g.edge_feature_dim());
    ts.d_p = p.d_p();
    ts.d_e = e.d_e();
    const RowVector node_type = e.E.row(0);
    const RowVector edge_type = e.E.row(1);
    for (std::size_t v = 0; v < g.n; ++v) {
        const int idx[2] = {static_cast<int>(v), static_cast<int>(v)};
        const RowVector feat = g.node_features.row(static_cast<Eigen::Index>(v));
        ts.tokens.push_back({TokenKind::Node, {idx[0], idx[1]}, detail::assemble_token(feat, ts.C, idx, p, node_type), {}});
    }
    auto add_edges = [&](bool reversed) {
        for (std::size_t i = 0; i < g.edges.size(); ++i) {
            auto [u, v] = g.edges[i];
            if (reversed) std::swap(u, v);
            const int idx[2] = {u, v};
            const RowVector feat = g.edge_features.row(static_cast<Eigen::Index>(i));
            ts.tokens.push_back({TokenKind::Edge, {u, v}, detail::assemble_token(feat, ts.C, idx, p, edge_type), {}});
        }
    };
    add_edges(false);
    if (symmetrize) add_edges(true);
    return ts;
}

/// One token per multi-index of an order-k tensor, in row-major order, with
/// the type identifier chosen by the index's equivalence class.
inline TokenSequence tokenize_dense(const DenseTensor& x, const NodeIdentifiers& p, const TypeIdentifiers& e) {
    if (p.n() != x.n()) throw std::invalid_argument("tokenize_dense: identifier rows must equal n");
    if (e.count() != bell_number(x.order()))
        throw std::invalid_argument("tokenize_dense: type identifiers must have bell(k) rows");
    const auto& classes = ClassTable::get(x.order());
    TokenSequence ts;
    ts.n = x.n();
    ts.k = x.order();
    ts.C = x.channels();
    ts.d_p = p.d_p();
    ts.d_e = e.d_e();
    ts.tokens.reserve(x.entries());
    for (std::size_t flat = 0; flat < x.entries(); ++flat) {
        auto idx = x.multi_index(flat);
        const auto entry = x.entry(flat);
        RowVector feat(static_cast<Eigen::Index>(entry.size()));
        for (std::size_t c = 0; c < entry.size(); ++c) feat(static_cast<Eigen::Index>(c)) = entry[c];
        const RowVector type_row = e.E.row(classes.index_of_multi_index(idx));
        const bool all_equal = std::all_of(idx.begin(), idx.end(), [&](int v) { return v == idx.front(); });
        const TokenKind kind = all_equal ? TokenKind::Node : (ts.k == 2 ? TokenKind::Edge : TokenKind::Hyperedge);
        RowVector ch = detail::assemble_token(feat, ts.C, idx, p, type_row);
        ts.tokens.push_back({kind, std::move(idx), std::move(ch), {}});
    }
    return ts;
}

inline TokenSequence prepend_special(TokenSequence ts, TokenKind kind, RowVector embedding = {}) {
    if (!is_special(kind)) throw std::invalid_argument("prepend_special: kind must be a special token");
    for (const auto& t : ts.tokens)
        if (t.kind == kind) throw std::invalid_argument("prepend_special: duplicate special token");
    ts.tokens.insert(ts.tokens.begin(), Token{kind, {}, {}, std::move(embedding)});
    return ts;
}

struct InputProjection {
    Matrix w_in;                               // width x d
    std::map<TokenKind, RowVector> specials;   // kind -> d vector

    std::size_t d() const { return static_cast<std::size_t>(w_in.cols()); }
};

/// Z = [specials; X^in w_in]. A special's row comes from the projection map when
/// present, else from the token's own embedding.
inline Matrix project_input(const TokenSequence& ts, const InputProjection& proj) {
    if (proj.w_in.rows() != static_cast<Eigen::Index>(ts.width()))
        throw std::invalid_argument("project_input: w_in rows must equal token width");
    const auto d = proj.w_in.cols();
    Matrix z(static_cast<Eigen::Index>(ts.size()), d);
    for (std::size_t t = 0; t < ts.size(); ++t) {
        const auto& tok = ts.tokens[t];
        const auto row = static_cast<Eigen::Index>(t);
        if (!is_special(tok.kind)) {
            z.row(row) = tok.channels * proj.w_in;
            continue;
        }
        const auto it = proj.specials.find(tok.kind);
        const RowVector& emb = it != proj.specials.end() ? it->second : tok.embedding;
        if (emb.size() != d) throw std::invalid_argument("project_input: special embedding width must equal d");
        z.row(row) = emb;
    }
    return z;
}

}  // namespace tokengt
