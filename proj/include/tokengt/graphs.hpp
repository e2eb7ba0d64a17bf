#pragma once

#include "tokengt/numerics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <ostream>
#include <queue>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace tokengt {

using Edge = std::pair<int, int>;
using Permutation = std::vector<int>;  // pi[v] is the image of node v

/// Undirected graph with optional node/edge features.
struct Graph {
    std::size_t n = 0;
    std::vector<Edge> edges;
    Matrix node_features;  // n x C (C may be 0)
    Matrix edge_features;  // m x C' aligned with `edges` (C' may be 0)

    std::size_t m() const { return edges.size(); }
    std::size_t node_feature_dim() const { return static_cast<std::size_t>(node_features.cols()); }
    std::size_t edge_feature_dim() const { return static_cast<std::size_t>(edge_features.cols()); }

    /// Graph with no features and the given edge list.
    static Graph from_edges(std::size_t n, std::vector<Edge> edges) {
        Graph g;
        g.n = n;
        g.edges = std::move(edges);
        g.node_features = Matrix(static_cast<Eigen::Index>(n), 0);
        g.edge_features = Matrix(static_cast<Eigen::Index>(g.edges.size()), 0);
        g.validate();
        return g;
    }

    void validate() const {
        const auto ni = static_cast<int>(n);
        std::set<Edge> seen;
        for (const auto& [u, v] : edges) {
            if (u < 0 || v < 0 || u >= ni || v >= ni)
                throw std::invalid_argument("Graph: edge endpoint out of range");
            if (!seen.insert({std::min(u, v), std::max(u, v)}).second)
                throw std::invalid_argument("Graph: duplicate edge");
        }
        if (node_features.rows() != static_cast<Eigen::Index>(n))
            throw std::invalid_argument("Graph: node feature rows must equal n");
        if (edge_features.rows() != static_cast<Eigen::Index>(edges.size()))
            throw std::invalid_argument("Graph: edge feature rows must equal m");
    }

    bool operator==(const Graph& o) const {
        return n == o.n && edges == o.edges && node_features.rows() == o.node_features.rows() &&
               node_features.cols() == o.node_features.cols() &&
               edge_features.rows() == o.edge_features.rows() &&
               edge_features.cols() == o.edge_features.cols() &&
               node_features == o.node_features && edge_features == o.edge_features;
    }
};

/// Order-k tensor over [n]^k with d channels; multi-indices are row-major.
class DenseTensor {
public:
    DenseTensor() = default;
    DenseTensor(std::size_t order, std::size_t n, std::size_t channels)
        : order_(order), n_(n), channels_(channels), data_(ipow(n, order) * channels, 0.0) {}

    std::size_t order() const { return order_; }
    std::size_t n() const { return n_; }
    std::size_t channels() const { return channels_; }
    std::size_t entries() const { return ipow(n_, order_); }
    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    std::size_t flat_index(std::span<const int> idx) const {
        if (idx.size() != order_) throw std::invalid_argument("DenseTensor: index order mismatch");
        std::size_t flat = 0;
        for (int i : idx) flat = flat * n_ + static_cast<std::size_t>(i);
        return flat;
    }

    /// Multi-index of a flat entry position.
    std::vector<int> multi_index(std::size_t flat) const {
        std::vector<int> idx(order_);
        for (std::size_t p = order_; p-- > 0;) {
            idx[p] = static_cast<int>(flat % n_);
            flat /= n_;
        }
        return idx;
    }

    std::span<double> entry(std::size_t flat) {
        return std::span<double>(data_).subspan(flat * channels_, channels_);
    }
    std::span<const double> entry(std::size_t flat) const {
        return std::span<const double>(data_).subspan(flat * channels_, channels_);
    }

    double& at(std::span<const int> idx, std::size_t c) { return data_[flat_index(idx) * channels_ + c]; }
    double at(std::span<const int> idx, std::size_t c) const {
        return data_[flat_index(idx) * channels_ + c];
    }

    /// View as (n^k x d) matrix copy.
    Matrix as_matrix() const {
        Matrix m(static_cast<Eigen::Index>(entries()), static_cast<Eigen::Index>(channels_));
        for (std::size_t e = 0; e < entries(); ++e)
            for (std::size_t c = 0; c < channels_; ++c)
                m(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(c)) = data_[e * channels_ + c];
        return m;
    }

    static DenseTensor from_matrix(std::size_t order, std::size_t n, const Matrix& m) {
        DenseTensor t(order, n, static_cast<std::size_t>(m.cols()));
        if (static_cast<std::size_t>(m.rows()) != t.entries())
            throw std::invalid_argument("DenseTensor::from_matrix: row count must be n^order");
        for (std::size_t e = 0; e < t.entries(); ++e)
            for (std::size_t c = 0; c < t.channels_; ++c)
                t.data_[e * t.channels_ + c] = m(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(c));
        return t;
    }

    bool operator==(const DenseTensor&) const = default;

    static std::size_t ipow(std::size_t base, std::size_t exp) {
        std::size_t r = 1;
        for (std::size_t i = 0; i < exp; ++i) r *= base;
        return r;
    }

private:
    std::size_t order_ = 0;
    std::size_t n_ = 0;
    std::size_t channels_ = 0;
    std::vector<double> data_;
};

/// Barabasi-Albert graph: k isolated seed nodes, then each new node links to
/// k distinct earlier nodes drawn with probability proportional to degree + 1.
inline Graph barabasi_albert(std::size_t n, std::size_t k, Rng& rng) {
    if (k < 2 || k >= n) throw std::invalid_argument("barabasi_albert: requires 2 <= k < n");
    std::vector<double> degree(n, 0.0);
    std::vector<Edge> edges;
    edges.reserve((n - k) * k);
    std::vector<char> taken(n, 0);
    for (std::size_t t = k; t < n; ++t) {
        std::vector<int> picked;
        std::fill(taken.begin(), taken.begin() + static_cast<std::ptrdiff_t>(t), 0);
        for (std::size_t draw = 0; draw < k; ++draw) {
            double total = 0.0;
            for (std::size_t v = 0; v < t; ++v)
                if (!taken[v]) total += degree[v] + 1.0;
            double r = rng.uniform() * total;
            std::size_t chosen = t;
            for (std::size_t v = 0; v < t; ++v) {
                if (taken[v]) continue;
                chosen = v;
                r -= degree[v] + 1.0;
                if (r < 0.0) break;
            }
            taken[chosen] = 1;
            picked.push_back(static_cast<int>(chosen));
        }
        std::sort(picked.begin(), picked.end());
        for (int u : picked) {
            edges.emplace_back(u, static_cast<int>(t));
            degree[static_cast<std::size_t>(u)] += 1.0;
            degree[t] += 1.0;
        }
    }
    return Graph::from_edges(n, std::move(edges));
}

inline Graph barabasi_albert(std::size_t n, std::size_t k, RngSeed seed) {
    Rng rng(seed);
    return barabasi_albert(n, k, rng);
}

inline Matrix adjacency_matrix(const Graph& g) {
    const auto n = static_cast<Eigen::Index>(g.n);
    Matrix a = Matrix::Zero(n, n);
    for (const auto& [u, v] : g.edges) {
        a(u, v) = 1.0;
        a(v, u) = 1.0;
    }
    return a;
}

/// I - D^{-1/2} A D^{-1/2}, with 0^{-1/2} taken as 0 for isolated nodes.
inline Matrix normalized_laplacian(const Graph& g) {
    const Matrix a = adjacency_matrix(g);
    const auto n = a.rows();
    Vector dinv(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double deg = a.row(i).sum();
        dinv(i) = deg > 0.0 ? 1.0 / std::sqrt(deg) : 0.0;
    }
    Matrix lap = Matrix::Identity(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            if (a(i, j) != 0.0) lap(i, j) -= dinv(i) * a(i, j) * dinv(j);
    return lap;
}

inline constexpr double kUnreachable = std::numeric_limits<double>::infinity();

/// All-pairs BFS hop counts; unreachable pairs hold kUnreachable.
inline Matrix hop_distances(const Graph& g) {
    const auto n = static_cast<Eigen::Index>(g.n);
    std::vector<std::vector<int>> adj(g.n);
    for (const auto& [u, v] : g.edges) {
        adj[static_cast<std::size_t>(u)].push_back(v);
        if (u != v) adj[static_cast<std::size_t>(v)].push_back(u);
    }
    Matrix dist = Matrix::Constant(n, n, kUnreachable);
    for (Eigen::Index s = 0; s < n; ++s) {
        std::queue<int> frontier;
        dist(s, s) = 0.0;
        frontier.push(static_cast<int>(s));
        while (!frontier.empty()) {
            const int u = frontier.front();
            frontier.pop();
            for (int v : adj[static_cast<std::size_t>(u)]) {
                if (dist(s, v) == kUnreachable) {
                    dist(s, v) = dist(s, u) + 1.0;
                    frontier.push(v);
                }
            }
        }
    }
    return dist;
}

inline void validate_permutation(const Permutation& pi, std::size_t n) {
    if (pi.size() != n) throw std::invalid_argument("permutation: size must equal n");
    std::vector<char> hit(n, 0);
    for (int v : pi) {
        if (v < 0 || static_cast<std::size_t>(v) >= n || hit[static_cast<std::size_t>(v)])
            throw std::invalid_argument("permutation: not a bijection");
        hit[static_cast<std::size_t>(v)] = 1;
    }
}

inline Permutation inverse_permutation(const Permutation& pi) {
    validate_permutation(pi, pi.size());
    Permutation inv(pi.size());
    for (std::size_t i = 0; i < pi.size(); ++i) inv[static_cast<std::size_t>(pi[i])] = static_cast<int>(i);
    return inv;
}

inline Permutation random_permutation(std::size_t n, Rng& rng) {
    Permutation pi(n);
    for (std::size_t i = 0; i < n; ++i) pi[i] = static_cast<int>(i);
    std::shuffle(pi.begin(), pi.end(), rng.engine());
    return pi;
}

/// Relabel node v as pi[v]; edge order and orientation are preserved.
inline Graph permute_graph(const Graph& g, const Permutation& pi) {
    validate_permutation(pi, g.n);
    Graph out;
    out.n = g.n;
    out.node_features = Matrix(g.node_features.rows(), g.node_features.cols());
    for (std::size_t v = 0; v < g.n; ++v)
        out.node_features.row(pi[v]) = g.node_features.row(static_cast<Eigen::Index>(v));
    out.edges.reserve(g.edges.size());
    for (const auto& [u, v] : g.edges)
        out.edges.emplace_back(pi[static_cast<std::size_t>(u)], pi[static_cast<std::size_t>(v)]);
    out.edge_features = g.edge_features;
    return out;
}

/// (pi . X)_i = X_{pi^{-1}(i)} applied to every index position.
inline DenseTensor permute_tensor(const DenseTensor& x, const Permutation& pi) {
    validate_permutation(pi, x.n());
    DenseTensor out(x.order(), x.n(), x.channels());
    std::vector<int> target(x.order());
    for (std::size_t e = 0; e < x.entries(); ++e) {
        const auto src = x.multi_index(e);
        for (std::size_t p = 0; p < src.size(); ++p) target[p] = pi[static_cast<std::size_t>(src[p])];
        auto dst = out.entry(out.flat_index(target));
        auto from = x.entry(e);
        std::copy(from.begin(), from.end(), dst.begin());
    }
    return out;
}

/// Order-2 dense encoding. Channel layout:
///   0: adjacency, 1: diagonal indicator, then node features (diagonal),
///   then edge features (both orientations of each edge).
inline DenseTensor graph_to_dense(const Graph& g) {
    const std::size_t cn = g.node_feature_dim();
    const std::size_t ce = g.edge_feature_dim();
    DenseTensor t(2, g.n, 2 + cn + ce);
    for (std::size_t v = 0; v < g.n; ++v) {
        const int idx[2] = {static_cast<int>(v), static_cast<int>(v)};
        t.at(idx, 1) = 1.0;
        for (std::size_t c = 0; c < cn; ++c)
            t.at(idx, 2 + c) = g.node_features(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(c));
    }
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        const auto [u, v] = g.edges[e];
        for (const auto& idx : {std::array<int, 2>{u, v}, std::array<int, 2>{v, u}}) {
            t.at(idx, 0) = 1.0;
            for (std::size_t c = 0; c < ce; ++c)
                t.at(idx, 2 + cn + c) =
                    g.edge_features(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(c));
        }
    }
    return t;
}

// ---------------------------------------------------------------------------
// Line-delimited graph file format:
//   {"n": N, "feat_dim_node": C, "feat_dim_edge": C'}
//   {"feat": [...]}            x N   (node records, in node order)
//   {"u": U, "v": V, "feat": [...]}  x m   (edge records)

namespace detail {
inline nlohmann::json row_to_json(const Matrix& m, Eigen::Index r) {
    nlohmann::json arr = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) arr.push_back(m(r, c));
    return arr;
}
}  // namespace detail

inline void save_graph(std::ostream& os, const Graph& g) {
    g.validate();
    nlohmann::json header{{"n", g.n}, {"feat_dim_node", g.node_feature_dim()},
                          {"feat_dim_edge", g.edge_feature_dim()}};
    os << header.dump() << '\n';
    for (std::size_t v = 0; v < g.n; ++v)
        os << nlohmann::json{{"feat", detail::row_to_json(g.node_features, static_cast<Eigen::Index>(v))}}.dump()
           << '\n';
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        nlohmann::json rec{{"u", g.edges[e].first},
                           {"v", g.edges[e].second},
                           {"feat", detail::row_to_json(g.edge_features, static_cast<Eigen::Index>(e))}};
        os << rec.dump() << '\n';
    }
}

inline Graph load_graph(std::istream& is) {
    std::string line;
    auto next_record = [&]() -> nlohmann::json {
        while (std::getline(is, line)) {
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            return nlohmann::json::parse(line);
        }
        return nlohmann::json();
    };
    const auto header = next_record();
    if (header.is_null() || !header.contains("n"))
        throw std::runtime_error("load_graph: missing header record");
    const auto n = header.at("n").get<std::size_t>();
    const auto cn = header.value("feat_dim_node", std::size_t{0});
    const auto ce = header.value("feat_dim_edge", std::size_t{0});

    Graph g;
    g.n = n;
    g.node_features = Matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cn));
    for (std::size_t v = 0; v < n; ++v) {
        const auto rec = next_record();
        if (rec.is_null()) throw std::runtime_error("load_graph: truncated node records");
        const auto feat = rec.value("feat", std::vector<double>{});
        if (feat.size() != cn) throw std::runtime_error("load_graph: node feature width mismatch");
        for (std::size_t c = 0; c < cn; ++c)
            g.node_features(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(c)) = feat[c];
    }
    std::vector<std::vector<double>> efeats;
    for (auto rec = next_record(); !rec.is_null(); rec = next_record()) {
        g.edges.emplace_back(rec.at("u").get<int>(), rec.at("v").get<int>());
        auto feat = rec.value("feat", std::vector<double>{});
        if (feat.size() != ce) throw std::runtime_error("load_graph: edge feature width mismatch");
        efeats.push_back(std::move(feat));
    }
    g.edge_features = Matrix(static_cast<Eigen::Index>(efeats.size()), static_cast<Eigen::Index>(ce));
    for (std::size_t e = 0; e < efeats.size(); ++e)
        for (std::size_t c = 0; c < ce; ++c)
            g.edge_features(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(c)) = efeats[e][c];
    g.validate();
    return g;
}

inline std::size_t triangle_count(const Graph& g) {
    const Matrix a = adjacency_matrix(g);
    std::size_t count = 0;
    for (std::size_t i = 0; i < g.n; ++i)
        for (std::size_t j = i + 1; j < g.n; ++j)
            if (a(i, j) != 0.0)
                for (std::size_t k = j + 1; k < g.n; ++k)
                    if (a(i, k) != 0.0 && a(j, k) != 0.0) ++count;
    return count;
}

}  // namespace tokengt
