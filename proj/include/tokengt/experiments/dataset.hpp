#pragma once

#include "tokengt/graphs.hpp"

#include <vector>

namespace tokengt {

struct GraphDataset {
    std::vector<Graph> train;
    std::vector<Graph> test;
};

struct BADistribution {
    int n_min = 10, n_max = 20;
    int k_min = 2, k_max = 3;
};

inline Graph sample_ba_graph(Rng& rng, const BADistribution& dist = {}) {
    const int n = rng.uniform_int(dist.n_min, dist.n_max);
    const int k = rng.uniform_int(dist.k_min, dist.k_max);
    return barabasi_albert(static_cast<std::size_t>(n), static_cast<std::size_t>(k), rng);
}

inline std::vector<Graph> sample_ba_graphs(std::size_t count, RngSeed seed, const BADistribution& dist = {}) {
    Rng rng(seed);
    std::vector<Graph> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(sample_ba_graph(rng, dist));
    return out;
}

/// Train and test graphs come from disjoint substreams of `seed`.
inline GraphDataset ba_dataset(std::size_t train_n, std::size_t test_n, RngSeed seed, const BADistribution& dist = {}) {
    require(train_n >= 1 && test_n >= 1, "ba_dataset: counts must be >= 1");
    return {sample_ba_graphs(train_n, derive_seed(seed, 1), dist), sample_ba_graphs(test_n, derive_seed(seed, 2), dist)};
}

struct DatasetStats {
    double mean_nodes = 0, mean_edges = 0;
    std::size_t min_nodes = 0, max_nodes = 0;
};

inline DatasetStats dataset_stats(const std::vector<Graph>& graphs) {
    require(!graphs.empty(), "dataset_stats: empty dataset");
    DatasetStats s;
    s.min_nodes = graphs.front().n;
    for (const auto& g : graphs) {
        s.mean_nodes += static_cast<double>(g.n);
        s.mean_edges += static_cast<double>(g.edges.size());
        s.min_nodes = std::min(s.min_nodes, g.n);
        s.max_nodes = std::max(s.max_nodes, g.n);
    }
    s.mean_nodes /= static_cast<double>(graphs.size());
    s.mean_edges /= static_cast<double>(graphs.size());
    return s;
}

}  // namespace tokengt
