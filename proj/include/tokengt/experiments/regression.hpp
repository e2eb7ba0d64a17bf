#pragma once

// Triangle-count regression with a small two-layer TokenGT and a [graph]
// readout token, plus attention-distance summaries of such a model.

#include "tokengt/attention.hpp"
#include "tokengt/experiments/dataset.hpp"
#include "tokengt/identifiers.hpp"
#include "tokengt/tokenizer.hpp"

#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

namespace tokengt {

struct RegressionConfig {
    bool use_ids = true;  // ORF node identifiers and trainable type identifiers, or neither
    std::size_t layers = 2;
    std::size_t d = 64;
    std::size_t heads = 4;
    std::size_t d_h = 16;
    std::size_t d_ff = 128;
    std::size_t d_p = 24;
    std::size_t d_e = 8;
    std::size_t steps = 400;
    std::size_t warmup = 40;
    double peak_lr = 1e-3;
    double weight_decay = 0.0;
    std::size_t batch = 16;
    std::size_t train_count = 512;
    std::size_t test_count = 128;
    RngSeed seed{0};

    std::string label() const { return use_ids ? "orf+type" : "none"; }

    void validate() const {
        require(layers >= 1 && heads >= 1, "RegressionConfig: layers and heads must be >= 1");
        require(d >= 1 && d_h >= 1 && d_ff >= 1 && d_p >= 1 && d_e >= 1, "RegressionConfig: widths must be >= 1");
        require(steps >= 1 && batch >= 1 && warmup <= steps, "RegressionConfig: bad schedule");
        require(train_count >= 2 && test_count >= 1, "RegressionConfig: need >= 2 train and >= 1 test graphs");
        require(peak_lr > 0.0, "RegressionConfig: peak_lr must be positive");
    }
};

/// Tokens of one graph: [graph], nodes ascending, then edges. Identifier
/// channels are [P_u | P_v | E_type].
struct RegressionGraph {
    Graph graph;
    std::vector<std::array<int, 2>> index;
    std::vector<std::uint8_t> type;
    double target = 0.0;  // standardized triangle count

    std::size_t tokens() const { return index.size(); }
};

struct TargetScaler {
    double mean = 0.0, stddev = 1.0;
    double apply(double y) const { return (y - mean) / stddev; }
};

inline TargetScaler fit_target_scaler(const std::vector<Graph>& train) {
    require(train.size() >= 2, "fit_target_scaler: need >= 2 graphs");
    TargetScaler s;
    for (const auto& g : train) s.mean += static_cast<double>(triangle_count(g));
    s.mean /= static_cast<double>(train.size());
    double var = 0.0;
    for (const auto& g : train) var += std::pow(static_cast<double>(triangle_count(g)) - s.mean, 2);
    var /= static_cast<double>(train.size());
    s.stddev = var > 0.0 ? std::sqrt(var) : 1.0;
    return s;
}

inline RegressionGraph prepare_regression_graph(const Graph& g, const TargetScaler& scaler) {
    RegressionGraph r;
    r.graph = g;
    for (std::size_t v = 0; v < g.n; ++v) {
        r.index.push_back({static_cast<int>(v), static_cast<int>(v)});
        r.type.push_back(0);
    }
    for (const auto& [u, v] : g.edges) {
        r.index.push_back({u, v});
        r.type.push_back(1);
    }
    r.target = scaler.apply(static_cast<double>(triangle_count(g)));
    return r;
}

inline std::vector<RegressionGraph> prepare_regression_graphs(const std::vector<Graph>& graphs,
                                                              const TargetScaler& scaler) {
    std::vector<RegressionGraph> out;
    out.reserve(graphs.size());
    for (const auto& g : graphs) out.push_back(prepare_regression_graph(g, scaler));
    return out;
}

/// Token metadata with [graph] at position 0, for attention-distance analysis.
inline TokenSequence regression_token_sequence(const RegressionGraph& r) {
    TokenSequence ts;
    ts.n = r.graph.n;
    ts.k = 2;
    ts.tokens.push_back({TokenKind::GraphSpecial, {}, {}, {}});
    for (std::size_t t = 0; t < r.tokens(); ++t)
        ts.tokens.push_back({r.type[t] == 0 ? TokenKind::Node : TokenKind::Edge, {r.index[t][0], r.index[t][1]}, {}, {}});
    return ts;
}

struct RegressionModel {
    bool use_ids = true;
    std::size_t d_p = 0, d_e = 0;
    Matrix w_in;       // (2 d_p + d_e) x d
    Matrix graph_emb;  // 1 x d
    Matrix E;          // 2 x d_e
    std::vector<TransformerLayerParams> layers;
    Matrix w_out;  // d x 1
    Matrix b_out;  // 1 x 1

    std::size_t input_width() const { return 2 * d_p + d_e; }

    static RegressionModel init(const RegressionConfig& cfg, Rng& rng) {
        cfg.validate();
        RegressionModel m;
        m.use_ids = cfg.use_ids;
        m.d_p = cfg.d_p;
        m.d_e = cfg.d_e;
        m.w_in = gaussian_matrix(m.input_width(), cfg.d, rng) / std::sqrt(static_cast<double>(m.input_width()));
        m.graph_emb = gaussian_matrix(1, cfg.d, rng);
        m.E = cfg.use_ids ? Matrix(gaussian_matrix(2, cfg.d_e, rng)) : Matrix::Zero(2, static_cast<Eigen::Index>(cfg.d_e));
        for (std::size_t l = 0; l < cfg.layers; ++l)
            m.layers.push_back(TransformerLayerParams::random(cfg.heads, cfg.d, cfg.d_h, cfg.d_ff, NormMode::Pre, rng));
        m.w_out = gaussian_matrix(cfg.d, 1, rng) / std::sqrt(static_cast<double>(cfg.d));
        m.b_out = Matrix::Zero(1, 1);
        return m;
    }

    /// Token inputs [P_u | P_v | E_type]; `ids` is n x d_p (ignored without identifiers).
    Matrix token_inputs(const RegressionGraph& r, const Matrix& ids) const {
        const auto dp = static_cast<Eigen::Index>(d_p);
        Matrix x = Matrix::Zero(static_cast<Eigen::Index>(r.tokens()), static_cast<Eigen::Index>(input_width()));
        if (!use_ids) return x;
        require(ids.rows() == static_cast<Eigen::Index>(r.graph.n) && ids.cols() == dp,
                "RegressionModel: identifier shape mismatch");
        for (Eigen::Index t = 0; t < x.rows(); ++t) {
            const auto& ix = r.index[static_cast<std::size_t>(t)];
            x.row(t).segment(0, dp) = ids.row(ix[0]);
            x.row(t).segment(dp, dp) = ids.row(ix[1]);
            x.row(t).tail(static_cast<Eigen::Index>(d_e)) = E.row(r.type[static_cast<std::size_t>(t)]);
        }
        return x;
    }
};

struct RegressionGrads {
    Matrix w_in, graph_emb, E, w_out, b_out;
    std::vector<LayerGrads> layers;

    static RegressionGrads zeros_like(const RegressionModel& m) {
        RegressionGrads g;
        g.w_in = Matrix::Zero(m.w_in.rows(), m.w_in.cols());
        g.graph_emb = Matrix::Zero(1, m.graph_emb.cols());
        g.E = Matrix::Zero(m.E.rows(), m.E.cols());
        g.w_out = Matrix::Zero(m.w_out.rows(), 1);
        g.b_out = Matrix::Zero(1, 1);
        for (const auto& l : m.layers) g.layers.push_back(LayerGrads::zeros_like(l));
        return g;
    }
};

namespace detail {

template <class Msa, class Fn>
void for_each_msa_tensor(Msa& msa, Fn&& fn) {
    for (std::size_t h = 0; h < msa.Wq.size(); ++h) {
        fn(msa.Wq[h]);
        fn(msa.Wk[h]);
        fn(msa.Wv[h]);
        fn(msa.Wo[h]);
        fn(msa.bq[h]);
        fn(msa.bk[h]);
    }
}

/// Parameter and gradient tensors in matching order for the optimizer.
inline void regression_tensors(RegressionModel& m, RegressionGrads& g, std::vector<Matrix*>& params,
                               std::vector<const Matrix*>& grads) {
    auto add = [&](Matrix& p, const Matrix& d) {
        params.push_back(&p);
        grads.push_back(&d);
    };
    add(m.w_in, g.w_in);
    add(m.graph_emb, g.graph_emb);
    if (m.use_ids) add(m.E, g.E);
    add(m.w_out, g.w_out);
    add(m.b_out, g.b_out);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        auto& p = m.layers[l];
        auto& d = g.layers[l];
        std::vector<Matrix*> ps, ds;
        for_each_msa_tensor(p.msa, [&](Matrix& t) { ps.push_back(&t); });
        for_each_msa_tensor(d.msa, [&](Matrix& t) { ds.push_back(&t); });
        for (std::size_t i = 0; i < ps.size(); ++i) add(*ps[i], *ds[i]);
        add(p.W1, d.W1);
        add(p.b1, d.b1);
        add(p.W2, d.W2);
        add(p.b2, d.b2);
        add(p.ln1_g, d.ln1_g);
        add(p.ln1_b, d.ln1_b);
        add(p.ln2_g, d.ln2_g);
        add(p.ln2_b, d.ln2_b);
    }
}

}  // namespace detail

/// Identifiers for one graph; an empty matrix when the model uses none.
inline Matrix regression_identifiers(const RegressionModel& m, const RegressionGraph& r, Rng& rng) {
    if (!m.use_ids) return {};
    return orf_identifiers(r.graph.n, m.d_p, rng).P;
}

/// Prediction for one graph. With `grads`, accumulates `scale` times the
/// gradient of the squared error against the target and returns it unscaled
/// in `sq_err`.
inline double regression_forward(const RegressionModel& m, const RegressionGraph& r, const Matrix& ids,
                                 RegressionGrads* grads = nullptr, double scale = 1.0,
                                 std::vector<std::vector<Matrix>>* attn_out = nullptr) {
    const Matrix x = m.token_inputs(r, ids);
    const auto N = x.rows();
    Matrix z(N + 1, m.w_in.cols());
    z.row(0) = m.graph_emb;
    z.bottomRows(N).noalias() = x * m.w_in;
    std::vector<LayerCache> caches(m.layers.size());
    if (attn_out) attn_out->assign(m.layers.size(), {});
    for (std::size_t l = 0; l < m.layers.size(); ++l)
        z = transformer_layer_forward(z, m.layers[l], &caches[l], attn_out ? &(*attn_out)[l] : nullptr);
    const double pred = (z.row(0) * m.w_out)(0, 0) + m.b_out(0, 0);
    if (!grads) return pred;

    const double dpred = 2.0 * (pred - r.target) * scale;
    grads->w_out.col(0) += dpred * z.row(0).transpose();
    grads->b_out(0, 0) += dpred;
    Matrix dz = Matrix::Zero(z.rows(), z.cols());
    dz.row(0) = dpred * m.w_out.col(0).transpose();
    for (std::size_t l = m.layers.size(); l-- > 0;)
        dz = transformer_layer_backward(m.layers[l], caches[l], dz, grads->layers[l]);
    grads->graph_emb += dz.row(0);
    grads->w_in.noalias() += x.transpose() * dz.bottomRows(N);
    if (m.use_ids) {
        const Matrix dx_type = dz.bottomRows(N) * m.w_in.bottomRows(static_cast<Eigen::Index>(m.d_e)).transpose();
        for (Eigen::Index t = 0; t < N; ++t) grads->E.row(r.type[static_cast<std::size_t>(t)]) += dx_type.row(t);
    }
    return pred;
}

inline RngSeed regression_eval_seed(RngSeed seed, std::size_t graph) {
    return derive_seed(derive_seed(seed, 0xe7a2), graph);
}

/// Mean squared error on standardized targets with fixed per-graph identifiers.
inline double regression_mse(const RegressionModel& m, const std::vector<RegressionGraph>& graphs, RngSeed seed) {
    require(!graphs.empty(), "regression_mse: no graphs");
    double s = 0.0;
    for (std::size_t i = 0; i < graphs.size(); ++i) {
        Rng rng(regression_eval_seed(seed, i));
        const Matrix ids = regression_identifiers(m, graphs[i], rng);
        s += std::pow(regression_forward(m, graphs[i], ids) - graphs[i].target, 2);
    }
    return s / static_cast<double>(graphs.size());
}

struct RegressionRun {
    RegressionModel model;
    std::vector<double> loss;
    double train_mse = 0.0, test_mse = 0.0;
};

/// AdamW on squared error; identifiers redrawn for every graph visit.
inline RegressionRun train_regression(const RegressionConfig& cfg, const std::vector<RegressionGraph>& train,
                                      const std::vector<RegressionGraph>& test) {
    cfg.validate();
    require(!train.empty() && !test.empty(), "train_regression: empty dataset");
    Rng init_rng(derive_seed(cfg.seed, cfg.use_ids ? 0x2101 : 0x2100));
    RegressionRun run{RegressionModel::init(cfg, init_rng), {}, 0.0, 0.0};
    auto& m = run.model;
    AdamWState opt(AdamWConfig{cfg.peak_lr, 0.9, 0.999, cfg.weight_decay, 1e-8});
    Rng order_rng(derive_seed(cfg.seed, 0x0bd2));
    Rng id_rng(derive_seed(cfg.seed, 0x1d52));
    std::vector<std::size_t> order(train.size());
    std::size_t cursor = order.size();
    const double inv_batch = 1.0 / static_cast<double>(cfg.batch);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        auto g = RegressionGrads::zeros_like(m);
        double loss = 0.0;
        for (std::size_t item = 0; item < cfg.batch; ++item) {
            if (cursor == order.size()) {
                std::iota(order.begin(), order.end(), std::size_t{0});
                std::shuffle(order.begin(), order.end(), order_rng.engine());
                cursor = 0;
            }
            const auto& r = train[order[cursor++]];
            const Matrix ids = regression_identifiers(m, r, id_rng);
            const double pred = regression_forward(m, r, ids, &g, inv_batch);
            loss += std::pow(pred - r.target, 2) * inv_batch;
        }
        if (!std::isfinite(loss)) {
            std::ostringstream msg;
            msg << "train_regression: loss diverged at step " << step << " (" << cfg.label() << ", seed "
                << cfg.seed.value << ")";
            throw std::runtime_error(msg.str());
        }
        opt.config().lr = warmup_linear_lr(step, cfg.warmup, cfg.steps, cfg.peak_lr);
        std::vector<Matrix*> params;
        std::vector<const Matrix*> grads;
        detail::regression_tensors(m, g, params, grads);
        adamw_step(params, grads, opt);
        run.loss.push_back(loss);
    }
    run.train_mse = regression_mse(m, train, cfg.seed);
    run.test_mse = regression_mse(m, test, cfg.seed);
    return run;
}

/// Smallest test MSE reachable by any predictor that sees only (n, m): the
/// within-group variance of the targets grouped by node and edge count.
inline double conditional_variance_bound(const std::vector<RegressionGraph>& graphs) {
    require(!graphs.empty(), "conditional_variance_bound: no graphs");
    std::map<std::pair<std::size_t, std::size_t>, std::vector<double>> groups;
    for (const auto& r : graphs) groups[{r.graph.n, r.graph.m()}].push_back(r.target);
    double s = 0.0;
    for (const auto& [key, ys] : groups) {
        const double mean = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(ys.size());
        for (double y : ys) s += (y - mean) * (y - mean);
    }
    return s / static_cast<double>(graphs.size());
}

struct RegressionDemo {
    RegressionRun with_ids, without_ids;
    double lower_bound = 0.0;  // conditional variance on the test set
};

/// Paired runs on one dataset: ORF + type identifiers versus neither.
inline RegressionDemo train_regression_demo(const RegressionConfig& cfg) {
    const auto data = ba_dataset(cfg.train_count, cfg.test_count, derive_seed(cfg.seed, 0x7a1));
    const auto scaler = fit_target_scaler(data.train);
    const auto train = prepare_regression_graphs(data.train, scaler);
    const auto test = prepare_regression_graphs(data.test, scaler);
    RegressionDemo out;
    auto with = cfg;
    with.use_ids = true;
    auto without = cfg;
    without.use_ids = false;
    out.with_ids = train_regression(with, train, test);
    out.without_ids = train_regression(without, train, test);
    out.lower_bound = conditional_variance_bound(test);
    return out;
}

struct DistanceRow {
    std::size_t layer = 0, head = 0;
    double mean_hops = 0.0;
};

/// Mean attention hop distance per layer and head, averaged over graphs that
/// have at least one pair of distinct connected tokens.
inline std::vector<DistanceRow> attention_distance_report(const RegressionModel& m,
                                                          const std::vector<RegressionGraph>& graphs,
                                                          RngSeed seed) {
    require(!m.layers.empty(), "attention_distance_report: model has no layers");
    const std::size_t L = m.layers.size(), H = m.layers.front().msa.H;
    std::vector<double> sum(L * H, 0.0);
    std::size_t used = 0;
    for (std::size_t i = 0; i < graphs.size(); ++i) {
        const auto& r = graphs[i];
        if (r.graph.n < 2) continue;
        Rng rng(regression_eval_seed(seed, i));
        std::vector<std::vector<Matrix>> attn;
        regression_forward(m, r, regression_identifiers(m, r, rng), nullptr, 1.0, &attn);
        const auto ts = regression_token_sequence(r);
        const Matrix hops = hop_distances(r.graph);
        for (std::size_t l = 0; l < L; ++l) {
            const auto dist = attention_distance(attn[l], ts, hops);
            for (std::size_t h = 0; h < H; ++h) sum[l * H + h] += dist[h];
        }
        ++used;
    }
    require(used > 0, "attention_distance_report: no graph with two or more nodes");
    std::vector<DistanceRow> rows;
    for (std::size_t l = 0; l < L; ++l)
        for (std::size_t h = 0; h < H; ++h) rows.push_back({l, h, sum[l * H + h] / static_cast<double>(used)});
    return rows;
}

inline void write_distance_csv(std::ostream& os, const std::vector<DistanceRow>& rows) {
    os << "layer,head,mean_hops\n";
    os.precision(17);
    for (const auto& r : rows) os << r.layer << ',' << r.head << ',' << r.mean_hops << '\n';
}

}  // namespace tokengt
