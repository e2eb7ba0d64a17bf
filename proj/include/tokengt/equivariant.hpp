#pragma once

#include "tokengt/graphs.hpp"
#include "tokengt/numerics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace tokengt {

/// Set partition of l positions, stored as a restricted-growth string.
struct EquivalenceClass {
    std::vector<int> rgs;

    std::size_t order() const { return rgs.size(); }
    int blocks() const { return rgs.empty() ? 0 : *std::max_element(rgs.begin(), rgs.end()) + 1; }

    /// "0,1,0" style key used for serialization.
    std::string key() const {
        std::string s;
        for (std::size_t i = 0; i < rgs.size(); ++i) {
            if (i) s += ',';
            s += std::to_string(rgs[i]);
        }
        return s;
    }

    static EquivalenceClass from_key(const std::string& key) {
        EquivalenceClass c;
        std::size_t pos = 0;
        while (pos < key.size()) {
            const auto comma = key.find(',', pos);
            c.rgs.push_back(std::stoi(key.substr(pos, comma - pos)));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (!c.valid()) throw std::invalid_argument("EquivalenceClass: not a restricted-growth string: " + key);
        return c;
    }

    bool valid() const {
        int next = 0;
        for (int b : rgs) {
            if (b < 0 || b > next) return false;
            if (b == next) ++next;
        }
        return true;
    }

    /// Split into (query part of length l, key part) with block ids kept.
    bool same_block(std::size_t p, std::size_t q) const { return rgs.at(p) == rgs.at(q); }

    auto operator<=>(const EquivalenceClass&) const = default;
};

inline std::size_t bell_number(std::size_t l) {
    if (l > 8) throw std::invalid_argument("bell_number: order above 8 is not supported");
    // Bell triangle.
    std::vector<std::size_t> row{1};
    for (std::size_t i = 0; i < l; ++i) {
        std::vector<std::size_t> next{row.back()};
        for (std::size_t v : row) next.push_back(next.back() + v);
        row = std::move(next);
    }
    return row.front();
}

/// Restricted-growth string of the equality pattern of `idx`.
inline EquivalenceClass class_of(std::span<const int> idx) {
    EquivalenceClass c;
    c.rgs.resize(idx.size());
    int next = 0;
    for (std::size_t p = 0; p < idx.size(); ++p) {
        int block = -1;
        for (std::size_t q = 0; q < p; ++q)
            if (idx[q] == idx[p]) {
                block = c.rgs[q];
                break;
            }
        c.rgs[p] = block >= 0 ? block : next++;
    }
    return c;
}

namespace detail {

inline void enumerate_rgs(std::size_t l, std::vector<int>& cur, int next, std::vector<EquivalenceClass>& out) {
    if (cur.size() == l) {
        out.push_back(EquivalenceClass{cur});
        return;
    }
    for (int b = 0; b <= next; ++b) {
        cur.push_back(b);
        enumerate_rgs(l, cur, std::max(next, b + 1), out);
        cur.pop_back();
    }
}

// Packs an RGS of length <= 8 with entries < 8 into 24 bits (plus length).
inline std::uint32_t pack_rgs(std::span<const int> rgs) {
    std::uint32_t code = static_cast<std::uint32_t>(rgs.size());
    for (int b : rgs) code = (code << 3) | static_cast<std::uint32_t>(b);
    return code;
}

}  // namespace detail

/// All bell(l) classes in lexicographic order. l = 0 yields the single empty class.
inline std::vector<EquivalenceClass> enumerate_classes(std::size_t l) {
    if (l > 8) throw std::invalid_argument("enumerate_classes: order above 8 is not supported");
    std::vector<EquivalenceClass> out;
    std::vector<int> cur;
    detail::enumerate_rgs(l, cur, 0, out);
    return out;
}

/// Cached class list plus reverse lookup for one order.
class ClassTable {
public:
    explicit ClassTable(std::size_t order) : order_(order), classes_(enumerate_classes(order)) {
        for (std::size_t i = 0; i < classes_.size(); ++i)
            lookup_.emplace(detail::pack_rgs(classes_[i].rgs), static_cast<int>(i));
    }

    std::size_t order() const { return order_; }
    std::size_t size() const { return classes_.size(); }
    const EquivalenceClass& operator[](std::size_t i) const { return classes_[i]; }
    const std::vector<EquivalenceClass>& classes() const { return classes_; }

    int index_of(const EquivalenceClass& c) const {
        const auto it = lookup_.find(detail::pack_rgs(c.rgs));
        if (c.order() != order_ || it == lookup_.end())
            throw std::invalid_argument("ClassTable: class of wrong order");
        return it->second;
    }

    /// Index of class_of(idx) without allocating.
    int index_of_multi_index(std::span<const int> idx) const {
        int rgs[8];
        int next = 0;
        for (std::size_t p = 0; p < idx.size(); ++p) {
            int block = -1;
            for (std::size_t q = 0; q < p; ++q)
                if (idx[q] == idx[p]) {
                    block = rgs[q];
                    break;
                }
            rgs[p] = block >= 0 ? block : next++;
        }
        return lookup_.at(detail::pack_rgs(std::span<const int>(rgs, idx.size())));
    }

    /// Shared instance per order.
    static const ClassTable& get(std::size_t order) {
        static std::mutex mu;
        static std::map<std::size_t, std::unique_ptr<ClassTable>> cache;
        std::lock_guard lock(mu);
        auto& slot = cache[order];
        if (!slot) slot = std::make_unique<ClassTable>(order);
        return *slot;
    }

private:
    std::size_t order_;
    std::vector<EquivalenceClass> classes_;
    std::unordered_map<std::uint32_t, int> lookup_;
};

inline constexpr std::size_t kMaterializeLimit = 1'000'000;

/// Indicator tensor of one equivalence class over [n]^order.
class BasisTensor {
public:
    BasisTensor(EquivalenceClass cls, std::size_t n) : cls_(std::move(cls)), n_(n) {}

    const EquivalenceClass& equivalence_class() const { return cls_; }
    std::size_t n() const { return n_; }
    std::size_t order() const { return cls_.order(); }

    bool contains(std::span<const int> idx) const {
        if (idx.size() != cls_.order()) throw std::invalid_argument("BasisTensor: index order mismatch");
        return class_of(idx) == cls_;
    }

    /// Dense 0/1 tensor (one channel); guarded at kMaterializeLimit entries.
    DenseTensor materialize() const {
        const auto entries = DenseTensor::ipow(n_, order());
        if (entries > kMaterializeLimit)
            throw std::length_error("BasisTensor: materialization exceeds size guard");
        DenseTensor t(order(), n_, 1);
        if (static_cast<std::size_t>(cls_.blocks()) > n_) return t;
        for (std::size_t e = 0; e < entries; ++e)
            if (contains(t.multi_index(e))) t.entry(e)[0] = 1.0;
        return t;
    }

private:
    EquivalenceClass cls_;
    std::size_t n_;
};

inline BasisTensor basis_tensor(const EquivalenceClass& cls, std::size_t n) { return BasisTensor(cls, n); }

/// Parameters of L_{k->l}: one d_in x d_out weight per order-(l+k) class and
/// one d_out bias per order-l class, both in canonical class order.
struct EquivariantLayerParams {
    std::size_t k = 1;
    std::size_t l = 1;
    std::size_t d_in = 1;
    std::size_t d_out = 1;
    std::vector<Matrix> weights;
    std::vector<RowVector> biases;

    static EquivariantLayerParams zeros(std::size_t k, std::size_t l, std::size_t d_in, std::size_t d_out) {
        EquivariantLayerParams p{k, l, d_in, d_out, {}, {}};
        p.weights.assign(bell_number(l + k), Matrix::Zero(d_in, d_out));
        p.biases.assign(bell_number(l), RowVector::Zero(d_out));
        return p;
    }

    static EquivariantLayerParams random(std::size_t k, std::size_t l, std::size_t d_in, std::size_t d_out,
                                         Rng& rng, double scale = 1.0) {
        auto p = zeros(k, l, d_in, d_out);
        for (auto& w : p.weights) w = gaussian_matrix(d_in, d_out, rng) * scale;
        for (auto& b : p.biases) b = gaussian_matrix(1, d_out, rng).row(0) * scale;
        return p;
    }

    void validate() const {
        if (weights.size() != bell_number(l + k) || biases.size() != bell_number(l))
            throw std::invalid_argument("EquivariantLayerParams: wrong number of weights/biases");
        for (const auto& w : weights)
            if (w.rows() != static_cast<Eigen::Index>(d_in) || w.cols() != static_cast<Eigen::Index>(d_out))
                throw std::invalid_argument("EquivariantLayerParams: weight shape mismatch");
        for (const auto& b : biases)
            if (b.size() != static_cast<Eigen::Index>(d_out))
                throw std::invalid_argument("EquivariantLayerParams: bias shape mismatch");
    }
};

/// L_{k->l}(X)_i = sum_mu sum_j B^mu_{i,j} X_j w_mu + sum_lambda C^lambda_i b_lambda.
/// Keys are accumulated per joint class first, then each class sum meets its weight once.
inline DenseTensor equivariant_linear_apply(const EquivariantLayerParams& p, const DenseTensor& x) {
    p.validate();
    if (x.order() != p.k || x.channels() != p.d_in)
        throw std::invalid_argument("equivariant_linear_apply: input order/channels mismatch");
    const std::size_t n = x.n();
    const auto& joint = ClassTable::get(p.l + p.k);
    const auto& out_classes = ClassTable::get(p.l);
    DenseTensor out(p.l, n, p.d_out);
    const std::size_t out_entries = out.entries();
    const std::size_t in_entries = x.entries();

    Matrix sums(static_cast<Eigen::Index>(joint.size()), static_cast<Eigen::Index>(p.d_in));
    std::vector<int> ij(p.l + p.k);
    std::vector<int> i_idx(p.l);
    for (std::size_t oi = 0; oi < out_entries; ++oi) {
        sums.setZero();
        std::size_t rem = oi;
        for (std::size_t q = p.l; q-- > 0;) {
            i_idx[q] = static_cast<int>(rem % n);
            rem /= n;
        }
        std::copy(i_idx.begin(), i_idx.end(), ij.begin());
        for (std::size_t ej = 0; ej < in_entries; ++ej) {
            std::size_t r = ej;
            for (std::size_t q = p.k; q-- > 0;) {
                ij[p.l + q] = static_cast<int>(r % n);
                r /= n;
            }
            const int mu = joint.index_of_multi_index(ij);
            const auto xj = x.entry(ej);
            for (std::size_t c = 0; c < p.d_in; ++c) sums(mu, static_cast<Eigen::Index>(c)) += xj[c];
        }
        RowVector acc = p.biases[static_cast<std::size_t>(out_classes.index_of_multi_index(i_idx))];
        for (std::size_t mu = 0; mu < joint.size(); ++mu)
            acc += sums.row(static_cast<Eigen::Index>(mu)) * p.weights[mu];
        auto dst = out.entry(oi);
        for (std::size_t c = 0; c < p.d_out; ++c) dst[c] = acc(static_cast<Eigen::Index>(c));
    }
    return out;
}

/// L_{k->0}: returns the single d_out vector.
inline RowVector invariant_apply(const EquivariantLayerParams& p, const DenseTensor& x) {
    if (p.l != 0) throw std::invalid_argument("invariant_apply: output order must be 0");
    const auto out = equivariant_linear_apply(p, x);
    RowVector v(static_cast<Eigen::Index>(p.d_out));
    for (std::size_t c = 0; c < p.d_out; ++c) v(static_cast<Eigen::Index>(c)) = out.entry(0)[c];
    return v;
}

enum class Activation { Relu, Identity, Tanh };

inline double activate(Activation a, double v) {
    switch (a) {
        case Activation::Relu: return v > 0.0 ? v : 0.0;
        case Activation::Tanh: return std::tanh(v);
        case Activation::Identity: break;
    }
    return v;
}

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::Relu: return "relu";
        case Activation::Tanh: return "tanh";
        case Activation::Identity: break;
    }
    return "identity";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::Relu;
    if (s == "tanh") return Activation::Tanh;
    if (s == "identity") return Activation::Identity;
    throw std::invalid_argument("unknown activation: " + s);
}

struct AffineLayer {
    Matrix w;  // in x out
    RowVector b;
};

/// Order-k invariant graph network: equivariant stack, invariant head, output MLP.
struct IGNSpec {
    std::size_t k = 2;
    std::vector<EquivariantLayerParams> layers;  // each k -> k
    Activation activation = Activation::Relu;
    EquivariantLayerParams head;                 // k -> 0
    std::vector<AffineLayer> mlp;                // activation between, none after the last

    std::size_t input_width() const { return layers.empty() ? head.d_in : layers.front().d_in; }

    void validate() const {
        std::size_t width = input_width();
        for (const auto& layer : layers) {
            layer.validate();
            if (layer.k != k || layer.l != k || layer.d_in != width)
                throw std::invalid_argument("IGNSpec: layer widths/orders do not chain");
            width = layer.d_out;
        }
        head.validate();
        if (head.k != k || head.l != 0 || head.d_in != width)
            throw std::invalid_argument("IGNSpec: head does not match last layer");
        width = head.d_out;
        for (const auto& a : mlp) {
            if (a.w.rows() != static_cast<Eigen::Index>(width) || a.b.size() != a.w.cols())
                throw std::invalid_argument("IGNSpec: MLP widths do not chain");
            width = static_cast<std::size_t>(a.w.cols());
        }
    }

    /// Random spec with the given per-layer widths (widths[0] is the input width).
    static IGNSpec random(std::size_t k, const std::vector<std::size_t>& widths, std::size_t head_width,
                          const std::vector<std::size_t>& mlp_widths, Rng& rng, double scale = 0.5) {
        IGNSpec s;
        s.k = k;
        for (std::size_t t = 0; t + 1 < widths.size(); ++t)
            s.layers.push_back(EquivariantLayerParams::random(k, k, widths[t], widths[t + 1], rng, scale));
        s.head = EquivariantLayerParams::random(k, 0, widths.back(), head_width, rng, scale);
        std::size_t in = head_width;
        for (std::size_t w : mlp_widths) {
            s.mlp.push_back({gaussian_matrix(in, w, rng) * scale, gaussian_matrix(1, w, rng).row(0) * scale});
            in = w;
        }
        return s;
    }
};

inline RowVector mlp_forward(const std::vector<AffineLayer>& mlp, Activation act, RowVector v) {
    for (std::size_t i = 0; i < mlp.size(); ++i) {
        v = v * mlp[i].w + mlp[i].b;
        if (i + 1 < mlp.size())
            for (Eigen::Index c = 0; c < v.size(); ++c) v(c) = activate(act, v(c));
    }
    return v;
}

inline DenseTensor apply_activation(DenseTensor x, Activation act) {
    for (double& v : x.data()) v = activate(act, v);
    return x;
}

/// MLP . L_{k->0} . L^(T) . sigma . ... . sigma . L^(1)
inline RowVector ign_forward(const IGNSpec& spec, const DenseTensor& x) {
    spec.validate();
    if (x.order() != spec.k || x.channels() != spec.input_width())
        throw std::invalid_argument("ign_forward: input does not match spec");
    DenseTensor h = x;
    for (std::size_t t = 0; t < spec.layers.size(); ++t) {
        h = equivariant_linear_apply(spec.layers[t], h);
        if (t + 1 < spec.layers.size()) h = apply_activation(std::move(h), spec.activation);
    }
    return mlp_forward(spec.mlp, spec.activation, invariant_apply(spec.head, h));
}

// ---------------------------------------------------------------------------
// Serialization: weights/biases keyed by restricted-growth string.

namespace detail {
inline nlohmann::json matrix_to_json(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j, std::size_t rows, std::size_t cols) {
    if (j.size() != rows) throw std::invalid_argument("matrix_from_json: row count mismatch");
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
        if (j[r].size() != cols) throw std::invalid_argument("matrix_from_json: column count mismatch");
        for (std::size_t c = 0; c < cols; ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
    }
    return m;
}

inline nlohmann::json row_vector_to_json(const RowVector& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
    return arr;
}

inline RowVector row_vector_from_json(const nlohmann::json& j, std::size_t size) {
    if (j.size() != size) throw std::invalid_argument("row_vector_from_json: size mismatch");
    RowVector v(static_cast<Eigen::Index>(size));
    for (std::size_t i = 0; i < size; ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    return v;
}
}  // namespace detail

inline nlohmann::json to_json(const EquivariantLayerParams& p) {
    nlohmann::json j{{"k", p.k}, {"l", p.l}, {"d_in", p.d_in}, {"d_out", p.d_out}};
    const auto& joint = ClassTable::get(p.l + p.k);
    const auto& outc = ClassTable::get(p.l);
    for (std::size_t i = 0; i < joint.size(); ++i)
        j["weights"][joint[i].key()] = detail::matrix_to_json(p.weights[i]);
    for (std::size_t i = 0; i < outc.size(); ++i) j["biases"][outc[i].key()] = detail::row_vector_to_json(p.biases[i]);
    return j;
}

inline EquivariantLayerParams layer_from_json(const nlohmann::json& j) {
    auto p = EquivariantLayerParams::zeros(j.at("k").get<std::size_t>(), j.at("l").get<std::size_t>(),
                                           j.at("d_in").get<std::size_t>(), j.at("d_out").get<std::size_t>());
    const auto& joint = ClassTable::get(p.l + p.k);
    const auto& outc = ClassTable::get(p.l);
    for (std::size_t i = 0; i < joint.size(); ++i)
        p.weights[i] = detail::matrix_from_json(j.at("weights").at(joint[i].key()), p.d_in, p.d_out);
    for (std::size_t i = 0; i < outc.size(); ++i)
        p.biases[i] = detail::row_vector_from_json(j.at("biases").at(outc[i].key()), p.d_out);
    return p;
}

inline nlohmann::json to_json(const IGNSpec& s) {
    nlohmann::json j{{"k", s.k}, {"activation", to_string(s.activation)}};
    j["layers"] = nlohmann::json::array();
    for (const auto& l : s.layers) j["layers"].push_back(to_json(l));
    j["head"] = to_json(s.head);
    j["mlp"] = nlohmann::json::array();
    for (const auto& a : s.mlp)
        j["mlp"].push_back({{"w", detail::matrix_to_json(a.w)}, {"b", detail::row_vector_to_json(a.b)}});
    return j;
}

inline IGNSpec ign_spec_from_json(const nlohmann::json& j) {
    IGNSpec s;
    s.k = j.at("k").get<std::size_t>();
    s.activation = activation_from_string(j.value("activation", std::string("relu")));
    for (const auto& l : j.at("layers")) s.layers.push_back(layer_from_json(l));
    s.head = layer_from_json(j.at("head"));
    for (const auto& a : j.at("mlp")) {
        const auto rows = a.at("w").size();
        const auto cols = rows ? a.at("w")[0].size() : 0;
        s.mlp.push_back({detail::matrix_from_json(a.at("w"), rows, cols), detail::row_vector_from_json(a.at("b"), cols)});
    }
    s.validate();
    return s;
}

}  // namespace tokengt
