// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Usage: acceptance [criterion numbers...]   (default: all)

#include "tokengt/tokengt.hpp"

#include <malloc.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <cerrno>
#include <map>
#include <iostream>
#include <set>
#include <string>

using namespace tokengt;

// ---------------------------------------------------------------------------
// Heap accounting. Eigen allocates through malloc, so malloc itself is wrapped.

extern "C" {
void* __libc_malloc(std::size_t);
void* __libc_calloc(std::size_t, std::size_t);
void* __libc_realloc(void*, std::size_t);
void* __libc_memalign(std::size_t, std::size_t);
void __libc_free(void*);
}

namespace heap {
std::atomic<bool> on{false};
std::atomic<long long> current{0}, peak{0}, largest{0};

inline void add(void* p) {
    if (!p || !on.load(std::memory_order_relaxed)) return;
    const auto sz = static_cast<long long>(malloc_usable_size(p));
    const long long now = current.fetch_add(sz) + sz;
    long long old = peak.load();
    while (now > old && !peak.compare_exchange_weak(old, now)) {}
    old = largest.load();
    while (sz > old && !largest.compare_exchange_weak(old, sz)) {}
}
inline void sub(void* p) {
    if (!p || !on.load(std::memory_order_relaxed)) return;
    current.fetch_sub(static_cast<long long>(malloc_usable_size(p)));
}

struct Usage {
    long long peak_bytes = 0, largest_block = 0;
};

/// Peak live bytes above the starting level while `fn` runs.
template <class Fn>
Usage measure(Fn&& fn) {
    current = 0;
    peak = 0;
    largest = 0;
    on = true;
    fn();
    on = false;
    return {peak.load(), largest.load()};
}
}  // namespace heap

extern "C" {
void* malloc(std::size_t n) {
    void* p = __libc_malloc(n);
    heap::add(p);
    return p;
}
void* calloc(std::size_t a, std::size_t b) {
    void* p = __libc_calloc(a, b);
    heap::add(p);
    return p;
}
void* realloc(void* old, std::size_t n) {
    heap::sub(old);
    void* p = __libc_realloc(old, n);
    heap::add(p ? p : (n == 0 ? nullptr : old));
    return p;
}
void free(void* p) {
    heap::sub(p);
    __libc_free(p);
}
void* memalign(std::size_t align, std::size_t n) {
    void* p = __libc_memalign(align, n);
    heap::add(p);
    return p;
}
void* aligned_alloc(std::size_t align, std::size_t n) { return memalign(align, n); }
int posix_memalign(void** out, std::size_t align, std::size_t n) {
    void* p = memalign(align, n);
    if (!p) return ENOMEM;
    *out = p;
    return 0;
}
}

// ---------------------------------------------------------------------------

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

DenseTensor random_tensor(std::size_t k, std::size_t n, std::size_t d, RngSeed seed) {
    return DenseTensor::from_matrix(k, n, gaussian_matrix(DenseTensor::ipow(n, k), d, seed));
}

ConstructiveConfig constructive(std::size_t k, double a) {
    ConstructiveConfig c;
    c.k = k;
    c.a = a;
    return c;
}

// 1. Attention heads reproduce every normalized order-4 basis tensor.
Outcome criterion1() {
    constexpr double kTol = 1e-6;
    const double sharpness[] = {1.0, 10.0, 100.0, 1000.0};
    double worst = 0.0;
    bool monotone = true;
    for (std::size_t n = 3; n <= 8; ++n)
        for (const auto& mu : ClassTable::get(4).classes()) {
            double prev = std::numeric_limits<double>::infinity();
            for (double a : sharpness) {
                const double err = verify_lemma1(n, mu, constructive(2, a));
                if (err > prev) monotone = false;
                prev = err;
            }
            worst = std::max(worst, prev);
        }
    return {worst <= kTol && monotone,
            "max err at a=1e3 " + fmt(worst) + " (tol " + fmt(kTol) + "), non-increasing in a: " +
                (monotone ? "yes" : "no")};
}

// 2. One constructed layer equals a random equivariant linear layer.
Outcome criterion2() {
    double worst_ratio = 0.0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        Rng rng(RngSeed{1000 + s});
        const auto p = EquivariantLayerParams::random(2, 2, 2, 2, rng);
        const auto x = random_tensor(2, 4, 2, RngSeed{2000 + s});
        worst_ratio = std::max(worst_ratio, verify_theorem2(x, p, constructive(2, 1e3)) / (1e-4 * (1 + oracle_scale(x, p))));
    }
    double worst_first = 0.0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        Rng rng(RngSeed{3000 + s});
        const auto p = EquivariantLayerParams::random(1, 1, 2, 2, rng);
        const auto x = random_tensor(1, 4, 2, RngSeed{4000 + s});
        worst_first = std::max(worst_first, verify_theorem2(x, p, constructive(1, 1e3)) / (1e-4 * (1 + oracle_scale(x, p))));
    }
    return {worst_ratio <= 1.0 && worst_first <= 1.0,
            "max err / (1e-4 (1 + |oracle|)) order 2: " + fmt(worst_ratio) + ", order 1: " + fmt(worst_first)};
}

// 3. Stacked constructed layers equal a two-layer 2-IGN.
Outcome criterion3() {
    constexpr double kTol = 1e-3;
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 5; ++s) {
        Rng rng(RngSeed{5000 + s});
        IGNSpec spec = IGNSpec::random(2, {2, 2, 2}, 2, {2, 2}, rng);
        spec.activation = Activation::Relu;
        const auto x = random_tensor(2, 4, 2, RngSeed{6000 + s});
        worst = std::max(worst, verify_theorem3(x, spec, constructive(2, 1e3)).maxCoeff());
    }
    return {worst <= kTol, "max per-channel deviation " + fmt(worst) + " (tol " + fmt(kTol) + ")"};
}

// 4. Learned basis approximation at desk scale.
struct ModeSpec {
    std::string label;
    IdentifierMode mode;
    bool type_ids;
};

Outcome criterion4() {
    const ModeSpec modes[] = {{"none", IdentifierMode::None, false},
                              {"type-only", IdentifierMode::None, true},
                              {"orf+type", IdentifierMode::ORF, true},
                              {"random+type", IdentifierMode::Random, true},
                              {"orf-first-order+type", IdentifierMode::ORFFirstOrder, true}};
    constexpr std::size_t kSeeds = 3;
    bool all = true;
    std::string detail;
    for (auto layout : {Layout::Sparse, Layout::Dense}) {
        std::map<std::string, double> mean;
        for (std::uint64_t s = 0; s < kSeeds; ++s) {
            SyntheticConfig base;
            base.layout = layout;
            base.seed = RngSeed{s};
            base.batch = layout == Layout::Sparse ? 4 : 2;
            const auto data = ba_dataset(base.train_count, base.test_count, derive_seed(base.seed, 0xba));
            const auto train = prepare_basis_graphs(data.train, layout);
            const auto test = prepare_basis_graphs(data.test, layout);
            for (const auto& m : modes) {
                auto cfg = base;
                cfg.mode = m.mode;
                cfg.type_ids = m.type_ids;
                const auto t0 = std::chrono::steady_clock::now();
                const auto run = train_synthetic(cfg, train);
                const double l2 = eval_basis_l2(run.model, test, cfg).mean;
                mean[m.label] += l2 / kSeeds;
                std::cout << "  [4] " << to_string(layout) << ' ' << m.label << " seed " << s << " test L2 " << fmt(l2)
                          << " (" << fmt(seconds_since(t0)) << " s)" << std::endl;
            }
        }
        const double none = mean["none"], type = mean["type-only"], orf = mean["orf+type"],
                     rnd = mean["random+type"], first = mean["orf-first-order+type"];
        const bool a = orf <= 0.1 * none, b = none > type && type > orf, c = rnd > orf, d = first >= 10 * orf;
        all = all && a && b && c && d;
        detail += to_string(layout) + ": none " + fmt(none) + " type " + fmt(type) + " orf " + fmt(orf) + " random " +
                  fmt(rnd) + " first-order " + fmt(first) + " [a " + (a ? "ok" : "no") + ", b " + (b ? "ok" : "no") +
                  ", c " + (c ? "ok" : "no") + ", d " + (d ? "ok" : "no") + "]; ";
    }
    return {all, detail};
}

// 5. Invariance, equivariance and the basis partition.
Outcome criterion5() {
    constexpr double kTol = 1e-9;
    double worst = 0.0;
    Rng rng(RngSeed{7000});
    for (std::size_t n = 3; n <= 5; ++n) {
        const IGNSpec spec = IGNSpec::random(2, {2, 3, 2}, 2, {3, 1}, rng);
        const auto x = random_tensor(2, n, 2, RngSeed{7100 + n});
        const RowVector y = ign_forward(spec, x);
        for (int t = 0; t < 20; ++t)
            worst = std::max(worst, (ign_forward(spec, permute_tensor(x, random_permutation(n, rng))) - y).cwiseAbs().maxCoeff());
        for (std::size_t k = 1; k <= 2; ++k)
            for (std::size_t l = 0; l <= 2; ++l) {
                const auto p = EquivariantLayerParams::random(k, l, 2, 2, rng);
                const auto xk = random_tensor(k, n, 2, RngSeed{7200 + 10 * n + k});
                const auto out = equivariant_linear_apply(p, xk);
                for (int t = 0; t < 20; ++t) {
                    const auto pi = random_permutation(n, rng);
                    const Matrix lhs = equivariant_linear_apply(p, permute_tensor(xk, pi)).as_matrix();
                    const Matrix rhs = l == 0 ? out.as_matrix() : permute_tensor(out, pi).as_matrix();
                    worst = std::max(worst, (lhs - rhs).cwiseAbs().maxCoeff());
                }
            }
    }
    bool partition = true;
    for (std::size_t n = 1; n <= 5; ++n) {
        Matrix sum = Matrix::Zero(static_cast<Eigen::Index>(DenseTensor::ipow(n, 4)), 1);
        for (const auto& mu : ClassTable::get(4).classes()) sum += basis_tensor(mu, n).materialize().as_matrix();
        partition = partition && (sum.array() == 1.0).all();
    }
    return {worst <= kTol && partition,
            "max permutation error " + fmt(worst) + " (tol " + fmt(kTol) + "), partition exact: " + (partition ? "yes" : "no")};
}

// 6. Score-path gradients against central differences.
Outcome criterion6() {
    constexpr double kTol = 1e-4, kEps = 1e-5, kFloor = 1e-6;
    Rng rng(RngSeed{8000});
    double worst = 0.0;
    for (int probe = 0; probe < 50; ++probe) {
        const std::size_t N = static_cast<std::size_t>(rng.uniform_int(3, 8));
        const std::size_t d = static_cast<std::size_t>(rng.uniform_int(2, 6));
        const std::size_t H = static_cast<std::size_t>(rng.uniform_int(1, 3));
        Matrix x = gaussian_matrix(N, d, rng);
        auto p = MSAParams::random(H, d, 3, 2, rng, 0.7);
        for (auto& b : p.bq) b = gaussian_matrix(1, 3, rng) * 0.3;
        for (auto& b : p.bk) b = gaussian_matrix(1, 3, rng) * 0.3;
        std::vector<Matrix> up;
        for (std::size_t h = 0; h < H; ++h) up.push_back(gaussian_matrix(N, N, rng));
        const auto g = attention_score_gradients(x, p, up);
        auto objective = [&] {
            double s = 0.0;
            const auto r = msa_forward(x, p);
            for (std::size_t h = 0; h < H; ++h) s += (r.attn[h].array() * up[h].array()).sum();
            return s;
        };
        const auto h = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(H) - 1));
        const int which = rng.uniform_int(0, 4);
        Matrix* target = nullptr;
        const Matrix* analytic = nullptr;
        switch (which) {
            case 0: target = &p.Wq[h]; analytic = &g.dWq[h]; break;
            case 1: target = &p.Wk[h]; analytic = &g.dWk[h]; break;
            case 2: target = &p.bq[h]; analytic = &g.dbq[h]; break;
            case 3: target = &p.bk[h]; analytic = &g.dbk[h]; break;
            default: target = &x; analytic = &g.dx; break;
        }
        const auto idx = static_cast<Eigen::Index>(rng.uniform_int(0, static_cast<int>(target->size()) - 1));
        const double orig = (*target)(idx);
        (*target)(idx) = orig + kEps;
        const double up_v = objective();
        (*target)(idx) = orig - kEps;
        const double dn_v = objective();
        (*target)(idx) = orig;
        const double fd = (up_v - dn_v) / (2 * kEps);
        const double an = (*analytic)(idx);
        worst = std::max(worst, std::abs(an - fd) / std::max({std::abs(fd), std::abs(an), kFloor}));
    }
    return {worst <= kTol, "max relative error over 50 probes " + fmt(worst) + " (tol " + fmt(kTol) + ")"};
}

// 7. Kernel attention accuracy and memory.
Outcome criterion7() {
    const std::size_t features[] = {16, 64, 256};
    std::vector<double> medians;
    for (std::size_t m : features) {
        std::vector<double> errs;
        for (std::uint64_t s = 0; s < 20; ++s) {
            const Matrix q = gaussian_matrix(64, 16, RngSeed{9000 + s}) * 0.5;
            const Matrix k = gaussian_matrix(64, 16, RngSeed{9100 + s}) * 0.5;
            const Matrix v = gaussian_matrix(64, 16, RngSeed{9200 + s});
            const Matrix exact = exact_softmax_attention(q, k, v);
            errs.push_back((favor_attention(q, k, v, {m, RngSeed{9300 + s}, 256}) - exact).norm() / exact.norm());
        }
        std::sort(errs.begin(), errs.end());
        medians.push_back(0.5 * (errs[9] + errs[10]));
    }
    const bool decreasing = medians[0] > medians[1] && medians[1] > medians[2];

    constexpr std::size_t kN = 4096, kD = 16;
    const Matrix q = gaussian_matrix(kN, kD, RngSeed{9400}) * 0.5;
    const Matrix k = gaussian_matrix(kN, kD, RngSeed{9401}) * 0.5;
    const Matrix v = gaussian_matrix(kN, kD, RngSeed{9402});
    Matrix sink;
    const auto favor = heap::measure([&] { sink = favor_attention(q, k, v, {64, RngSeed{9403}, 256}); });
    sink.resize(0, 0);
    const auto exact = heap::measure([&] { sink = exact_softmax_attention(q, k, v); });
    const long long nn_bytes = static_cast<long long>(kN * kN * sizeof(double));
    const bool memory = favor.peak_bytes * 10 <= exact.peak_bytes && favor.largest_block < nn_bytes;
    return {decreasing && memory,
            "median rel err m_f=16/64/256: " + fmt(medians[0]) + " / " + fmt(medians[1]) + " / " + fmt(medians[2]) +
                "; peak heap at N=4096 favor " + std::to_string(favor.peak_bytes) + " B vs exact " +
                std::to_string(exact.peak_bytes) + " B (ratio " +
                fmt(static_cast<double>(exact.peak_bytes) / static_cast<double>(std::max(1LL, favor.peak_bytes))) +
                ", need >= 10), largest favor block " + std::to_string(favor.largest_block) + " B"};
}

// 8. Identifier ablation on triangle counts.
Outcome criterion8() {
    bool all = true;
    std::string detail;
    for (std::uint64_t s = 0; s < 3; ++s) {
        RegressionConfig cfg;
        cfg.seed = RngSeed{s};
        const auto t0 = std::chrono::steady_clock::now();
        const auto demo = train_regression_demo(cfg);
        const double with = demo.with_ids.test_mse, without = demo.without_ids.test_mse;
        const bool ratio = with <= 0.7 * without, bound = without >= 0.9 * demo.lower_bound;
        all = all && ratio && bound;
        std::cout << "  [8] seed " << s << " mse orf+type " << fmt(with) << " none " << fmt(without) << " bound "
                  << fmt(demo.lower_bound) << " (" << fmt(seconds_since(t0)) << " s)" << std::endl;
        detail += "seed " + std::to_string(s) + ": ratio " + fmt(with / without) + " (<= 0.7), none/bound " +
                  fmt(without / demo.lower_bound) + " (>= 0.9); ";
    }
    return {all, detail};
}

// 9. Dataset statistics.
Outcome criterion9() {
    const auto graphs = sample_ba_graphs(1000, RngSeed{0x5eed});
    const auto st = dataset_stats(graphs);
    return {std::abs(st.mean_nodes - 15.0) <= 0.5,
            "mean nodes " + fmt(st.mean_nodes) + " (15.0 +- 0.5); mean edges " + fmt(st.mean_edges) + " (recorded only)"};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    Outcome (*const criteria[])() = {criterion1, criterion2, criterion3, criterion4, criterion5,
                                     criterion6, criterion7, criterion8, criterion9};
    int failures = 0;
    for (int c = 1; c <= 9; ++c) {
        if (!only.empty() && !only.count(c)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = criteria[c - 1]();
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        failures += !out.pass;
        std::cout << "CRITERION " << c << ' ' << (out.pass ? "PASS" : "FAIL") << " (" << fmt(seconds_since(t0))
                  << " s) " << out.detail << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
