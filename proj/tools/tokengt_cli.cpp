// tokengt: dataset generation, constructive verification, synthetic basis
// training/evaluation, the identifier-ablation regression and attention
// distance export. Exit codes: 0 ok, 1 a verification row failed, 2 usage
// or configuration error.

#include "tokengt/tokengt.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using namespace tokengt;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kSchemaVersion = 1;
constexpr const char* kOutEnv = "TOKENGT_OUT";

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void usage_check(bool cond, const std::string& what) {
    if (!cond) throw UsageError(what);
}

/// --out wins; otherwise $TOKENGT_OUT/<subcommand>, otherwise runs/<subcommand>.
fs::path resolve_out(const std::string& flag, const std::string& sub) {
    if (!flag.empty()) return flag;
    const char* env = std::getenv(kOutEnv);
    return fs::path(env && *env ? env : "runs") / sub;
}

fs::path prepare_out(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    usage_check(!ec && fs::is_directory(dir), "cannot create output directory " + dir.string());
    const fs::path probe = dir / ".write_probe";
    {
        std::ofstream os(probe);
        usage_check(static_cast<bool>(os), "output directory is not writable: " + dir.string());
    }
    fs::remove(probe, ec);
    return dir;
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream os(p, std::ios::binary);
    usage_check(static_cast<bool>(os), "cannot write " + p.string());
    os.precision(17);
    return os;
}

struct CsvFile {
    std::string name;
    std::vector<std::string> columns;
};

json csv_entry(const CsvFile& f) {
    return {{"file", f.name}, {"schema_version", kSchemaVersion}, {"columns", f.columns}};
}

std::ofstream open_csv(const fs::path& dir, const CsvFile& f) {
    auto os = open_out(dir / f.name);
    for (std::size_t i = 0; i < f.columns.size(); ++i) os << (i ? "," : "") << f.columns[i];
    os << '\n';
    return os;
}

void write_manifest(const fs::path& dir, const std::string& sub, json config, json outputs) {
    json m{{"tool", "tokengt"},
           {"subcommand", sub},
           {"manifest_version", kSchemaVersion},
           {"config", std::move(config)},
           {"outputs", std::move(outputs)}};
    open_out(dir / "manifest.json") << m.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Datasets on disk: <dir>/{train,test}/NNNNNN.graph plus manifest.json.

std::string graph_file_name(std::size_t i) {
    std::ostringstream s;
    s << std::setw(6) << std::setfill('0') << i << ".graph";
    return s.str();
}

GraphDataset load_dataset(const std::string& dir_flag) {
    usage_check(!dir_flag.empty(), "missing dataset path (--data)");
    const fs::path dir(dir_flag);
    usage_check(fs::is_regular_file(dir / "manifest.json"), "missing dataset path: no manifest.json in " + dir_flag);
    std::ifstream ms(dir / "manifest.json");
    const json manifest = json::parse(ms);
    usage_check(manifest.value("subcommand", "") == "gen", "not a dataset directory: " + dir_flag);
    GraphDataset data;
    for (auto [split, target] : {std::pair{"train", &data.train}, std::pair{"test", &data.test}}) {
        const auto count = manifest.at("config").at(std::string(split) + "_count").get<std::size_t>();
        for (std::size_t i = 0; i < count; ++i) {
            const fs::path p = dir / split / graph_file_name(i);
            std::ifstream is(p);
            usage_check(static_cast<bool>(is), "missing dataset path: " + p.string());
            target->push_back(load_graph(is));
        }
    }
    return data;
}

IdentifierMode parse_mode(const std::string& s) {
    // Long names for the non-orthogonal Gaussian identifiers.
    static const std::map<std::string, std::string> alias{{"random-nonorth", "random"},
                                                          {"random-nonorth-first-order", "random-first-order"}};
    const auto it = alias.find(s);
    try {
        return identifier_mode_from_string(it == alias.end() ? s : it->second);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
}

Layout parse_layout(const std::string& s) {
    try {
        return layout_from_string(s);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
}

// ---------------------------------------------------------------------------
// gen

struct GenFlags {
    std::size_t train = 512, test = 64;
    std::uint64_t seed = 0;
    int n_min = 10, n_max = 20, k_min = 2, k_max = 3;
    std::string out;
};

int cmd_gen(const GenFlags& f) {
    usage_check(f.train >= 1 && f.test >= 1, "gen: --train and --test must be >= 1");
    usage_check(f.n_min >= 3 && f.n_min <= f.n_max, "gen: need 3 <= --n-min <= --n-max");
    usage_check(f.k_min >= 2 && f.k_min <= f.k_max && f.k_max < f.n_min, "gen: need 2 <= --k-min <= --k-max < --n-min");
    const auto dir = prepare_out(resolve_out(f.out, "gen"));
    BADistribution dist{f.n_min, f.n_max, f.k_min, f.k_max};
    const auto data = ba_dataset(f.train, f.test, RngSeed{f.seed}, dist);
    for (auto [split, graphs] : {std::pair{"train", &data.train}, std::pair{"test", &data.test}}) {
        prepare_out(dir / split);
        for (std::size_t i = 0; i < graphs->size(); ++i) {
            auto os = open_out(dir / split / graph_file_name(i));
            save_graph(os, (*graphs)[i]);
        }
    }
    const auto stats = dataset_stats(data.train);
    json config{{"train_count", f.train}, {"test_count", f.test}, {"seed", f.seed},
                {"n_min", f.n_min},       {"n_max", f.n_max},     {"k_min", f.k_min},
                {"k_max", f.k_max}};
    json outputs{{"train_dir", "train"},
                 {"test_dir", "test"},
                 {"graph_format", "graph-jsonl"},
                 {"train_mean_nodes", stats.mean_nodes},
                 {"train_mean_edges", stats.mean_edges}};
    write_manifest(dir, "gen", config, outputs);
    std::cout << "wrote " << f.train + f.test << " graphs to " << dir.string() << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------
// verify

struct VerifyFlags {
    std::string theorem = "all";
    std::vector<std::size_t> k{2};
    std::vector<std::size_t> n;
    std::vector<double> a{1e3};
    std::size_t seeds = 5;
    std::size_t d_p = 0;
    std::size_t workers = 1;
    std::string out;
};

struct VerifyRow {
    std::string theorem;
    std::size_t k = 0, n = 0;
    std::string id;
    double a = 0, error = 0, tolerance = 0;
    bool pass() const { return error <= tolerance; }
};

std::string compact_rgs(const EquivalenceClass& mu) {
    std::string s;
    for (int b : mu.rgs) s += std::to_string(b);
    return s;
}

DenseTensor random_input(std::size_t k, std::size_t n, std::size_t d, RngSeed seed) {
    return DenseTensor::from_matrix(k, n, gaussian_matrix(DenseTensor::ipow(n, k), d, seed));
}

int cmd_verify(const VerifyFlags& f) {
    static const std::vector<std::string> all{"lemma1", "thm2", "thm3"};
    std::vector<std::string> theorems = f.theorem == "all" ? all : std::vector<std::string>{f.theorem};
    for (double a : f.a) usage_check(a > 0.0 && a <= kMaxSharpness, "verify: --a must be in (0, 1e8]");
    for (std::size_t k : f.k) usage_check(k >= 1 && k <= 3, "verify: --k must be in [1, 3]");
    for (std::size_t n : f.n) usage_check(n >= 2, "verify: --n must be >= 2");
    for (std::size_t n : f.n) usage_check(f.d_p == 0 || f.d_p >= n, "verify: --d-p must be 0 or >= every n");
    usage_check(f.seeds >= 1, "verify: --seeds must be >= 1");
    usage_check(f.workers >= 1, "verify: --workers must be >= 1");

    // Each job fills one or more rows; jobs run in any order, rows print in job order.
    std::vector<std::function<std::vector<VerifyRow>()>> jobs;
    for (const auto& th : theorems)
        for (std::size_t k : f.k) {
            const std::vector<std::size_t> ns =
                !f.n.empty() ? f.n : th == "lemma1" ? std::vector<std::size_t>{3, 4, 5, 6, 7, 8} : std::vector<std::size_t>{4};
            for (std::size_t n : ns)
                for (double a : f.a) {
                    ConstructiveConfig cfg;
                    cfg.k = k;
                    cfg.a = a;
                    cfg.d_p = f.d_p;
                    if (th == "lemma1") {
                        for (const auto& mu : ClassTable::get(2 * k).classes())
                            jobs.push_back([=] {
                                return std::vector<VerifyRow>{
                                    {th, k, n, compact_rgs(mu), a, verify_lemma1(n, mu, cfg), 1e-6}};
                            });
                    } else if (th == "thm2") {
                        for (std::size_t s = 0; s < f.seeds; ++s)
                            jobs.push_back([=] {
                                Rng rng(RngSeed{1000 + s});
                                const auto p = EquivariantLayerParams::random(k, k, 2, 2, rng);
                                const auto x = random_input(k, n, 2, RngSeed{2000 + s});
                                const double tol = 1e-4 * (1.0 + oracle_scale(x, p));
                                return std::vector<VerifyRow>{
                                    {th, k, n, "seed" + std::to_string(s), a, verify_theorem2(x, p, cfg), tol}};
                            });
                    } else {
                        for (std::size_t s = 0; s < f.seeds; ++s)
                            jobs.push_back([=] {
                                Rng rng(RngSeed{5000 + s});
                                IGNSpec spec = IGNSpec::random(k, {2, 2, 2}, 2, {2, 2}, rng);
                                spec.activation = Activation::Relu;
                                const auto x = random_input(k, n, 2, RngSeed{6000 + s});
                                const RowVector dev = verify_theorem3(x, spec, cfg);
                                std::vector<VerifyRow> rows;
                                for (Eigen::Index c = 0; c < dev.size(); ++c)
                                    rows.push_back({th, k, n, "seed" + std::to_string(s) + "-ch" + std::to_string(c), a,
                                                    dev(c), 1e-3});
                                return rows;
                            });
                    }
                }
        }

    const auto dir = prepare_out(resolve_out(f.out, "verify"));
    std::vector<std::vector<VerifyRow>> results(jobs.size());
    parallel_for_index(jobs.size(), f.workers, [&](std::size_t i) { results[i] = jobs[i](); });

    const CsvFile csv{"verify.csv", {"theorem", "n", "k", "id", "a", "error", "tolerance", "pass"}};
    auto os = open_csv(dir, csv);
    std::size_t rows = 0, failed = 0;
    for (const auto& rs : results)
        for (const auto& r : rs) {
            os << r.theorem << ',' << r.n << ',' << r.k << ',' << r.id << ',' << r.a << ',' << r.error << ','
               << r.tolerance << ',' << (r.pass() ? "true" : "false") << '\n';
            ++rows;
            failed += !r.pass();
        }
    json config{{"theorem", f.theorem}, {"k", f.k}, {"n", f.n}, {"a", f.a},
                {"seeds", f.seeds},     {"d_p", f.d_p}, {"workers", f.workers}};
    write_manifest(dir, "verify", config, json::array({csv_entry(csv)}));
    std::cout << rows << " rows, " << failed << " failed -> " << (dir / csv.name).string() << '\n';
    return failed == 0 ? kExitOk : kExitFailed;
}

// ---------------------------------------------------------------------------
// train / eval

struct BasisFlags {
    std::string data, out, layout = "sparse", mode = "orf";
    bool type_ids = true;
    SyntheticConfig cfg;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
};

const CsvFile kBasisCsv{"basis_l2.csv", {"mode", "layout", "seed", "split", "head", "l2"}};

void write_basis_rows(std::ostream& os, const std::string& label, const SyntheticConfig& cfg, const std::string& split,
                      const BasisEval& e) {
    const std::string prefix = label + ',' + to_string(cfg.layout) + ',' + std::to_string(cfg.seed.value) + ',' + split + ',';
    for (std::size_t h = 0; h < e.per_head.size(); ++h) os << prefix << h << ',' << e.per_head[h] << '\n';
    os << prefix << "mean," << e.mean << '\n';
}

int cmd_train(BasisFlags f) {
    auto& cfg = f.cfg;
    cfg.layout = parse_layout(f.layout);
    cfg.mode = parse_mode(f.mode);
    cfg.type_ids = f.type_ids;
    cfg.seed = RngSeed{f.seed};
    const auto data = load_dataset(f.data);
    cfg.train_count = data.train.size();
    cfg.test_count = data.test.size();
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    const auto dir = prepare_out(resolve_out(f.out, "train"));
    const auto train = prepare_basis_graphs(data.train, cfg.layout);
    const auto test = prepare_basis_graphs(data.test, cfg.layout);
    const auto run = train_synthetic(cfg, train);

    open_out(dir / "params.json") << json{{"config", to_json(cfg)}, {"model", to_json(run.model)}}.dump() << '\n';
    const CsvFile hist{"history.csv", {"step", "loss", "lr"}};
    {
        auto os = open_csv(dir, hist);
        for (std::size_t s = 0; s < run.history.loss.size(); ++s)
            os << s << ',' << run.history.loss[s] << ',' << run.history.lr[s] << '\n';
    }
    const auto tr = eval_basis_l2(run.model, train, cfg, f.workers);
    const auto te = eval_basis_l2(run.model, test, cfg, f.workers);
    {
        auto os = open_csv(dir, kBasisCsv);
        write_basis_rows(os, cfg.label(), cfg, "train", tr);
        write_basis_rows(os, cfg.label(), cfg, "test", te);
    }
    json config = to_json(cfg);
    config["data"] = f.data;
    config["workers"] = f.workers;
    write_manifest(dir, "train", config,
                   json::array({json{{"file", "params.json"}, {"schema_version", kSchemaVersion}}, csv_entry(hist),
                                csv_entry(kBasisCsv)}));
    std::cout << cfg.label() << ' ' << to_string(cfg.layout) << " train L2 " << tr.mean << " test L2 " << te.mean << '\n';
    return kExitOk;
}

struct EvalFlags {
    std::string data, out, params, split = "test", layout = "dense";
    bool constructed = false;
    double a = 1e3;
    std::size_t d_p = 0;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
};

int cmd_eval(const EvalFlags& f) {
    usage_check(f.constructed != !f.params.empty(), "eval: give exactly one of --params or --constructed");
    usage_check(f.split == "train" || f.split == "test", "eval: --split must be train or test");
    const auto data = load_dataset(f.data);
    const auto& graphs = f.split == "train" ? data.train : data.test;
    SyntheticConfig cfg;
    BasisModel model;
    std::string label;
    if (f.constructed) {
        usage_check(f.a > 0.0, "eval: --a must be positive");
        std::size_t max_n = 0;
        for (const auto& g : graphs) max_n = std::max(max_n, g.n);
        cfg.d_p = f.d_p == 0 ? max_n : f.d_p;
        usage_check(cfg.d_p >= max_n, "eval: constructed model needs --d-p >= largest graph");
        cfg.layout = parse_layout(f.layout);
        cfg.mode = IdentifierMode::Exact;
        cfg.seed = RngSeed{f.seed};
        model = constructed_basis_model(cfg.d_p, f.a);
        label = "constructed";
    } else {
        std::ifstream is(f.params);
        usage_check(static_cast<bool>(is), "eval: cannot read " + f.params);
        const json j = json::parse(is);
        cfg = synthetic_config_from_json(j.at("config"));
        model = basis_model_from_json(j.at("model"));
        label = cfg.label();
    }
    const auto dir = prepare_out(resolve_out(f.out, "eval"));
    const auto prepared = prepare_basis_graphs(graphs, cfg.layout);
    const auto e = eval_basis_l2(model, prepared, cfg, f.workers);
    {
        auto os = open_csv(dir, kBasisCsv);
        write_basis_rows(os, label, cfg, f.split, e);
    }
    json config{{"data", f.data},       {"split", f.split},   {"params", f.params}, {"constructed", f.constructed},
                {"resolved", to_json(cfg)}, {"workers", f.workers}};
    if (f.constructed) config["a"] = f.a;
    write_manifest(dir, "eval", config, json::array({csv_entry(kBasisCsv)}));
    std::cout << label << ' ' << to_string(cfg.layout) << ' ' << f.split << " L2 " << e.mean << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------
// regress / attndist

json to_json(const RegressionConfig& c) {
    return {{"use_ids", c.use_ids}, {"layers", c.layers}, {"d", c.d},         {"heads", c.heads},
            {"d_h", c.d_h},         {"d_ff", c.d_ff},     {"d_p", c.d_p},     {"d_e", c.d_e},
            {"steps", c.steps},     {"warmup", c.warmup}, {"peak_lr", c.peak_lr}, {"weight_decay", c.weight_decay},
            {"batch", c.batch},     {"train_count", c.train_count}, {"test_count", c.test_count},
            {"seed", c.seed.value}};
}

void add_regression_flags(CLI::App* sub, RegressionConfig& c, std::uint64_t& seed) {
    sub->add_option("--layers", c.layers, "transformer layers")->capture_default_str();
    sub->add_option("--d", c.d, "model width")->capture_default_str();
    sub->add_option("--heads", c.heads, "attention heads")->capture_default_str();
    sub->add_option("--d-h", c.d_h, "per-head width")->capture_default_str();
    sub->add_option("--d-ff", c.d_ff, "feed-forward width")->capture_default_str();
    sub->add_option("--d-p", c.d_p, "node identifier width")->capture_default_str();
    sub->add_option("--d-e", c.d_e, "type identifier width")->capture_default_str();
    sub->add_option("--steps", c.steps, "optimizer steps")->capture_default_str();
    sub->add_option("--warmup", c.warmup, "warmup steps")->capture_default_str();
    sub->add_option("--lr", c.peak_lr, "peak learning rate")->capture_default_str();
    sub->add_option("--weight-decay", c.weight_decay, "AdamW weight decay")->capture_default_str();
    sub->add_option("--batch", c.batch, "graphs per step")->capture_default_str();
    sub->add_option("--seed", seed, "seed")->capture_default_str();
}

struct RegressFlags {
    RegressionConfig cfg;
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_regress(RegressFlags f) {
    auto& cfg = f.cfg;
    cfg.seed = RngSeed{f.seed};
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    const auto dir = prepare_out(resolve_out(f.out, "regress"));
    const auto demo = train_regression_demo(cfg);
    const CsvFile csv{"regression.csv", {"mode", "seed", "split", "mse"}};
    {
        auto os = open_csv(dir, csv);
        for (const auto* run : {&demo.with_ids, &demo.without_ids}) {
            const std::string mode = run == &demo.with_ids ? "orf+type" : "none";
            os << mode << ',' << f.seed << ",train," << run->train_mse << '\n';
            os << mode << ',' << f.seed << ",test," << run->test_mse << '\n';
        }
        os << "conditional-variance-bound," << f.seed << ",test," << demo.lower_bound << '\n';
    }
    const CsvFile hist{"regression_history.csv", {"mode", "step", "loss"}};
    {
        auto os = open_csv(dir, hist);
        for (std::size_t s = 0; s < demo.with_ids.loss.size(); ++s) os << "orf+type," << s << ',' << demo.with_ids.loss[s] << '\n';
        for (std::size_t s = 0; s < demo.without_ids.loss.size(); ++s) os << "none," << s << ',' << demo.without_ids.loss[s] << '\n';
    }
    write_manifest(dir, "regress", to_json(cfg), json::array({csv_entry(csv), csv_entry(hist)}));
    std::cout << "test mse orf+type " << demo.with_ids.test_mse << " none " << demo.without_ids.test_mse << " bound "
              << demo.lower_bound << '\n';
    return kExitOk;
}

struct AttnDistFlags {
    RegressionConfig cfg;
    std::uint64_t seed = 0;
    bool use_ids = true;
    std::string data, out, split = "test";
};

int cmd_attndist(AttnDistFlags f) {
    auto& cfg = f.cfg;
    cfg.seed = RngSeed{f.seed};
    cfg.use_ids = f.use_ids;
    usage_check(f.split == "train" || f.split == "test", "attndist: --split must be train or test");
    const auto data = load_dataset(f.data);
    cfg.train_count = std::max<std::size_t>(2, data.train.size());
    cfg.test_count = data.test.size();
    const bool untrained = cfg.steps == 0;
    if (untrained) cfg.steps = 1;  // validate() wants a schedule; nothing is trained
    cfg.warmup = std::min(cfg.warmup, cfg.steps);
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    const auto dir = prepare_out(resolve_out(f.out, "attndist"));
    const auto scaler = fit_target_scaler(data.train);
    const auto train = prepare_regression_graphs(data.train, scaler);
    const auto eval = prepare_regression_graphs(f.split == "train" ? data.train : data.test, scaler);
    RegressionModel model;
    if (untrained) {
        Rng rng(derive_seed(cfg.seed, cfg.use_ids ? 0x2101 : 0x2100));
        model = RegressionModel::init(cfg, rng);
    } else {
        model = train_regression(cfg, train, eval).model;
    }
    const auto rows = attention_distance_report(model, eval, cfg.seed);
    const CsvFile csv{"attention_distance.csv", {"layer", "head", "mean_hops"}};
    {
        auto os = open_out(dir / csv.name);
        write_distance_csv(os, rows);
    }
    json config = to_json(cfg);
    config["steps"] = untrained ? 0 : cfg.steps;
    config["data"] = f.data;
    config["split"] = f.split;
    write_manifest(dir, "attndist", config, json::array({csv_entry(csv)}));
    std::cout << rows.size() << " rows -> " << (dir / csv.name).string() << '\n';
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tokenized graph transformer toolkit: datasets, constructive checks, basis training, ablations"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "help for every subcommand");

    GenFlags gen;
    auto* g = app.add_subcommand("gen", "sample a Barabasi-Albert dataset to graph files");
    g->add_option("--train", gen.train, "training graphs")->capture_default_str();
    g->add_option("--test", gen.test, "test graphs")->capture_default_str();
    g->add_option("--seed", gen.seed, "seed")->capture_default_str();
    g->add_option("--n-min", gen.n_min, "smallest node count")->capture_default_str();
    g->add_option("--n-max", gen.n_max, "largest node count")->capture_default_str();
    g->add_option("--k-min", gen.k_min, "smallest attachment count")->capture_default_str();
    g->add_option("--k-max", gen.k_max, "largest attachment count")->capture_default_str();
    g->add_option("--out", gen.out, "output directory (default $TOKENGT_OUT/gen)");

    VerifyFlags ver;
    auto* v = app.add_subcommand("verify", "check constructed attention against the equivariant oracles");
    v->add_option("--theorem", ver.theorem, "lemma1 | thm2 | thm3 | all")
        ->check(CLI::IsMember({"lemma1", "thm2", "thm3", "all"}))
        ->capture_default_str();
    v->add_option("--k", ver.k, "tensor orders to sweep")->capture_default_str();
    v->add_option("--n", ver.n, "node counts to sweep (default 3..8 for lemma1, 4 otherwise)");
    v->add_option("--a", ver.a, "sharpness values to sweep")->capture_default_str();
    v->add_option("--seeds", ver.seeds, "random layers per (k, n, a) for thm2/thm3")->capture_default_str();
    v->add_option("--d-p", ver.d_p, "identifier width, 0 for n")->capture_default_str();
    v->add_option("--workers", ver.workers, "threads; output is identical for any value")->capture_default_str();
    v->add_option("--out", ver.out, "output directory (default $TOKENGT_OUT/verify)");

    BasisFlags tr;
    auto* t = app.add_subcommand("train", "train the 15-head basis model on a generated dataset");
    t->add_option("--data", tr.data, "dataset directory written by gen")->required();
    t->add_option("--layout", tr.layout, "sparse | dense")->check(CLI::IsMember({"sparse", "dense"}))->capture_default_str();
    t->add_option("--mode", tr.mode, "none | orf | orf-first-order | random-nonorth | random-nonorth-first-order | lap | exact")
        ->capture_default_str();
    t->add_option("--type-ids", tr.type_ids, "trainable type identifiers (true | false)")->capture_default_str();
    t->add_option("--d", tr.cfg.d, "embedding width")->capture_default_str();
    t->add_option("--d-h", tr.cfg.d_h, "per-head width")->capture_default_str();
    t->add_option("--d-p", tr.cfg.d_p, "node identifier width")->capture_default_str();
    t->add_option("--d-e", tr.cfg.d_e, "type identifier width")->capture_default_str();
    t->add_option("--steps", tr.cfg.steps, "optimizer steps")->capture_default_str();
    t->add_option("--warmup", tr.cfg.warmup, "warmup steps")->capture_default_str();
    t->add_option("--lr", tr.cfg.peak_lr, "peak learning rate")->capture_default_str();
    t->add_option("--weight-decay", tr.cfg.weight_decay, "AdamW weight decay")->capture_default_str();
    t->add_option("--batch", tr.cfg.batch, "graphs per step")->capture_default_str();
    t->add_option("--dropout", tr.cfg.dropout, "attention dropout")->capture_default_str();
    t->add_option("--seed", tr.seed, "seed")->capture_default_str();
    t->add_option("--workers", tr.workers, "evaluation threads; output is identical for any value")->capture_default_str();
    t->add_option("--out", tr.out, "output directory (default $TOKENGT_OUT/train)");

    EvalFlags ev;
    auto* e = app.add_subcommand("eval", "per-head L2 of trained or constructed basis parameters");
    e->add_option("--data", ev.data, "dataset directory written by gen")->required();
    e->add_option("--params", ev.params, "params.json written by train");
    e->add_flag("--constructed", ev.constructed, "use the hand-constructed model with exact identifiers");
    e->add_option("--a", ev.a, "sharpness of the constructed model")->capture_default_str();
    e->add_option("--d-p", ev.d_p, "identifier width of the constructed model, 0 for largest n")->capture_default_str();
    e->add_option("--layout", ev.layout, "layout of the constructed model")
        ->check(CLI::IsMember({"sparse", "dense"}))
        ->capture_default_str();
    e->add_option("--split", ev.split, "train | test")->capture_default_str();
    e->add_option("--seed", ev.seed, "seed for the constructed model's evaluation stream")->capture_default_str();
    e->add_option("--workers", ev.workers, "threads; output is identical for any value")->capture_default_str();
    e->add_option("--out", ev.out, "output directory (default $TOKENGT_OUT/eval)");

    RegressFlags rg;
    auto* r = app.add_subcommand("regress", "triangle-count regression with and without identifiers");
    add_regression_flags(r, rg.cfg, rg.seed);
    r->add_option("--train", rg.cfg.train_count, "training graphs")->capture_default_str();
    r->add_option("--test", rg.cfg.test_count, "test graphs")->capture_default_str();
    r->add_option("--out", rg.out, "output directory (default $TOKENGT_OUT/regress)");

    AttnDistFlags ad;
    ad.cfg.steps = 0;
    ad.cfg.warmup = 0;
    auto* d = app.add_subcommand("attndist", "mean attention hop distance per layer and head");
    add_regression_flags(d, ad.cfg, ad.seed);
    d->add_option("--data", ad.data, "dataset directory written by gen")->required();
    d->add_option("--split", ad.split, "train | test")->capture_default_str();
    d->add_option("--use-ids", ad.use_ids, "ORF and type identifiers (true | false)")->capture_default_str();
    d->add_option("--out", ad.out, "output directory (default $TOKENGT_OUT/attndist)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*g) return cmd_gen(gen);
        if (*v) return cmd_verify(ver);
        if (*t) return cmd_train(tr);
        if (*e) return cmd_eval(ev);
        if (*r) return cmd_regress(rg);
        if (*d) return cmd_attndist(ad);
    } catch (const UsageError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kExitUsage;
    } catch (const std::invalid_argument& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kExitFailed;
    }
    return kExitUsage;
}
