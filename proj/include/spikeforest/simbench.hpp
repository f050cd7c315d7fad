#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <map>
#include <numbers>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "abc.hpp"
#include "core.hpp"
#include "io.hpp"
#include "parallel.hpp"
#include "priors.hpp"
#include "rng.hpp"
#include "sf_mcmc.hpp"

namespace spikeforest {

// ---------------------------------------------------------------------------
// Data generators
// ---------------------------------------------------------------------------

enum class SetupKind { Linear, Friedman, Checkerboard, BartDraw };

inline const char* setup_name(SetupKind k) {
    switch (k) {
        case SetupKind::Linear: return "linear";
        case SetupKind::Friedman: return "friedman";
        case SetupKind::Checkerboard: return "checkerboard";
        case SetupKind::BartDraw: return "bart-draw";
    }
    return "?";
}

inline SetupKind parse_setup_kind(std::string_view s) {
    if (s == "linear") return SetupKind::Linear;
    if (s == "friedman") return SetupKind::Friedman;
    if (s == "checkerboard") return SetupKind::Checkerboard;
    if (s == "bart-draw") return SetupKind::BartDraw;
    throw std::invalid_argument("unknown setup kind: " + std::string(s));
}

struct SetupSpec {
    SetupKind kind = SetupKind::Friedman;
    int n = 500;
    int p = 10;
    std::uint64_t seed = 0;
    double sigma = 1.0; // noise standard deviation

    void validate() const {
        if (n < 1) throw std::invalid_argument("setup: n >= 1 required");
        int min_p = kind == SetupKind::Checkerboard ? 10 : 5;
        if (p < min_p)
            throw std::invalid_argument("setup: p >= " + std::to_string(min_p) +
                                        " required for " + setup_name(kind));
        if (sigma < 0.0) throw std::invalid_argument("setup: sigma >= 0 required");
    }
};

inline double friedman_mean(std::span<const double> x) {
    return 10.0 * std::sin(std::numbers::pi * x[0] * x[1]) +
           20.0 * (x[2] - 0.5) * (x[2] - 0.5) + 10.0 * x[3] + 5.0 * x[4];
}

inline double linear_mean(std::span<const double> x) {
    return x[0] + 2.0 * x[1] + 3.0 * x[2] - 2.0 * x[3] - x[4];
}

inline double checkerboard_mean(std::span<const double> x) {
    return 2.0 * x[0] * x[3] + 2.0 * x[6] * x[9];
}

namespace detail {

// Equicorrelated rows (unit variances, off-diagonal 0.6) through a shared
// factor: x_j = sqrt(0.6) z0 + sqrt(0.4) z_j.
inline void fill_equicorrelated(Dataset& d, rng_t& rng) {
    for (int i = 0; i < d.n; ++i) {
        double z0 = rand_normal(rng);
        for (int j = 0; j < d.p; ++j)
            d.xs.push_back(std::sqrt(0.6) * z0 + std::sqrt(0.4) * rand_normal(rng));
    }
}

// Stationary AR(1) rows with correlation 0.3^|i-j| and unit variances.
inline void fill_ar1(Dataset& d, rng_t& rng) {
    const double rho = 0.3;
    const double innov = std::sqrt(1.0 - rho * rho);
    for (int i = 0; i < d.n; ++i) {
        double prev = rand_normal(rng);
        d.xs.push_back(prev);
        for (int j = 1; j < d.p; ++j) {
            prev = rho * prev + innov * rand_normal(rng);
            d.xs.push_back(prev);
        }
    }
}

} // namespace detail

// Draw a dataset from one of the benchmark setups. With sigma = 0 the
// response equals the mean exactly.
inline Dataset generate(const SetupSpec& spec, rng_t& rng) {
    spec.validate();
    Dataset d;
    d.n = spec.n;
    d.p = spec.p;
    d.xs.reserve(static_cast<std::size_t>(spec.n) * static_cast<std::size_t>(spec.p));

    switch (spec.kind) {
        case SetupKind::Linear:
            detail::fill_equicorrelated(d, rng);
            break;
        case SetupKind::Friedman:
            for (std::size_t k = 0;
                 k < static_cast<std::size_t>(spec.n) * static_cast<std::size_t>(spec.p); ++k)
                d.xs.push_back(rand_u(rng));
            break;
        case SetupKind::Checkerboard:
        case SetupKind::BartDraw:
            detail::fill_ar1(d, rng);
            break;
    }

    d.f0.resize(static_cast<std::size_t>(spec.n));
    if (spec.kind == SetupKind::BartDraw) {
        // mean drawn from the branching forest prior restricted to the first
        // five covariates, many weak trees
        const int T = 200;
        SubsetS active({0, 1, 2, 3, 4});
        LeafPriorSpec leaf{1.0 / T};
        TreePriorSpec prior = TreePriorSpec::branching();
        std::fill(d.f0.begin(), d.f0.end(), 0.0);
        for (int t = 0; t < T; ++t) {
            Tree tree = sample_tree_structure(prior, active, d, rng);
            auto beta = sample_leaf_heights(tree.leaf_count(), leaf, rng);
            tree.set_leaf_heights(beta);
            for (int i = 0; i < d.n; ++i)
                d.f0[static_cast<std::size_t>(i)] += evaluate_tree(tree, d.row(i));
        }
    } else {
        for (int i = 0; i < d.n; ++i) {
            auto x = d.row(i);
            double m = 0.0;
            switch (spec.kind) {
                case SetupKind::Linear: m = linear_mean(x); break;
                case SetupKind::Friedman: m = friedman_mean(x); break;
                case SetupKind::Checkerboard: m = checkerboard_mean(x); break;
                default: break;
            }
            d.f0[static_cast<std::size_t>(i)] = m;
        }
    }

    d.y.resize(static_cast<std::size_t>(spec.n));
    for (int i = 0; i < spec.n; ++i)
        d.y[static_cast<std::size_t>(i)] =
            d.f0[static_cast<std::size_t>(i)] + spec.sigma * rand_normal(rng);

    d.true_support = spec.kind == SetupKind::Checkerboard ? SubsetS({0, 3, 6, 9})
                                                          : SubsetS({0, 1, 2, 3, 4});
    return d;
}

// Center and scale the response to unit variance (no-op scale when constant).
// The samplers' default priors are calibrated for a standardized response.
inline void standardize_response(Dataset& d) {
    if (d.n == 0) return;
    double mean = std::accumulate(d.y.begin(), d.y.end(), 0.0) / d.n;
    double sd = std::sqrt(sample_variance(d.y));
    for (auto& v : d.y) v = sd > 0.0 ? (v - mean) / sd : v - mean;
}

// ---------------------------------------------------------------------------
// Selection metrics
// ---------------------------------------------------------------------------

struct MetricReport {
    double fdp = 0.0;
    double power = 0.0;
    double precision = 0.0;
    double f1 = 0.0;
    double auc = 0.0;
    SubsetS selected;
};

// Probability that a random true signal outranks a random noise variable,
// ties counted half (midranks).
inline double rank_auc(std::span<const double> scores, const SubsetS& truth) {
    const int p = static_cast<int>(scores.size());
    const int n1 = truth.size();
    const int n0 = p - n1;
    if (n1 == 0) throw std::invalid_argument("rank_auc: empty true support");
    if (n0 == 0) throw std::invalid_argument("rank_auc: no noise variables");
    std::vector<int> order(static_cast<std::size_t>(p));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return scores[static_cast<std::size_t>(a)] < scores[static_cast<std::size_t>(b)];
    });
    std::vector<double> rank(static_cast<std::size_t>(p), 0.0);
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() &&
               scores[static_cast<std::size_t>(order[j + 1])] ==
                   scores[static_cast<std::size_t>(order[i])])
            ++j;
        double mid = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k)
            rank[static_cast<std::size_t>(order[k])] = mid;
        i = j + 1;
    }
    double rank_sum = 0.0;
    for (int j : truth.members) rank_sum += rank[static_cast<std::size_t>(j)];
    return (rank_sum - 0.5 * n1 * (n1 + 1.0)) / (static_cast<double>(n1) * n0);
}

namespace detail {

inline MetricReport confusion_metrics(const SubsetS& selected, const SubsetS& truth) {
    MetricReport r;
    r.selected = selected;
    int tp = 0;
    for (int j : selected.members) tp += truth.contains(j);
    int sel = selected.size();
    int fp = sel - tp;
    r.power = static_cast<double>(tp) / truth.size();
    r.precision = sel == 0 ? 1.0 : static_cast<double>(tp) / sel; // empty selection: vacuous
    r.fdp = static_cast<double>(fp) / std::max(sel, 1);
    r.f1 = (r.power + r.precision) > 0.0
               ? 2.0 * r.power * r.precision / (r.power + r.precision)
               : 0.0;
    return r;
}

} // namespace detail

// Metrics from a hard selection; AUC ranks the selection indicator.
inline MetricReport score_selection(const SubsetS& selected, const SubsetS& truth, int p) {
    if (truth.empty()) throw std::invalid_argument("score: empty true support");
    for (int j : selected.members)
        if (j < 0 || j >= p) throw std::invalid_argument("score: selection out of range");
    MetricReport r = detail::confusion_metrics(selected, truth);
    std::vector<double> indicator(static_cast<std::size_t>(p), 0.0);
    for (int j : selected.members) indicator[static_cast<std::size_t>(j)] = 1.0;
    r.auc = rank_auc(indicator, truth);
    return r;
}

struct NormalizedImportances {
    std::vector<double> values;
    bool all_zero = false;
};

// Rescale importances to have maximum one; all-zero input is flagged.
inline NormalizedImportances normalize_importances(std::span<const double> raw) {
    NormalizedImportances out;
    out.values.assign(raw.begin(), raw.end());
    double mx = 0.0;
    for (double v : raw) mx = std::max(mx, v);
    if (mx <= 0.0) {
        std::fill(out.values.begin(), out.values.end(), 0.0);
        out.all_zero = true;
        return out;
    }
    for (auto& v : out.values) v /= mx;
    return out;
}

// Metrics from an importance vector: AUC from the raw ranking, selection by
// thresholding the max-normalized scores.
inline MetricReport score_importances(std::span<const double> importances,
                                      const SubsetS& truth, double threshold = 0.5,
                                      bool normalize = true) {
    if (truth.empty()) throw std::invalid_argument("score: empty true support");
    NormalizedImportances ni = normalize ? normalize_importances(importances)
                                         : NormalizedImportances{
                                               {importances.begin(), importances.end()},
                                               false};
    SubsetS selected;
    if (!ni.all_zero)
        for (std::size_t j = 0; j < ni.values.size(); ++j)
            if (ni.values[j] >= threshold) selected.members.push_back(static_cast<int>(j));
    MetricReport r = detail::confusion_metrics(selected, truth);
    r.auc = rank_auc(importances, truth);
    return r;
}

// ---------------------------------------------------------------------------
// Benchmark runner
// ---------------------------------------------------------------------------

struct BenchMethodSpec {
    enum class Kind { Abc, AbcFit, NaiveAbc, Sf, External };
    Kind kind = Kind::Abc;
    std::string name;
    std::string score_file; // external kind only

    static BenchMethodSpec internal(Kind k) {
        BenchMethodSpec m;
        m.kind = k;
        switch (k) {
            case Kind::Abc: m.name = "abc"; break;
            case Kind::AbcFit: m.name = "abc-fit"; break;
            case Kind::NaiveAbc: m.name = "naive-abc"; break;
            case Kind::Sf: m.name = "sf"; break;
            default: throw std::invalid_argument("internal method expected");
        }
        return m;
    }
    static BenchMethodSpec external(std::string name, std::string file) {
        BenchMethodSpec m;
        m.kind = Kind::External;
        m.name = std::move(name);
        m.score_file = std::move(file);
        return m;
    }
};

struct BenchConfig {
    std::vector<SetupSpec> setups;
    int replicates = 5;
    std::vector<BenchMethodSpec> methods;
    AbcConfig abc;               // template for the internal reference-table methods
    SfConfig sf;                 // template for the chain method
    double abc_quantile = 0.05;
    bool standardize = true;     // center/scale the response before sampling
    std::uint64_t seed = 0;
    int workers = 1;
};

struct BenchRow {
    std::string setup;
    int p = 0;
    std::string method;
    std::string metric;
    double mean = 0.0;
    double sd = 0.0;
};

// replicate (1-based) -> importance vector
using ExternalScores = std::map<int, std::vector<double>>;

inline ExternalScores read_external_scores(const std::string& path, int p) {
    auto f = open_in(path);
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("empty score file " + path);
    ExternalScores out;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_line(line);
        if (fields.size() != 3) throw std::runtime_error("bad score row in " + path);
        int rep = static_cast<int>(parse_long(fields[0]));
        int var = static_cast<int>(parse_long(fields[1])) - 1;
        if (var < 0 || var >= p) throw std::runtime_error("score var out of range in " + path);
        auto& vec = out[rep];
        vec.resize(static_cast<std::size_t>(p), 0.0);
        vec[static_cast<std::size_t>(var)] = parse_double(fields[2]);
    }
    return out;
}

namespace detail {

inline std::pair<double, double> mean_sd(std::span<const double> v) {
    if (v.empty()) return {0.0, 0.0};
    double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

} // namespace detail

// Mean and standard deviation of every metric per (setup, method) over
// replicates. Internal methods see identical datasets per (setup, replicate);
// external methods are scored from their files against the same truths.
inline std::vector<BenchRow> run_benchmark(const BenchConfig& cfg) {
    if (cfg.replicates < 1) throw std::invalid_argument("bench: replicates >= 1 required");
    if (cfg.setups.empty()) throw std::invalid_argument("bench: no setups");
    for (const auto& s : cfg.setups) s.validate();

    // external score files, skipped with a warning when missing
    std::map<std::string, ExternalScores> external;
    std::vector<BenchMethodSpec> methods;
    for (const auto& m : cfg.methods) {
        if (m.kind != BenchMethodSpec::Kind::External) {
            methods.push_back(m);
            continue;
        }
        try {
            external[m.name] = read_external_scores(m.score_file, cfg.setups.front().p);
            methods.push_back(m);
        } catch (const std::exception& e) {
            std::cerr << "warning: skipping method " << m.name << " (" << e.what() << ")\n";
        }
    }

    const int n_setups = static_cast<int>(cfg.setups.size());
    const int n_methods = static_cast<int>(methods.size());
    const int R = cfg.replicates;
    std::vector<MetricReport> cells(
        static_cast<std::size_t>(n_setups) * static_cast<std::size_t>(n_methods) *
        static_cast<std::size_t>(R));
    std::vector<char> present(cells.size(), 0);

    const int n_jobs = n_setups * n_methods * R;
    parallel_for(n_jobs, cfg.workers, [&](int job) {
        const int si = job / (n_methods * R);
        const int mi = (job / R) % n_methods;
        const int r = job % R;
        const SetupSpec& setup = cfg.setups[static_cast<std::size_t>(si)];
        const BenchMethodSpec& method = methods[static_cast<std::size_t>(mi)];
        const std::uint64_t data_key =
            static_cast<std::uint64_t>(si) * 1000003u + static_cast<std::uint64_t>(r);

        // the same dataset for every method at a given (setup, replicate)
        rng_t data_rng = make_stream(cfg.seed, "bench-data", data_key);
        Dataset data = generate(setup, data_rng);

        std::vector<double> importances;
        if (method.kind == BenchMethodSpec::Kind::External) {
            auto it = external[method.name].find(r + 1);
            if (it == external[method.name].end()) return; // replicate missing
            importances = it->second;
        } else {
            if (cfg.standardize) standardize_response(data);
            if (method.kind == BenchMethodSpec::Kind::Sf) {
                rng_t rng = make_stream(cfg.seed, "bench-sf", data_key);
                SfSummary s = sf_run(data, cfg.sf, rng);
                importances = s.inclusion_freq;
            } else {
                AbcConfig acfg = cfg.abc;
                acfg.workers = 1; // the benchmark already parallelizes over jobs
                acfg.master_seed = derive_seed(cfg.seed, "bench-" + method.name, data_key);
                acfg.fit_mode = method.kind == BenchMethodSpec::Kind::NaiveAbc
                                    ? FitMode::Naive
                                    : method.kind == BenchMethodSpec::Kind::AbcFit
                                          ? FitMode::ForestFit
                                          : FitMode::PosteriorDraw;
                AbcTable table = run_abc(data, acfg);
                double thr = quantile_threshold(table, cfg.abc_quantile);
                importances = inclusion_probs(table, thr).probs;
            }
        }
        std::size_t idx = static_cast<std::size_t>(job);
        cells[idx] = score_importances(importances, data.true_support);
        present[idx] = 1;
    });

    std::vector<BenchRow> rows;
    const char* metric_names[] = {"fdp", "power", "precision", "f1", "auc"};
    for (int si = 0; si < n_setups; ++si) {
        for (int mi = 0; mi < n_methods; ++mi) {
            std::vector<std::vector<double>> columns(5);
            for (int r = 0; r < R; ++r) {
                std::size_t idx = static_cast<std::size_t>((si * n_methods + mi) * R + r);
                if (!present[idx]) continue;
                const auto& rep = cells[idx];
                columns[0].push_back(rep.fdp);
                columns[1].push_back(rep.power);
                columns[2].push_back(rep.precision);
                columns[3].push_back(rep.f1);
                columns[4].push_back(rep.auc);
            }
            for (int k = 0; k < 5; ++k) {
                auto [mean, sd] = detail::mean_sd(columns[static_cast<std::size_t>(k)]);
                rows.push_back({setup_name(cfg.setups[static_cast<std::size_t>(si)].kind),
                                cfg.setups[static_cast<std::size_t>(si)].p,
                                methods[static_cast<std::size_t>(mi)].name, metric_names[k],
                                mean, sd});
            }
        }
    }
    return rows;
}

inline void write_bench_csv(const std::string& path, std::span<const BenchRow> rows) {
    auto f = open_out(path);
    f << "setup,p,method,metric,mean,sd\n";
    for (const auto& r : rows)
        f << r.setup << ',' << r.p << ',' << r.method << ',' << r.metric << ','
          << fmt17(r.mean) << ',' << fmt17(r.sd) << "\n";
}

} // namespace spikeforest
