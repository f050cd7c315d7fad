#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bart.hpp"
#include "core.hpp"
#include "io.hpp"
#include "parallel.hpp"
#include "priors.hpp"
#include "rng.hpp"

namespace spikeforest {

// ---------------------------------------------------------------------------
// Reference-table sampler with data splitting
// ---------------------------------------------------------------------------

enum class FitMode { PosteriorDraw, ForestFit, Naive };

inline const char* fit_mode_name(FitMode m) {
    switch (m) {
        case FitMode::PosteriorDraw: return "posterior-draw";
        case FitMode::ForestFit: return "forest-fit";
        case FitMode::Naive: return "naive";
    }
    return "?";
}

struct AbcConfig {
    int M = 1000;
    int s = -1; // training subsample size; negative resolves to n/2, naive forces 0
    SubsetPriorSpec subset_prior = SubsetPriorSpec::beta_binomial(1.0, 1.0);
    BartConfig bart;
    FitMode fit_mode = FitMode::PosteriorDraw;
    std::uint64_t master_seed = 0;
    int fit_samples = 20; // posterior draws averaged in forest-fit mode
    int workers = 1;

    int resolved_s(int n) const {
        if (fit_mode == FitMode::Naive) return 0;
        return s < 0 ? n / 2 : s;
    }
};

struct AbcRecord {
    int iter = 0;
    SubsetS subset_drawn;
    SubsetS vars_used;
    double epsilon = 0.0;
    std::vector<int> train_indices;
};

struct AbcTable {
    int p = 0;
    std::vector<AbcRecord> records;
    std::string provenance;
};

namespace detail {

inline std::vector<int> sample_subsample(rng_t& rng, int n, int s) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < s; ++i) {
        int j = i + rand_index(rng, n - i);
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    idx.resize(static_cast<std::size_t>(s));
    std::sort(idx.begin(), idx.end());
    return idx;
}

inline std::uint64_t dataset_digest(const Dataset& d) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](double v) {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(v));
        std::memcpy(&bits, &v, sizeof(bits));
        for (int k = 0; k < 8; ++k) {
            h ^= (bits >> (8 * k)) & 0xffu;
            h *= 0x100000001b3ull;
        }
    };
    for (double v : d.xs) mix(v);
    for (double v : d.y) mix(v);
    return h;
}

} // namespace detail

// One pass of the reference-table sampler. Iterations are independent jobs
// with their own derived streams keyed by (master_seed, iteration), merged by
// iteration index, so the table is identical for any worker count. No record
// is discarded here; thresholding is a pure post-pass.
inline AbcTable run_abc(const Dataset& data, const AbcConfig& cfg) {
    data.validate();
    if (data.n < 1) throw std::invalid_argument("run_abc: empty data");
    if (cfg.M < 1) throw std::invalid_argument("run_abc: M >= 1 required");
    const int s = cfg.resolved_s(data.n);
    if (s < 0 || s >= data.n)
        throw std::invalid_argument("run_abc: need 0 <= s < n so a rejection set exists");
    cfg.bart.validate();
    cfg.subset_prior.validate();

    AbcTable table;
    table.p = data.p;
    table.records.resize(static_cast<std::size_t>(cfg.M));
    table.provenance = std::string("fit_mode=") + fit_mode_name(cfg.fit_mode) +
                       " M=" + std::to_string(cfg.M) + " s=" + std::to_string(s) +
                       " seed=" + std::to_string(cfg.master_seed) +
                       " data=" + std::to_string(detail::dataset_digest(data));

    parallel_for(cfg.M, cfg.workers, [&](int m) {
        rng_t rng = make_stream(cfg.master_seed, "abc-iter", static_cast<std::uint64_t>(m));
        AbcRecord rec;
        rec.iter = m;
        rec.train_indices = detail::sample_subsample(rng, data.n, s);
        rec.subset_drawn = sample_subset(cfg.subset_prior, data.p, rng);

        std::vector<char> in_train(static_cast<std::size_t>(data.n), 0);
        for (int i : rec.train_indices) in_train[static_cast<std::size_t>(i)] = 1;

        double sigma_sq = 1.0;
        std::vector<double> pred(static_cast<std::size_t>(data.n), 0.0);
        if (cfg.fit_mode == FitMode::Naive) {
            // pure prior draw on the full design
            BartConfig rcfg = resolve_bart_defaults(cfg.bart, data);
            Forest forest;
            for (int t = 0; t < rcfg.num_trees; ++t) {
                Tree tree = sample_tree_structure(rcfg.tree_prior, rec.subset_drawn, data, rng);
                auto beta = sample_leaf_heights(tree.leaf_count(),
                                                LeafPriorSpec{rcfg.resolved_sigma_beta_sq()},
                                                rng);
                tree.set_leaf_heights(beta);
                forest.trees.push_back(std::move(tree));
            }
            sigma_sq = sample_sigma_sq(rcfg.noise_prior, rng);
            rec.vars_used = forest.used_vars();
            for (int i = 0; i < data.n; ++i)
                if (!in_train[static_cast<std::size_t>(i)])
                    pred[static_cast<std::size_t>(i)] = forest.evaluate(data.row(i));
        } else {
            Dataset train = data.subset_rows(rec.train_indices);
            if (cfg.fit_mode == FitMode::PosteriorDraw) {
                auto [forest, s2] = draw_posterior_sample(train, rec.subset_drawn, cfg.bart, rng);
                sigma_sq = s2;
                rec.vars_used = forest.used_vars();
                for (int i = 0; i < data.n; ++i)
                    if (!in_train[static_cast<std::size_t>(i)])
                        pred[static_cast<std::size_t>(i)] = forest.evaluate(data.row(i));
            } else {
                AveragedForest af =
                    posterior_mean_fit(train, rec.subset_drawn, cfg.bart, cfg.fit_samples, rng);
                sigma_sq = af.sigma_sq_mean;
                rec.vars_used = af.used_vars();
                for (int i = 0; i < data.n; ++i)
                    if (!in_train[static_cast<std::size_t>(i)])
                        pred[static_cast<std::size_t>(i)] = af.evaluate(data.row(i));
            }
        }

        double sd = std::sqrt(sigma_sq);
        double ss = 0.0;
        for (int i = 0; i < data.n; ++i) {
            if (in_train[static_cast<std::size_t>(i)]) continue;
            double y_star = pred[static_cast<std::size_t>(i)] + rand_normal(rng, 0.0, sd);
            double d = y_star - data.y[static_cast<std::size_t>(i)];
            ss += d * d;
        }
        rec.epsilon = std::sqrt(ss);
        table.records[static_cast<std::size_t>(m)] = std::move(rec);
    });
    return table;
}

// ---------------------------------------------------------------------------
// Post-processing: thresholds, inclusion probabilities, curves
// ---------------------------------------------------------------------------

struct InclusionResult {
    std::vector<double> probs;
    int count = 0;   // accepted records
    bool empty = false;
};

// Share of accepted records (strictly below the threshold) whose sampled
// model actually used each variable.
inline InclusionResult inclusion_probs(const AbcTable& table, double epsilon) {
    InclusionResult out;
    out.probs.assign(static_cast<std::size_t>(table.p), 0.0);
    for (const auto& rec : table.records) {
        if (!(rec.epsilon < epsilon)) continue;
        ++out.count;
        for (int j : rec.vars_used.members) out.probs[static_cast<std::size_t>(j)] += 1.0;
    }
    if (out.count == 0) {
        out.empty = true;
        return out;
    }
    for (auto& v : out.probs) v /= out.count;
    return out;
}

// Smallest threshold admitting at least ceil(q*M) records under the strict
// comparison; a tied block at the boundary is included whole.
inline double quantile_threshold(const AbcTable& table, double q) {
    if (!(q > 0.0 && q <= 1.0))
        throw std::invalid_argument("quantile_threshold: q in (0, 1] required");
    const std::size_t m = table.records.size();
    if (m == 0) throw std::invalid_argument("quantile_threshold: empty table");
    std::vector<double> eps;
    eps.reserve(m);
    for (const auto& r : table.records) eps.push_back(r.epsilon);
    std::sort(eps.begin(), eps.end());
    auto k = static_cast<std::size_t>(
        std::max(1.0, std::ceil(q * static_cast<double>(m) - 1e-9)));
    k = std::min(k, m);
    return std::nextafter(eps[k - 1], std::numeric_limits<double>::infinity());
}

struct InclusionCurve {
    std::vector<double> thresholds;         // decreasing
    std::vector<int> counts;                // accepted per threshold
    std::vector<std::vector<double>> probs; // row per threshold, p columns
};

inline InclusionCurve dynamic_curve(const AbcTable& table, std::span<const double> grid) {
    for (std::size_t i = 0; i + 1 < grid.size(); ++i)
        if (!(grid[i] > grid[i + 1]))
            throw std::invalid_argument("dynamic_curve: grid must be strictly decreasing");
    InclusionCurve curve;
    for (double eps : grid) {
        InclusionResult r = inclusion_probs(table, eps);
        curve.thresholds.push_back(eps);
        curve.counts.push_back(r.count);
        curve.probs.push_back(std::move(r.probs));
    }
    return curve;
}

// Sorted unique discrepancies, smallest few dropped for stability.
inline std::vector<double> default_dynamic_grid(const AbcTable& table, int drop_smallest = 10) {
    std::vector<double> eps;
    eps.reserve(table.records.size());
    for (const auto& r : table.records) eps.push_back(r.epsilon);
    std::sort(eps.begin(), eps.end());
    eps.erase(std::unique(eps.begin(), eps.end()), eps.end());
    std::size_t drop = std::min(eps.size() > 0 ? eps.size() - 1 : 0,
                                static_cast<std::size_t>(std::max(0, drop_smallest)));
    eps.erase(eps.begin(), eps.begin() + static_cast<std::ptrdiff_t>(drop));
    std::reverse(eps.begin(), eps.end());
    return eps;
}

// Median-probability-model rule: variables at or above the cut.
inline SubsetS select_mpm(std::span<const double> probs, double cut = 0.5) {
    SubsetS s;
    for (std::size_t j = 0; j < probs.size(); ++j) {
        if (!(probs[j] >= 0.0 && probs[j] <= 1.0))
            throw std::invalid_argument("select_mpm: probabilities must lie in [0, 1]");
        if (probs[j] >= cut) s.members.push_back(static_cast<int>(j));
    }
    return s;
}

// ---------------------------------------------------------------------------
// Table and curve files
// ---------------------------------------------------------------------------

inline void write_abc_table_csv(const std::string& path, const AbcTable& table) {
    auto f = open_out(path);
    f << "iter,epsilon,subset_drawn,vars_used,train_idx\n";
    for (const auto& r : table.records) {
        f << r.iter << ',' << fmt17(r.epsilon) << ',' << join_set(r.subset_drawn) << ','
          << join_set(r.vars_used) << ',' << join_rows(r.train_indices) << "\n";
    }
}

inline AbcTable read_abc_table_csv(const std::string& path, int p) {
    auto f = open_in(path);
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("empty table file " + path);
    AbcTable table;
    table.p = p;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_line(line);
        if (fields.size() != 5) throw std::runtime_error("bad table row in " + path);
        AbcRecord r;
        r.iter = static_cast<int>(parse_long(fields[0]));
        r.epsilon = parse_double(fields[1]);
        r.subset_drawn = parse_set(fields[2]);
        r.vars_used = parse_set(fields[3]);
        r.train_indices = parse_rows(fields[4]);
        table.records.push_back(std::move(r));
    }
    return table;
}

inline void write_curve_csv(const std::string& path, const InclusionCurve& curve, int p) {
    auto f = open_out(path);
    f << "epsilon,count";
    for (int j = 1; j <= p; ++j) f << ",pi_" << j;
    f << "\n";
    for (std::size_t r = 0; r < curve.thresholds.size(); ++r) {
        f << fmt17(curve.thresholds[r]) << ',' << curve.counts[r];
        for (double v : curve.probs[r]) f << ',' << fmt17(v);
        f << "\n";
    }
}

} // namespace spikeforest
