#include <catch2/catch_amalgamated.hpp>

#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <map>
#include <numbers>

#include "spikeforest/bart.hpp"
#include "spikeforest/marginal.hpp"
#include "spikeforest/rng.hpp"

using namespace spikeforest;

namespace {

Dataset make_data(std::vector<double> x1, std::vector<double> y) {
    Dataset d;
    d.n = static_cast<int>(x1.size());
    d.p = 1;
    d.xs = std::move(x1);
    d.y = std::move(y);
    return d;
}

double log_normal_pdf(double x, double mean, double var) {
    double d = x - mean;
    return -0.5 * std::log(2.0 * std::numbers::pi * var) - d * d / (2.0 * var);
}

// independent Monte-Carlo oracle: average the likelihood over prior height
// draws via a stabilized log-sum-exp
double mc_log_marginal(const Tree& tree, const Dataset& data,
                       std::span<const double> resid, double sigma_sq,
                       double sigma_beta_sq, int draws, rng_t& rng) {
    auto leaves = tree.leaf_ids();
    std::vector<int> leaf_of_row(static_cast<std::size_t>(data.n));
    std::map<int, int> leaf_pos;
    for (std::size_t k = 0; k < leaves.size(); ++k)
        leaf_pos[leaves[k]] = static_cast<int>(k);
    for (int i = 0; i < data.n; ++i)
        leaf_of_row[static_cast<std::size_t>(i)] = leaf_pos[tree.route(data.row(i))];
    std::vector<double> logs(static_cast<std::size_t>(draws));
    std::vector<double> beta(leaves.size());
    double sd = std::sqrt(sigma_beta_sq);
    for (int s = 0; s < draws; ++s) {
        for (auto& b : beta) b = rand_normal(rng, 0.0, sd);
        double ll = 0.0;
        for (int i = 0; i < data.n; ++i)
            ll += log_normal_pdf(resid[static_cast<std::size_t>(i)],
                                 beta[static_cast<std::size_t>(
                                     leaf_of_row[static_cast<std::size_t>(i)])],
                                 sigma_sq);
        logs[static_cast<std::size_t>(s)] = ll;
    }
    double mx = *std::max_element(logs.begin(), logs.end());
    double acc = 0.0;
    for (double l : logs) acc += std::exp(l - mx);
    return mx + std::log(acc / draws);
}

// 2x2 crossed design with all four cells occupied; the only candidate cut on
// each variable is 0.5, so the tree space is fully enumerable
Dataset crossed_design() {
    Dataset d;
    d.n = 10;
    d.p = 2;
    std::vector<double> x1{0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
    std::vector<double> x2{0, 0, 1, 1, 0, 0, 1, 1, 0, 1};
    for (int i = 0; i < d.n; ++i) {
        d.xs.push_back(x1[static_cast<std::size_t>(i)]);
        d.xs.push_back(x2[static_cast<std::size_t>(i)]);
    }
    d.y = {0.3, -0.1, 1.2, 0.9, 0.1, 1.8, 2.6, 3.1, 2.2, 2.9};
    return d;
}

} // namespace

TEST_CASE("log_marginal_tree closed form on single observations") {
    Dataset d = make_data({0.5}, {0.0});
    Tree root = Tree::root_only();
    std::vector<double> r0{0.0};
    // convolution of two unit Gaussians evaluated at zero
    CHECK(log_marginal_tree(root, d, r0, 1.0, 1.0) == Catch::Approx(-1.2655121234846454));
    std::vector<double> r1{1.0};
    CHECK(log_marginal_tree(root, d, r1, 1.0, 1.0) == Catch::Approx(-1.5155121234846454));
    // vanishing height prior collapses to a pure Gaussian likelihood
    Dataset d3 = make_data({0.1, 0.5, 0.9}, {0.0, 0.0, 0.0});
    std::vector<double> r{0.4, -0.2, 1.1};
    double expect = 0.0;
    for (double v : r) expect += log_normal_pdf(v, 0.0, 2.0);
    CHECK(log_marginal_tree(Tree::root_only(), d3, r, 2.0, 1e-14) ==
          Catch::Approx(expect).margin(1e-6));
}

TEST_CASE("log_marginal_tree agrees with Monte-Carlo integration") {
    rng_t rng = make_stream(21, "marginal-mc");
    for (int rep = 0; rep < 3; ++rep) {
        int n = 3 + rep;
        Dataset d;
        d.n = n;
        d.p = 2;
        for (int k = 0; k < n * 2; ++k) d.xs.push_back(rand_u(rng));
        d.y.assign(static_cast<std::size_t>(n), 0.0);
        Tree tree = sample_tree_structure(TreePriorSpec::branching(0.9, 0.5),
                                          SubsetS({0, 1}), d, rng);
        std::vector<double> resid(static_cast<std::size_t>(n));
        for (auto& v : resid) v = rand_normal(rng);
        double sigma_sq = 0.5 + rand_u(rng);
        double sb2 = 0.3 + rand_u(rng);
        double closed = log_marginal_tree(tree, d, resid, sigma_sq, sb2);
        double mc = mc_log_marginal(tree, d, resid, sigma_sq, sb2, 1000000, rng);
        CHECK(std::abs(mc - closed) / std::abs(closed) < 0.01);
    }
}

TEST_CASE("empty-leaf partitions carry no mass") {
    Dataset d = make_data({0.6, 0.7, 0.9}, {0.0, 0.0, 0.0});
    Tree split = grow_at(Tree::root_only(), 0, 0, 0.5); // left cell empty
    std::vector<double> r{0.0, 0.0, 0.0};
    CHECK(log_marginal_tree(split, d, r, 1.0, 1.0) == kNegInf);
    CHECK(log_tree_prior(split, TreePriorSpec::branching(), SubsetS({0}), d) == kNegInf);
}

TEST_CASE("empty pool keeps the forest at the root") {
    Dataset d = make_data({0.1, 0.4, 0.8, 0.9}, {1.0, 1.2, 0.8, 1.1});
    BartConfig cfg;
    cfg.num_trees = 3;
    cfg.burn_in = 50;
    cfg.noise_prior = NoisePriorSpec::fixed(1.0);
    cfg.sigma_beta_sq = 0.5;
    rng_t rng = make_stream(22, "bart-empty-pool");
    BartState st = bart_init(d, cfg);
    double fit_sum = 0.0;
    int sweeps = 400;
    for (int s = 0; s < sweeps; ++s) {
        backfit_sweep(st, d, SubsetS{}, cfg, rng);
        for (const auto& t : st.forest.trees) REQUIRE(t.leaf_count() == 1);
        fit_sum += st.total_fit[0];
    }
    // stationary mean of the total fit for constant pools: T w ybar / (1 + (T-1) w)
    double ybar = (1.0 + 1.2 + 0.8 + 1.1) / 4.0;
    double w = 4.0 * cfg.sigma_beta_sq / (1.0 + 4.0 * cfg.sigma_beta_sq);
    double expect = 3.0 * w * ybar / (1.0 + 2.0 * w);
    CHECK(std::abs(fit_sum / sweeps - expect) < 0.1);
    CHECK(st.cache_consistent(d));
}

TEST_CASE("chain concentrates on a perfect single split") {
    // two distinct design values, strong mean shift: the tree space is
    // {root, split}, and the posterior mass of the split is computable
    Dataset d;
    d.n = 20;
    d.p = 1;
    for (int i = 0; i < 20; ++i) {
        d.xs.push_back(i < 10 ? 0.0 : 1.0);
        d.y.push_back((i < 10 ? 0.0 : 4.0) + 0.05 * ((i % 5) - 2));
    }
    BartConfig cfg;
    cfg.num_trees = 1;
    cfg.noise_prior = NoisePriorSpec::fixed(1.0);
    cfg.sigma_beta_sq = 1.0;
    SubsetS S({0});

    Tree root = Tree::root_only();
    Tree split = grow_at(Tree::root_only(), 0, 0, 0.5);
    auto spec = cfg.tree_prior;
    double w_root = log_marginal_tree(root, d, d.y, 1.0, 1.0) +
                    log_tree_prior(root, spec, S, d);
    double w_split = log_marginal_tree(split, d, d.y, 1.0, 1.0) +
                     log_tree_prior(split, spec, S, d);
    double exact_split = 1.0 / (1.0 + std::exp(w_root - w_split));

    rng_t rng = make_stream(23, "bart-single-split");
    BartState st = bart_init(d, cfg);
    int burn = 200, sweeps = 20000, hits = 0;
    for (int s = 0; s < burn + sweeps; ++s) {
        backfit_sweep(st, d, S, cfg, rng);
        if (s >= burn) hits += st.forest.trees[0].leaf_count() == 2;
    }
    double freq = hits / static_cast<double>(sweeps);
    CHECK(freq >= 0.9);
    CHECK(std::abs(freq - exact_split) < 0.05);
}

TEST_CASE("chain visit frequencies match the enumerated posterior") {
    Dataset d = crossed_design();
    SubsetS S({0, 1});
    BartConfig cfg;
    cfg.num_trees = 1;
    cfg.noise_prior = NoisePriorSpec::fixed(1.0);
    cfg.sigma_beta_sq = 1.0;
    auto spec = cfg.tree_prior;

    // all nine reachable structures (cuts are unique per variable)
    std::vector<Tree> structures;
    structures.push_back(Tree::root_only());
    structures.push_back(grow_at(Tree::root_only(), 0, 0, 0.5));
    structures.push_back(grow_at(Tree::root_only(), 0, 1, 0.5));
    for (int root_var : {0, 1}) {
        int other = 1 - root_var;
        Tree base = grow_at(Tree::root_only(), 0, root_var, 0.5);
        structures.push_back(grow_at(base, base.nodes[0].left, other, 0.5));
        structures.push_back(grow_at(base, base.nodes[0].right, other, 0.5));
        Tree both = grow_at(base, base.nodes[0].left, other, 0.5);
        structures.push_back(grow_at(both, both.nodes[0].right, other, 0.5));
    }
    REQUIRE(structures.size() == 9);

    std::map<std::vector<std::vector<int>>, double> exact;
    double total = 0.0;
    std::vector<double> weights;
    for (const auto& t : structures) {
        double w = std::exp(log_marginal_tree(t, d, d.y, 1.0, 1.0) +
                            log_tree_prior(t, spec, S, d));
        weights.push_back(w);
        total += w;
    }
    for (std::size_t k = 0; k < structures.size(); ++k)
        exact[partition_key(structures[k], d)] += weights[k] / total;

    rng_t rng = make_stream(24, "bart-balance");
    BartState st = bart_init(d, cfg);
    std::map<std::vector<std::vector<int>>, double> visits;
    const int sweeps = 100000;
    for (int s = 0; s < sweeps; ++s) {
        backfit_sweep(st, d, S, cfg, rng);
        visits[partition_key(st.forest.trees[0], d)] += 1.0 / sweeps;
    }
    double tv = 0.0;
    for (const auto& [key, p_exact] : exact) {
        auto it = visits.find(key);
        double p_emp = it == visits.end() ? 0.0 : it->second;
        tv += std::abs(p_exact - p_emp);
        visits.erase(key);
    }
    for (const auto& [key, p_emp] : visits) tv += p_emp; // states outside the enumeration
    tv *= 0.5;
    CHECK(tv <= 0.1);
}

TEST_CASE("variance full conditional matches its analytic law") {
    // Kolmogorov-Smirnov check of the scaled-inverse-chi-squared conditional
    const double nu = 3.0, lambda = 2.0, ss = 14.0;
    const int n = 6;
    const int draws = 100000;
    rng_t rng = make_stream(25, "sigma-ks");
    std::vector<double> sample(draws);
    for (auto& v : sample) v = draw_sigma_sq_conditional(nu, lambda, n, ss, rng);
    std::sort(sample.begin(), sample.end());
    double nu_post = nu + n;
    double scale_post = (nu * lambda + ss) / nu_post;
    double ks = 0.0;
    for (int i = 0; i < draws; ++i) {
        double cdf = boost::math::gamma_q(nu_post / 2.0,
                                          nu_post * scale_post / (2.0 * sample[static_cast<std::size_t>(i)]));
        ks = std::max(ks, std::abs(cdf - (i + 1.0) / draws));
        ks = std::max(ks, std::abs(cdf - i / static_cast<double>(draws)));
    }
    CHECK(ks < 1.63 / std::sqrt(static_cast<double>(draws)));
}

TEST_CASE("posterior draws are deterministic and stay inside the pool") {
    rng_t data_rng = make_stream(26, "bart-draw-data");
    Dataset d;
    d.n = 25;
    d.p = 4;
    for (int k = 0; k < d.n * d.p; ++k) d.xs.push_back(rand_u(data_rng));
    for (int i = 0; i < d.n; ++i) d.y.push_back(rand_normal(data_rng));
    BartConfig cfg;
    cfg.num_trees = 4;
    cfg.burn_in = 20;

    rng_t a = make_stream(27, "bart-det");
    rng_t b = make_stream(27, "bart-det");
    auto [fa, sa] = draw_posterior_sample(d, SubsetS({0, 2}), cfg, a);
    auto [fb, sb] = draw_posterior_sample(d, SubsetS({0, 2}), cfg, b);
    CHECK(sa == sb);
    REQUIRE(fa.trees.size() == fb.trees.size());
    for (std::size_t t = 0; t < fa.trees.size(); ++t) {
        REQUIRE(fa.trees[t].nodes.size() == fb.trees[t].nodes.size());
        for (std::size_t k = 0; k < fa.trees[t].nodes.size(); ++k) {
            CHECK(fa.trees[t].nodes[k].var == fb.trees[t].nodes[k].var);
            CHECK(fa.trees[t].nodes[k].cut == fb.trees[t].nodes[k].cut);
            CHECK(fa.trees[t].nodes[k].height == fb.trees[t].nodes[k].height);
        }
    }

    rng_t pool_rng = make_stream(28, "bart-pool");
    cfg.burn_in = 5;
    for (int rep = 0; rep < 200; ++rep) {
        SubsetS S = sample_subset(SubsetPriorSpec::beta_binomial(1, 1), d.p, pool_rng);
        auto [f, s2] = draw_posterior_sample(d, S, cfg, pool_rng);
        CHECK(f.used_vars().subset_of(S));
    }
}

TEST_CASE("null response keeps predictions near zero") {
    Dataset d;
    d.n = 10;
    d.p = 1;
    for (int i = 0; i < d.n; ++i) d.xs.push_back(0.1 * i);
    d.y.assign(static_cast<std::size_t>(d.n), 0.0);
    BartConfig cfg;
    cfg.num_trees = 10;
    cfg.burn_in = 30;
    cfg.noise_prior = NoisePriorSpec::fixed(1.0);
    double acc = 0.0;
    std::vector<double> x{0.35};
    for (int seed = 0; seed < 100; ++seed) {
        rng_t rng = make_stream(static_cast<std::uint64_t>(seed), "bart-null");
        auto [f, s2] = draw_posterior_sample(d, SubsetS{}, cfg, rng);
        acc += f.evaluate(x);
    }
    double sb = std::sqrt(cfg.resolved_sigma_beta_sq());
    CHECK(std::abs(acc / 100.0) < 3.0 * sb / std::sqrt(10.0));
}

TEST_CASE("posterior mean fit") {
    Dataset d;
    d.n = 8;
    d.p = 1;
    for (int i = 0; i < d.n; ++i) d.xs.push_back(0.1 * i);
    d.y.assign(static_cast<std::size_t>(d.n), 2.0); // constant response
    BartConfig cfg;
    cfg.num_trees = 5;
    cfg.burn_in = 40;
    cfg.noise_prior = NoisePriorSpec::fixed(1.0);
    cfg.sigma_beta_sq = 0.4;

    // a single averaged draw reproduces draw_posterior_sample
    rng_t a = make_stream(31, "mean-fit");
    rng_t b = make_stream(31, "mean-fit");
    AveragedForest one = posterior_mean_fit(d, SubsetS{}, cfg, 1, a);
    auto [f, s2] = draw_posterior_sample(d, SubsetS{}, cfg, b);
    std::vector<double> x{0.25};
    CHECK(one.evaluate(x) == Catch::Approx(f.evaluate(x)));

    // constant response: prediction concentrates near the shrunk mean
    double w = 8.0 * cfg.sigma_beta_sq / (1.0 + 8.0 * cfg.sigma_beta_sq);
    double expect = 5.0 * w * 2.0 / (1.0 + 4.0 * w);
    double acc = 0.0;
    int seeds = 40;
    for (int seed = 0; seed < seeds; ++seed) {
        rng_t rng = make_stream(static_cast<std::uint64_t>(seed), "mean-fit-const");
        acc += posterior_mean_fit(d, SubsetS{}, cfg, 30, rng).evaluate(x);
    }
    CHECK(std::abs(acc / seeds - expect) < 0.15);

    // averaging draws shrinks seed-to-seed predictive variance
    double var_single = 0.0, var_avg = 0.0, m_single = 0.0, m_avg = 0.0;
    std::vector<double> singles, avgs;
    for (int seed = 0; seed < 30; ++seed) {
        rng_t r1 = make_stream(static_cast<std::uint64_t>(seed), "mean-fit-v1");
        rng_t r2 = make_stream(static_cast<std::uint64_t>(seed), "mean-fit-v2");
        singles.push_back(posterior_mean_fit(d, SubsetS{}, cfg, 1, r1).evaluate(x));
        avgs.push_back(posterior_mean_fit(d, SubsetS{}, cfg, 25, r2).evaluate(x));
    }
    for (double v : singles) m_single += v / singles.size();
    for (double v : avgs) m_avg += v / avgs.size();
    for (double v : singles) var_single += (v - m_single) * (v - m_single) / singles.size();
    for (double v : avgs) var_avg += (v - m_avg) * (v - m_avg) / avgs.size();
    CHECK(var_avg <= var_single);
}

TEST_CASE("bart config validation") {
    BartConfig cfg;
    cfg.p_grow = 0.5;
    cfg.p_prune = 0.2;
    cfg.p_change = 0.2;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    BartConfig zero_trees;
    zero_trees.num_trees = 0;
    CHECK_THROWS_AS(zero_trees.validate(), std::invalid_argument);
}
