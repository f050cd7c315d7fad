#include <catch2/catch_amalgamated.hpp>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>

#include "spikeforest/priors.hpp"
#include "spikeforest/rng.hpp"

using namespace spikeforest;

namespace {

Dataset uniform_data(int n, int p, std::uint64_t seed) {
    rng_t rng = make_stream(seed, "priors-data");
    Dataset d;
    d.n = n;
    d.p = p;
    for (int k = 0; k < n * p; ++k) d.xs.push_back(rand_u(rng));
    d.y.assign(static_cast<std::size_t>(n), 0.0);
    return d;
}

double lbeta(double a, double b) {
    return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

} // namespace

TEST_CASE("sample_subset degenerate inclusion probabilities") {
    rng_t rng = make_stream(1, "subset-degenerate");
    auto tiny = SubsetPriorSpec::fixed_theta(1e-12);
    for (int i = 0; i < 200; ++i) CHECK(sample_subset(tiny, 8, rng).empty());
    auto sure = SubsetPriorSpec::fixed_theta(1.0);
    for (int i = 0; i < 50; ++i) CHECK(sample_subset(sure, 8, rng) == SubsetS::full(8));
}

TEST_CASE("beta-binomial(1,1) size is uniform for p=2") {
    rng_t rng = make_stream(2, "subset-bb");
    auto spec = SubsetPriorSpec::beta_binomial(1.0, 1.0);
    const int draws = 1000000;
    int counts[3] = {0, 0, 0};
    for (int i = 0; i < draws; ++i) ++counts[sample_subset(spec, 2, rng).size()];
    for (int k = 0; k < 3; ++k)
        CHECK(std::abs(counts[k] / static_cast<double>(draws) - 1.0 / 3.0) < 0.005);
}

TEST_CASE("beta-binomial size pmf passes a chi-square fit") {
    rng_t rng = make_stream(3, "subset-gof");
    const int p = 5;
    const double a = 2.0, b = 3.0;
    auto spec = SubsetPriorSpec::beta_binomial(a, b);
    const int draws = 100000;
    std::vector<int> counts(static_cast<std::size_t>(p) + 1, 0);
    for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(sample_subset(spec, p, rng).size())];
    auto choose = [](int n, int k) {
        double v = 1.0;
        for (int i = 0; i < k; ++i) v *= static_cast<double>(n - i) / (i + 1);
        return v;
    };
    double stat = 0.0;
    for (int k = 0; k <= p; ++k) {
        double prob = choose(p, k) * std::exp(lbeta(a + k, b + p - k) - lbeta(a, b));
        double expected = prob * draws;
        double diff = counts[static_cast<std::size_t>(k)] - expected;
        stat += diff * diff / expected;
    }
    boost::math::chi_squared chisq(p);
    CHECK(stat < boost::math::quantile(chisq, 0.999));
}

TEST_CASE("branching grower edge cases") {
    Dataset d = uniform_data(20, 3, 11);
    SubsetS S({0, 1, 2});
    rng_t rng = make_stream(4, "tree-edges");
    for (int i = 0; i < 100; ++i) {
        Tree t = sample_tree_structure(TreePriorSpec::branching(0.0, 2.0), S, d, rng);
        CHECK(t.leaf_count() == 1);
    }
    for (int i = 0; i < 100; ++i) {
        Tree t = sample_tree_structure(TreePriorSpec::poisson_uniform(1e-9), S, d, rng);
        CHECK(t.leaf_count() == 1);
    }
    // empty pool always yields the bare root
    CHECK(sample_tree_structure(TreePriorSpec::branching(), SubsetS{}, d, rng).leaf_count() == 1);
}

TEST_CASE("branching split frequencies match the depth decay") {
    Dataset d = uniform_data(40, 2, 12);
    SubsetS S({0, 1});
    auto spec = TreePriorSpec::branching(0.95, 2.0);
    rng_t rng = make_stream(5, "tree-freq");
    const int draws = 100000;
    int root_splits = 0;
    long depth1_nodes = 0, depth1_splits = 0;
    for (int i = 0; i < draws; ++i) {
        Tree t = sample_tree_structure(spec, S, d, rng);
        const auto& root = t.nodes[0];
        if (root.is_leaf()) continue;
        ++root_splits;
        depth1_nodes += 2;
        depth1_splits += !t.nodes[static_cast<std::size_t>(root.left)].is_leaf();
        depth1_splits += !t.nodes[static_cast<std::size_t>(root.right)].is_leaf();
    }
    CHECK(std::abs(root_splits / static_cast<double>(draws) - 0.95) < 0.01);
    CHECK(std::abs(depth1_splits / static_cast<double>(depth1_nodes) - 0.95 / 4.0) < 0.01);
}

TEST_CASE("leaf height sampler moments") {
    rng_t rng = make_stream(6, "leaf-heights");
    LeafPriorSpec spec{0.1};
    const int draws = 1000000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < draws / 4; ++i) {
        auto beta = sample_leaf_heights(4, spec, rng);
        for (double b : beta) {
            sum += b;
            sumsq += b * b;
        }
    }
    double mean = sum / draws;
    double var = sumsq / draws - mean * mean;
    CHECK(std::abs(mean) < 0.002);
    CHECK(std::abs(var - 0.1) < 0.002);
    CHECK(sample_leaf_heights(0, spec, rng).empty());
}

TEST_CASE("log_tree_prior matches the generative factors") {
    Dataset d = uniform_data(15, 2, 13);
    SubsetS S({0, 1});

    auto spec = TreePriorSpec::branching(0.95, 2.0);
    CHECK(log_tree_prior(Tree::root_only(), spec, S, d) ==
          Catch::Approx(std::log(0.05)));

    // two-row design: one valid 1-partition, truncated Poisson over {1, 2}
    Dataset two;
    two.n = 2;
    two.p = 1;
    two.xs = {0.2, 0.8};
    two.y = {0.0, 0.0};
    double lam = 5.0;
    double expect = std::log(lam) - std::log(lam + lam * lam / 2.0);
    CHECK(log_tree_prior(Tree::root_only(), TreePriorSpec::poisson_uniform(lam), SubsetS({0}),
                         two) == Catch::Approx(expect));

    // split outside the pool has no mass
    Tree off = grow_at(Tree::root_only(), 0, 1, 0.5);
    CHECK(log_tree_prior(off, spec, SubsetS({0}), d) == kNegInf);
}

TEST_CASE("sampled trees have positive prior mass and stay inside the pool") {
    Dataset d = uniform_data(14, 3, 14);
    SubsetS S({0, 2});
    rng_t rng = make_stream(7, "tree-invariants");
    for (auto spec : {TreePriorSpec::branching(0.9, 1.0), TreePriorSpec::poisson_uniform(3.0)}) {
        for (int i = 0; i < 60; ++i) {
            Tree t = sample_tree_structure(spec, S, d, rng);
            CHECK(t.used_vars().subset_of(S));
            CHECK(validate_tree(t, d).valid);
            CHECK(log_tree_prior(t, spec, S, d) > kNegInf);
        }
    }
}

TEST_CASE("noise variance sampler") {
    rng_t rng = make_stream(8, "sigma");
    CHECK(sample_sigma_sq(NoisePriorSpec::fixed(1.0), rng) == 1.0);
    auto spec = NoisePriorSpec::inv_chisq(3.0, 1.0);
    const int draws = 1000000;
    double sum = 0.0;
    for (int i = 0; i < draws; ++i) {
        double v = sample_sigma_sq(spec, rng);
        REQUIRE(v > 0.0);
        sum += v;
    }
    double mean = sum / draws; // scaled-inverse-chi-squared mean nu*lambda/(nu-2)
    CHECK(std::abs(mean - 3.0) / 3.0 < 0.02);
}

TEST_CASE("truncated poisson pmf and ratios") {
    TruncatedPoisson tp(5.0, 20);
    double total = 0.0;
    for (int k = 1; k <= 20; ++k) total += std::exp(tp.log_pmf(k));
    CHECK(total == Catch::Approx(1.0));
    CHECK(tp.ratio_up(2) == Catch::Approx(5.0 / 3.0));
    CHECK(tp.ratio_down(2) == Catch::Approx(2.0 / 5.0));
    CHECK(tp.ratio_up(20) == 0.0);
    CHECK(tp.log_pmf(0) == kNegInf);
}

TEST_CASE("prior spec validation") {
    CHECK_THROWS_AS(SubsetPriorSpec::beta_binomial(0.0, 1.0).validate(), std::invalid_argument);
    CHECK_THROWS_AS(SubsetPriorSpec::fixed_theta(1.5).validate(), std::invalid_argument);
    CHECK_THROWS_AS(TreePriorSpec::poisson_uniform(-1.0).validate(), std::invalid_argument);
    CHECK_THROWS_AS(LeafPriorSpec{0.0}.validate(), std::invalid_argument);
    CHECK_THROWS_AS(NoisePriorSpec::inv_chisq(0.0, 1.0).validate(), std::invalid_argument);
}
