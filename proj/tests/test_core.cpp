#include <catch2/catch_amalgamated.hpp>

#include "spikeforest/core.hpp"
#include "spikeforest/io.hpp"
#include "spikeforest/priors.hpp"
#include "spikeforest/rng.hpp"

using namespace spikeforest;

namespace {

Dataset grid_data(std::vector<std::vector<double>> rows) {
    Dataset d;
    d.n = static_cast<int>(rows.size());
    d.p = static_cast<int>(rows[0].size());
    for (const auto& r : rows) d.xs.insert(d.xs.end(), r.begin(), r.end());
    d.y.assign(static_cast<std::size_t>(d.n), 0.0);
    return d;
}

Tree two_level_tree() {
    // root splits x1 at 0.5; left child splits x2 at 0.5
    Tree t = Tree::root_only();
    t = grow_at(t, 0, 0, 0.5);
    t = grow_at(t, t.nodes[0].left, 1, 0.5);
    return t;
}

} // namespace

TEST_CASE("evaluate_tree routes via x <= cut") {
    Tree root = Tree::root_with_height(2.5);
    std::vector<double> x{0.1, 0.9};
    CHECK(evaluate_tree(root, x) == 2.5);

    Tree split = grow_at(Tree::root_only(), 0, 0, 0.5);
    split.set_leaf_heights(std::vector<double>{1.0, -1.0});
    std::vector<double> lo{0.3, 0.0}, hi{0.7, 0.0}, edge{0.5, 0.0};
    CHECK(evaluate_tree(split, lo) == 1.0);
    CHECK(evaluate_tree(split, hi) == -1.0);
    CHECK(evaluate_tree(split, edge) == 1.0); // tie goes left

    Tree deep = two_level_tree();
    deep.set_leaf_heights(std::vector<double>{1.0, 2.0, 3.0});
    std::vector<double> x2{0.2, 0.8};
    CHECK(evaluate_tree(deep, x2) == 2.0);
}

TEST_CASE("evaluate_forest adds tree predictions") {
    std::vector<double> x{0.4, 0.4};
    Forest empty;
    CHECK(evaluate_forest(empty, x) == 0.0);

    Forest twin;
    twin.trees.push_back(Tree::root_with_height(1.5));
    twin.trees.push_back(Tree::root_with_height(1.5));
    CHECK(evaluate_forest(twin, x) == 3.0);

    Forest mixed;
    mixed.trees.push_back(Tree::root_with_height(1.0));
    mixed.trees.push_back(Tree::root_with_height(-0.25));
    CHECK(evaluate_forest(mixed, x) == 0.75);
}

TEST_CASE("used_vars unions split variables") {
    Forest roots;
    roots.trees.assign(3, Tree::root_with_height(0.0));
    CHECK(used_vars(roots).empty());

    // one tree splitting twice on var 2 (0-based) and once on var 6
    Tree t = grow_at(Tree::root_only(), 0, 2, 0.5);
    t = grow_at(t, t.nodes[0].left, 2, 0.25);
    t = grow_at(t, t.nodes[0].right, 6, 0.5);
    Forest one;
    one.trees.push_back(t);
    CHECK(used_vars(one).members == std::vector<int>{2, 6});

    Forest two;
    two.trees.push_back(grow_at(Tree::root_only(), 0, 0, 0.5));
    Tree u = grow_at(Tree::root_only(), 0, 1, 0.5);
    u = grow_at(u, u.nodes[0].right, 4, 0.5);
    two.trees.push_back(u);
    CHECK(used_vars(two).members == std::vector<int>{0, 1, 4});
}

TEST_CASE("validate_tree counts leaf occupancy") {
    Dataset d = grid_data({{0.1}, {0.2}, {0.6}, {0.7}, {0.8}});
    auto v = validate_tree(Tree::root_only(), d);
    CHECK(v.valid);
    CHECK(v.leaf_counts == std::vector<int>{5});

    // all rows above the cut: left leaf empty
    Dataset high = grid_data({{0.6}, {0.7}, {0.9}});
    Tree split = grow_at(Tree::root_only(), 0, 0, 0.5);
    CHECK_FALSE(validate_tree(split, high).valid);

    Dataset ten;
    ten.n = 10;
    ten.p = 1;
    for (int i = 0; i < 10; ++i) ten.xs.push_back(i < 5 ? 0.1 * i : 0.5 + 0.1 * i);
    ten.y.assign(10, 0.0);
    Tree median_split = grow_at(Tree::root_only(), 0, 0, 0.45);
    auto vb = validate_tree(median_split, ten);
    CHECK(vb.valid);
    CHECK(vb.leaf_counts == std::vector<int>{5, 5});
}

TEST_CASE("candidate cuts are interior midpoints") {
    Dataset d = grid_data({{0.1}, {0.3}, {0.3}, {0.9}});
    std::vector<int> rows{0, 1, 2, 3};
    auto cuts = candidate_cuts(d, rows, 0);
    REQUIRE(cuts.size() == 2);
    CHECK(cuts[0] == Catch::Approx(0.2));
    CHECK(cuts[1] == Catch::Approx(0.6));
    std::vector<int> single{0};
    CHECK(candidate_cuts(d, single, 0).empty());
}

TEST_CASE("partition property on random trees") {
    rng_t rng = make_stream(7, "core-partition");
    SubsetS S({0, 1, 2});
    for (int rep = 0; rep < 25; ++rep) {
        Dataset d;
        d.n = 12;
        d.p = 3;
        for (int k = 0; k < d.n * d.p; ++k) d.xs.push_back(rand_u(rng));
        d.y.assign(static_cast<std::size_t>(d.n), 0.0);
        Tree t = sample_tree_structure(TreePriorSpec::branching(0.9, 0.5), S, d, rng);
        auto v = validate_tree(t, d);
        REQUIRE(v.valid);
        int total = 0;
        for (int c : v.leaf_counts) total += c;
        CHECK(total == d.n); // each row lands in exactly one leaf
        auto cells = partition_key(t, d);
        CHECK(static_cast<int>(cells.size()) == t.leaf_count());
    }
}

TEST_CASE("forest evaluation is linear in leaf heights") {
    rng_t rng = make_stream(8, "core-linear");
    Dataset d;
    d.n = 10;
    d.p = 2;
    for (int k = 0; k < d.n * d.p; ++k) d.xs.push_back(rand_u(rng));
    d.y.assign(static_cast<std::size_t>(d.n), 0.0);
    SubsetS S({0, 1});
    Forest f, scaled;
    const double c = -2.5;
    for (int t = 0; t < 4; ++t) {
        Tree tree = sample_tree_structure(TreePriorSpec::branching(0.8, 1.0), S, d, rng);
        auto beta = sample_leaf_heights(tree.leaf_count(), LeafPriorSpec{1.0}, rng);
        Tree copy = tree;
        tree.set_leaf_heights(beta);
        for (auto& b : beta) b *= c;
        copy.set_leaf_heights(beta);
        f.trees.push_back(tree);
        scaled.trees.push_back(copy);
    }
    for (int i = 0; i < d.n; ++i)
        CHECK(scaled.evaluate(d.row(i)) == Catch::Approx(c * f.evaluate(d.row(i))));
}

TEST_CASE("subset operations") {
    SubsetS s({4, 1, 4, 2});
    CHECK(s.members == std::vector<int>{1, 2, 4});
    CHECK(s.contains(2));
    s.add(3);
    s.remove(1);
    CHECK(s.members == std::vector<int>{2, 3, 4});
    CHECK(s.subset_of(SubsetS::full(6)));
    CHECK(s.complement(6).members == std::vector<int>{0, 1, 5});
}

TEST_CASE("dataset csv and support round-trip") {
    rng_t rng = make_stream(9, "core-io");
    Dataset d;
    d.n = 7;
    d.p = 3;
    for (int k = 0; k < d.n * d.p; ++k) d.xs.push_back(rand_normal(rng) * 1e3);
    for (int i = 0; i < d.n; ++i) d.y.push_back(rand_normal(rng) / 7.0);
    std::string path = "core_io_test_data.csv";
    write_dataset_csv(path, d);
    Dataset back = read_dataset_csv(path);
    REQUIRE(back.n == d.n);
    REQUIRE(back.p == d.p);
    CHECK(back.xs == d.xs); // exact round-trip at 17 significant digits
    CHECK(back.y == d.y);

    SubsetS s({0, 2});
    write_support("core_io_test_support.txt", s);
    CHECK(read_support("core_io_test_support.txt") == s);
    std::remove(path.c_str());
    std::remove("core_io_test_support.txt");
}

TEST_CASE("dataset validation rejects bad input") {
    Dataset d = grid_data({{0.1}, {0.2}});
    d.xs[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(d.validate(), std::invalid_argument);
    Dataset e = grid_data({{0.1}, {0.2}});
    e.y.pop_back();
    CHECK_THROWS_AS(e.validate(), std::invalid_argument);
    Dataset f = grid_data({{0.1}, {0.2}});
    f.true_support = SubsetS({5});
    CHECK_THROWS_AS(f.validate(), std::invalid_argument);
}
