#pragma once
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spikeforest {

// ---------------------------------------------------------------------------
// Variable subsets
// ---------------------------------------------------------------------------

// Active-variable set. Members are 0-based column indices, kept sorted and
// unique. File formats and the CLI print 1-based indices.
struct SubsetS {
    std::vector<int> members;

    SubsetS() = default;
    explicit SubsetS(std::vector<int> m) : members(std::move(m)) { normalize(); }

    void normalize() {
        std::sort(members.begin(), members.end());
        members.erase(std::unique(members.begin(), members.end()), members.end());
    }
    bool contains(int j) const {
        return std::binary_search(members.begin(), members.end(), j);
    }
    void add(int j) {
        if (!contains(j)) {
            members.insert(std::upper_bound(members.begin(), members.end(), j), j);
        }
    }
    void remove(int j) {
        auto it = std::lower_bound(members.begin(), members.end(), j);
        if (it != members.end() && *it == j) members.erase(it);
    }
    int size() const { return static_cast<int>(members.size()); }
    bool empty() const { return members.empty(); }

    bool subset_of(const SubsetS& other) const {
        return std::includes(other.members.begin(), other.members.end(),
                             members.begin(), members.end());
    }
    SubsetS complement(int p) const {
        SubsetS out;
        out.members.reserve(static_cast<std::size_t>(p) - members.size());
        for (int j = 0; j < p; ++j)
            if (!contains(j)) out.members.push_back(j);
        return out;
    }
    static SubsetS full(int p) {
        SubsetS out;
        out.members.resize(static_cast<std::size_t>(p));
        for (int j = 0; j < p; ++j) out.members[static_cast<std::size_t>(j)] = j;
        return out;
    }
    friend bool operator==(const SubsetS& a, const SubsetS& b) {
        return a.members == b.members;
    }
    friend bool operator<(const SubsetS& a, const SubsetS& b) {
        return a.members < b.members;
    }
};

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

// Fixed design matrix plus response. `f0` and `true_support` are only filled
// by the simulation generators. Predictors are used exactly as given; any
// rescaling is the caller's responsibility.
struct Dataset {
    int n = 0;
    int p = 0;
    std::vector<double> xs; // row-major n*p
    std::vector<double> y;
    std::vector<double> f0;      // optional true mean, empty if absent
    SubsetS true_support;        // optional

    double x(int i, int j) const {
        return xs[static_cast<std::size_t>(i) * static_cast<std::size_t>(p) +
                  static_cast<std::size_t>(j)];
    }
    std::span<const double> row(int i) const {
        return {xs.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(p),
                static_cast<std::size_t>(p)};
    }

    void validate() const {
        if (n < 0 || p < 0) throw std::invalid_argument("dataset: negative sizes");
        if (xs.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(p))
            throw std::invalid_argument("dataset: X size mismatch");
        if (y.size() != static_cast<std::size_t>(n))
            throw std::invalid_argument("dataset: Y length mismatch");
        for (double v : xs)
            if (!std::isfinite(v)) throw std::invalid_argument("dataset: non-finite X entry");
        for (double v : y)
            if (!std::isfinite(v)) throw std::invalid_argument("dataset: non-finite Y entry");
        if (!f0.empty() && f0.size() != static_cast<std::size_t>(n))
            throw std::invalid_argument("dataset: f0 length mismatch");
        for (int j : true_support.members)
            if (j < 0 || j >= p) throw std::invalid_argument("dataset: support index out of range");
    }

    Dataset subset_rows(std::span<const int> rows) const {
        Dataset out;
        out.n = static_cast<int>(rows.size());
        out.p = p;
        out.xs.reserve(rows.size() * static_cast<std::size_t>(p));
        out.y.reserve(rows.size());
        for (int i : rows) {
            auto r = row(i);
            out.xs.insert(out.xs.end(), r.begin(), r.end());
            out.y.push_back(y[static_cast<std::size_t>(i)]);
            if (!f0.empty()) out.f0.push_back(f0[static_cast<std::size_t>(i)]);
        }
        return out;
    }
};

inline double sample_variance(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return ss / static_cast<double>(v.size() - 1);
}

// ---------------------------------------------------------------------------
// Trees and forests
// ---------------------------------------------------------------------------

struct SplitRule {
    int var = -1;
    double cut = 0.0;
};

// Binary tree stored as an index vector, root at 0. A node is a leaf iff
// var < 0. `height` is meaningful for leaves of trees with heights.
struct TreeNode {
    int var = -1;
    double cut = 0.0;
    int left = -1;
    int right = -1;
    double height = 0.0;

    bool is_leaf() const { return var < 0; }
};

struct Tree {
    std::vector<TreeNode> nodes;
    bool has_heights = false;

    static Tree root_only() {
        Tree t;
        t.nodes.emplace_back();
        return t;
    }
    static Tree root_with_height(double beta) {
        Tree t = root_only();
        t.nodes[0].height = beta;
        t.has_heights = true;
        return t;
    }

    int leaf_count() const {
        int k = 0;
        for (const auto& nd : nodes) k += nd.is_leaf();
        return k;
    }
    int internal_count() const { return static_cast<int>(nodes.size()) - leaf_count(); }

    // Left-to-right (preorder) traversal orders; leaf heights follow it.
    std::vector<int> leaf_ids() const {
        std::vector<int> out;
        walk([&](int id) {
            if (nodes[static_cast<std::size_t>(id)].is_leaf()) out.push_back(id);
        });
        return out;
    }
    std::vector<int> internal_ids() const {
        std::vector<int> out;
        walk([&](int id) {
            if (!nodes[static_cast<std::size_t>(id)].is_leaf()) out.push_back(id);
        });
        return out;
    }

    template <class Visit>
    void walk(Visit&& visit) const {
        std::vector<int> stack{0};
        while (!stack.empty()) {
            int id = stack.back();
            stack.pop_back();
            visit(id);
            const auto& nd = nodes[static_cast<std::size_t>(id)];
            if (!nd.is_leaf()) {
                stack.push_back(nd.right);
                stack.push_back(nd.left);
            }
        }
    }

    // Heights in leaf_ids() order.
    std::vector<double> leaf_heights() const {
        std::vector<double> out;
        for (int id : leaf_ids()) out.push_back(nodes[static_cast<std::size_t>(id)].height);
        return out;
    }
    void set_leaf_heights(std::span<const double> beta) {
        auto ids = leaf_ids();
        if (ids.size() != beta.size())
            throw std::invalid_argument("set_leaf_heights: length mismatch");
        for (std::size_t k = 0; k < ids.size(); ++k)
            nodes[static_cast<std::size_t>(ids[k])].height = beta[k];
        has_heights = true;
    }

    // Routing is total: x[var] <= cut goes left.
    int route(std::span<const double> xrow) const {
        int id = 0;
        while (!nodes[static_cast<std::size_t>(id)].is_leaf()) {
            const auto& nd = nodes[static_cast<std::size_t>(id)];
            id = xrow[static_cast<std::size_t>(nd.var)] <= nd.cut ? nd.left : nd.right;
        }
        return id;
    }

    SubsetS used_vars() const {
        SubsetS s;
        for (const auto& nd : nodes)
            if (!nd.is_leaf()) s.add(nd.var);
        return s;
    }
};

inline double evaluate_tree(const Tree& tree, std::span<const double> xrow) {
    if (!tree.has_heights) throw std::logic_error("evaluate_tree: bare partition");
    return tree.nodes[static_cast<std::size_t>(tree.route(xrow))].height;
}

// Predictions of the member trees add; no scaling.
struct Forest {
    std::vector<Tree> trees;

    double evaluate(std::span<const double> xrow) const {
        double sum = 0.0;
        for (const auto& t : trees) sum += evaluate_tree(t, xrow);
        return sum;
    }
    SubsetS used_vars() const {
        SubsetS s;
        for (const auto& t : trees)
            for (int j : t.used_vars().members) s.add(j);
        return s;
    }
};

inline double evaluate_forest(const Forest& forest, std::span<const double> xrow) {
    return forest.evaluate(xrow);
}

inline SubsetS used_vars(const Forest& forest) { return forest.used_vars(); }
inline SubsetS used_vars(const Tree& tree) { return tree.used_vars(); }

// ---------------------------------------------------------------------------
// Trees against a design
// ---------------------------------------------------------------------------

// Leaf of each dataset row, plus occupancy in leaf_ids() order.
struct LeafAssignment {
    std::vector<int> leaf_of_row;   // node id per row
    std::vector<int> leaf_ids;
    std::vector<int> counts;        // aligned with leaf_ids
};

inline LeafAssignment assign_rows(const Tree& tree, const Dataset& data) {
    LeafAssignment out;
    out.leaf_ids = tree.leaf_ids();
    out.counts.assign(out.leaf_ids.size(), 0);
    out.leaf_of_row.resize(static_cast<std::size_t>(data.n));
    std::vector<int> pos(tree.nodes.size(), -1);
    for (std::size_t k = 0; k < out.leaf_ids.size(); ++k)
        pos[static_cast<std::size_t>(out.leaf_ids[k])] = static_cast<int>(k);
    for (int i = 0; i < data.n; ++i) {
        int leaf = tree.route(data.row(i));
        out.leaf_of_row[static_cast<std::size_t>(i)] = leaf;
        ++out.counts[static_cast<std::size_t>(pos[static_cast<std::size_t>(leaf)])];
    }
    return out;
}

struct TreeValidity {
    bool valid = false;
    std::vector<int> leaf_counts; // occupancy n(cell) in leaf_ids() order
};

// A tree is valid for a design iff every leaf cell holds at least one row.
inline TreeValidity validate_tree(const Tree& tree, const Dataset& data) {
    LeafAssignment a = assign_rows(tree, data);
    TreeValidity out;
    out.leaf_counts = a.counts;
    out.valid = std::all_of(a.counts.begin(), a.counts.end(), [](int c) { return c > 0; });
    return out;
}

// Rows reaching each node, indexed by node id.
inline std::vector<std::vector<int>> node_rows(const Tree& tree, const Dataset& data) {
    std::vector<std::vector<int>> rows(tree.nodes.size());
    for (int i = 0; i < data.n; ++i) {
        int id = 0;
        rows[0].push_back(i);
        while (!tree.nodes[static_cast<std::size_t>(id)].is_leaf()) {
            const auto& nd = tree.nodes[static_cast<std::size_t>(id)];
            id = data.x(i, nd.var) <= nd.cut ? nd.left : nd.right;
            rows[static_cast<std::size_t>(id)].push_back(i);
        }
    }
    return rows;
}

// Candidate cutpoints for a variable within a cell: midpoints between
// consecutive sorted unique observed values. Splitting at any of them keeps
// both children non-empty by construction.
inline std::vector<double> candidate_cuts(const Dataset& data, std::span<const int> rows,
                                          int var) {
    std::vector<double> vals;
    vals.reserve(rows.size());
    for (int i : rows) vals.push_back(data.x(i, var));
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    std::vector<double> cuts;
    for (std::size_t k = 0; k + 1 < vals.size(); ++k)
        cuts.push_back(0.5 * (vals[k] + vals[k + 1]));
    return cuts;
}

// ---------------------------------------------------------------------------
// Structural edits (used by the samplers). All return a fresh tree.
// ---------------------------------------------------------------------------

inline Tree grow_at(const Tree& tree, int leaf_id, int var, double cut) {
    Tree out = tree;
    auto& nd = out.nodes[static_cast<std::size_t>(leaf_id)];
    if (!nd.is_leaf()) throw std::logic_error("grow_at: not a leaf");
    nd.var = var;
    nd.cut = cut;
    nd.left = static_cast<int>(out.nodes.size());
    nd.right = nd.left + 1;
    out.nodes.emplace_back();
    out.nodes.emplace_back();
    return out;
}

namespace detail {
inline int copy_subtree(const Tree& src, int id, Tree& dst, int collapse_id) {
    const auto& nd = src.nodes[static_cast<std::size_t>(id)];
    int my = static_cast<int>(dst.nodes.size());
    dst.nodes.emplace_back();
    if (nd.is_leaf() || id == collapse_id) {
        dst.nodes[static_cast<std::size_t>(my)].height = nd.height;
        return my;
    }
    dst.nodes[static_cast<std::size_t>(my)].var = nd.var;
    dst.nodes[static_cast<std::size_t>(my)].cut = nd.cut;
    int l = copy_subtree(src, nd.left, dst, collapse_id);
    int r = copy_subtree(src, nd.right, dst, collapse_id);
    dst.nodes[static_cast<std::size_t>(my)].left = l;
    dst.nodes[static_cast<std::size_t>(my)].right = r;
    return my;
}
} // namespace detail

// Collapse an internal node to a leaf, dropping its subtree.
inline Tree prune_at(const Tree& tree, int node_id) {
    if (tree.nodes[static_cast<std::size_t>(node_id)].is_leaf())
        throw std::logic_error("prune_at: not internal");
    Tree out;
    out.has_heights = tree.has_heights;
    detail::copy_subtree(tree, 0, out, node_id);
    return out;
}

inline Tree change_rule(const Tree& tree, int node_id, int var, double cut) {
    Tree out = tree;
    auto& nd = out.nodes[static_cast<std::size_t>(node_id)];
    if (nd.is_leaf()) throw std::logic_error("change_rule: not internal");
    nd.var = var;
    nd.cut = cut;
    return out;
}

// Internal nodes whose children are both leaves.
inline std::vector<int> prunable_ids(const Tree& tree) {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(tree.nodes.size()); ++i) {
        const auto& nd = tree.nodes[static_cast<std::size_t>(i)];
        if (!nd.is_leaf() && tree.nodes[static_cast<std::size_t>(nd.left)].is_leaf() &&
            tree.nodes[static_cast<std::size_t>(nd.right)].is_leaf())
            out.push_back(i);
    }
    return out;
}

// Canonical form of the row partition a tree induces on a design: cells as
// sorted row lists, cells ordered by smallest member. Two trees are the same
// partition iff these keys compare equal.
inline std::vector<std::vector<int>> partition_key(const Tree& tree, const Dataset& data) {
    LeafAssignment a = assign_rows(tree, data);
    std::vector<std::vector<int>> cells(a.leaf_ids.size());
    std::vector<int> pos(tree.nodes.size(), -1);
    for (std::size_t k = 0; k < a.leaf_ids.size(); ++k)
        pos[static_cast<std::size_t>(a.leaf_ids[k])] = static_cast<int>(k);
    for (int i = 0; i < data.n; ++i)
        cells[static_cast<std::size_t>(pos[static_cast<std::size_t>(a.leaf_of_row[static_cast<std::size_t>(i)])])]
            .push_back(i);
    cells.erase(std::remove_if(cells.begin(), cells.end(),
                               [](const std::vector<int>& c) { return c.empty(); }),
                cells.end());
    std::sort(cells.begin(), cells.end());
    return cells;
}

} // namespace spikeforest
