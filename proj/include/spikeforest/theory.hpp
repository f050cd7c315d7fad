#pragma once
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "core.hpp"

namespace spikeforest {

using bigint = boost::multiprecision::cpp_int;

// Thrown when an exact enumeration would exceed its work bound.
struct BudgetExceeded : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Rate and prior-weight formulas
// ---------------------------------------------------------------------------

// Free constants of the asymptotic analysis. They enter only through the
// formulas below; recommended ranges are reported as warnings, never errors.
struct TheoryParams {
    double alpha = 1.0;
    double C = 2.0;
    double C_eps = 1.0;
    double C_K = 1.0;
    double C_T = 1.0;
    double C_q = 1.0;
    double barC = 1.0;
    double n = 100.0;
    double p = 10.0;

    std::vector<std::string> constraint_warnings() const {
        std::vector<std::string> w;
        if (!(alpha > 0.0 && alpha <= 1.0)) w.push_back("alpha outside (0,1]");
        if (C <= 2.0) w.push_back("C <= 2: model-weight decay may be too weak");
        if (C_eps <= 0.0) w.push_back("C_eps must be positive");
        if (C_K <= 0.0) w.push_back("C_K must be positive");
        if (C_T <= 0.0) w.push_back("C_T must be positive");
        if (C_q <= 0.0) w.push_back("C_q must be positive");
        if (barC <= 0.0) w.push_back("barC must be positive");
        if (n < 2.0) w.push_back("n < 2: log n is not positive");
        return w;
    }
};

// Near-minimax estimation rate for a model of the given size.
inline double rate_eps(const TheoryParams& tp, int subset_size) {
    if (subset_size < 0) throw std::invalid_argument("rate_eps: negative subset size");
    if (tp.n < 2.0) throw std::invalid_argument("rate_eps: needs n >= 2");
    double expo = -tp.alpha / (2.0 * tp.alpha + static_cast<double>(subset_size));
    return tp.C_eps * std::pow(tp.n, expo) * std::sqrt(std::log(tp.n));
}

// Unnormalized log weight of a model of the given size.
inline double log_model_weight(const TheoryParams& tp, int subset_size) {
    double s = static_cast<double>(subset_size);
    double t1 = std::pow(tp.n, s / (2.0 * tp.alpha + s)) * std::log(tp.n);
    double t2 = s * std::log(tp.p);
    return -tp.C * std::max(t1, t2);
}

// Joint weight over (leaf count, subset size), unnormalized.
inline double log_joint_weight(const TheoryParams& tp, int K, int subset_size) {
    if (K < 1) throw std::invalid_argument("log_joint_weight: K >= 1 required");
    double t1 = static_cast<double>(K) * std::log(tp.n);
    double t2 = static_cast<double>(subset_size) * std::log(tp.p);
    return -tp.C * std::max(t1, t2);
}

inline double log_forest_weight(const TheoryParams& tp, std::span<const int> leaf_counts,
                                int subset_size) {
    double total = 0.0;
    for (int k : leaf_counts) {
        if (k < 1) throw std::invalid_argument("log_forest_weight: leaf counts >= 1");
        total += static_cast<double>(k);
    }
    double t1 = total * std::log(tp.n);
    double t2 = static_cast<double>(subset_size) * std::log(tp.p);
    return -tp.C * std::max(t2, t1);
}

inline double log_T_weight(const TheoryParams& tp, int T) {
    if (T < 1) throw std::invalid_argument("log_T_weight: T >= 1 required");
    return -tp.C_T * static_cast<double>(T);
}

// ---------------------------------------------------------------------------
// Exact enumeration of valid tree-shaped partitions
// ---------------------------------------------------------------------------

// Work bound used by the exact enumerators.
inline double enumeration_bound(int K, int n, int subset_size) {
    return std::pow(static_cast<double>(K) * n * subset_size, K);
}

namespace detail {

struct SubtreeSet {
    // one representative tree per distinct induced row partition, together
    // with its canonical cell list
    std::vector<Tree> trees;
    std::vector<std::vector<std::vector<int>>> cells;
};

inline Tree join_tree(int var, double cut, const Tree& l, const Tree& r) {
    Tree out;
    out.nodes.emplace_back();
    out.nodes[0].var = var;
    out.nodes[0].cut = cut;
    int offset_l = 1;
    for (const auto& nd : l.nodes) {
        TreeNode copy = nd;
        if (!copy.is_leaf()) {
            copy.left += offset_l;
            copy.right += offset_l;
        }
        out.nodes.push_back(copy);
    }
    int offset_r = 1 + static_cast<int>(l.nodes.size());
    for (const auto& nd : r.nodes) {
        TreeNode copy = nd;
        if (!copy.is_leaf()) {
            copy.left += offset_r;
            copy.right += offset_r;
        }
        out.nodes.push_back(copy);
    }
    out.nodes[0].left = offset_l;
    out.nodes[0].right = offset_r;
    return out;
}

inline std::vector<std::vector<int>> merge_cells(std::vector<std::vector<int>> a,
                                                 const std::vector<std::vector<int>>& b) {
    a.insert(a.end(), b.begin(), b.end());
    std::sort(a.begin(), a.end());
    return a;
}

inline SubtreeSet enum_subtrees(const Dataset& data, const SubsetS& S,
                                const std::vector<int>& rows, int k) {
    SubtreeSet out;
    if (k == 1) {
        std::vector<int> cell = rows;
        std::sort(cell.begin(), cell.end());
        out.trees.push_back(Tree::root_only());
        out.cells.push_back({cell});
        return out;
    }
    if (static_cast<int>(rows.size()) < k) return out; // not enough rows for k cells

    // distinct (left,right) row splits reachable with one rule
    std::set<std::vector<int>> seen_left;
    struct Split {
        int var;
        double cut;
        std::vector<int> left, right;
    };
    std::vector<Split> splits;
    for (int var : S.members) {
        for (double cut : candidate_cuts(data, rows, var)) {
            Split sp;
            sp.var = var;
            sp.cut = cut;
            for (int i : rows)
                (data.x(i, var) <= cut ? sp.left : sp.right).push_back(i);
            if (seen_left.insert(sp.left).second) splits.push_back(std::move(sp));
        }
    }

    std::set<std::vector<std::vector<int>>> seen;
    for (const auto& sp : splits) {
        for (int k_left = 1; k_left <= k - 1; ++k_left) {
            SubtreeSet ls = enum_subtrees(data, S, sp.left, k_left);
            if (ls.trees.empty()) continue;
            SubtreeSet rs = enum_subtrees(data, S, sp.right, k - k_left);
            for (std::size_t a = 0; a < ls.trees.size(); ++a) {
                for (std::size_t b = 0; b < rs.trees.size(); ++b) {
                    auto key = merge_cells(ls.cells[a], rs.cells[b]);
                    if (!seen.insert(key).second) continue;
                    out.trees.push_back(join_tree(sp.var, sp.cut, ls.trees[a], rs.trees[b]));
                    out.cells.push_back(std::move(key));
                }
            }
        }
    }
    return out;
}

} // namespace detail

struct EnumeratedTrees {
    std::vector<Tree> trees; // one representative per distinct induced partition
    long long count = 0;
};

// All distinct valid K-partitions of the design rows using midpoint cuts on
// variables in S. Distinctness is at the level of induced row partitions.
inline EnumeratedTrees enumerate_valid_trees(const Dataset& data, const SubsetS& S, int K) {
    if (K < 1) throw std::invalid_argument("enumerate_valid_trees: K >= 1 required");
    if (data.n < 1) throw std::invalid_argument("enumerate_valid_trees: empty design");
    EnumeratedTrees out;
    if (K == 1) {
        out.trees.push_back(Tree::root_only());
        out.count = 1;
        return out;
    }
    if (S.empty()) return out;
    if (enumeration_bound(K, data.n, S.size()) > 1e7)
        throw BudgetExceeded("enumerate_valid_trees: bound (K*n*|S|)^K exceeds 1e7");
    std::vector<int> rows(static_cast<std::size_t>(data.n));
    for (int i = 0; i < data.n; ++i) rows[static_cast<std::size_t>(i)] = i;
    auto sub = detail::enum_subtrees(data, S, rows, K);
    out.trees = std::move(sub.trees);
    out.count = static_cast<long long>(out.trees.size());
    return out;
}

// ---------------------------------------------------------------------------
// Approximation gap and surplus covariance
// ---------------------------------------------------------------------------

struct GapResult {
    double delta = 0.0;
    Tree best;                    // argmin partition, heights = cell means of f0
    std::vector<double> fitted;   // best projection evaluated at the design rows
};

// Minimal empirical L2 distance between f0 and step functions on valid
// partitions with at most K leaves splitting inside S. Optimal heights are
// cell means, so the squared gap is the occupancy-weighted within-cell
// variance of f0.
inline GapResult separation_gap(const Dataset& data, std::span<const double> f0,
                                const SubsetS& S, int K) {
    if (static_cast<int>(f0.size()) != data.n)
        throw std::invalid_argument("separation_gap: f0 length mismatch");
    GapResult best;
    best.delta = std::numeric_limits<double>::infinity();
    for (int k = 1; k <= K; ++k) {
        EnumeratedTrees trees = enumerate_valid_trees(data, S, k);
        for (const auto& t : trees.trees) {
            LeafAssignment a = assign_rows(t, data);
            std::map<int, std::pair<double, int>> acc; // leaf id -> (sum, count)
            for (int i = 0; i < data.n; ++i) {
                auto& e = acc[a.leaf_of_row[static_cast<std::size_t>(i)]];
                e.first += f0[static_cast<std::size_t>(i)];
                ++e.second;
            }
            double sse = 0.0;
            for (int i = 0; i < data.n; ++i) {
                const auto& e = acc[a.leaf_of_row[static_cast<std::size_t>(i)]];
                double d = f0[static_cast<std::size_t>(i)] - e.first / e.second;
                sse += d * d;
            }
            double delta = std::sqrt(sse / data.n);
            if (delta < best.delta) {
                best.delta = delta;
                best.best = t;
                for (auto& nd : best.best.nodes) {
                    // leaves not reached by any row keep height 0; valid trees
                    // have none
                    nd.height = 0.0;
                }
                best.fitted.assign(static_cast<std::size_t>(data.n), 0.0);
                for (int i = 0; i < data.n; ++i) {
                    const auto& e = acc[a.leaf_of_row[static_cast<std::size_t>(i)]];
                    best.fitted[static_cast<std::size_t>(i)] = e.first / e.second;
                }
                for (auto& [leaf, e] : acc)
                    best.best.nodes[static_cast<std::size_t>(leaf)].height =
                        e.first / e.second;
                best.best.has_heights = true;
            }
        }
    }
    return best;
}

// Sample covariance between the surplus true signal over the S1-projection
// and the surplus fitted signal of the S-projection.
inline double surplus_covariance(const Dataset& data, std::span<const double> f0,
                                 const SubsetS& S1, const SubsetS& S, int K) {
    if (!S1.subset_of(S)) throw std::invalid_argument("surplus_covariance: S1 must lie in S");
    GapResult g1 = separation_gap(data, f0, S1, K);
    GapResult gs = separation_gap(data, f0, S, K);
    double acc = 0.0;
    for (int i = 0; i < data.n; ++i) {
        std::size_t u = static_cast<std::size_t>(i);
        acc += (f0[u] - g1.fitted[u]) * (gs.fitted[u] - g1.fitted[u]);
    }
    return acc / data.n;
}

// ---------------------------------------------------------------------------
// Integer partitions
// ---------------------------------------------------------------------------

// Partition count p(Z) by the pentagonal-number recurrence, exact.
inline bigint partition_number(int Z) {
    if (Z < 0 || Z > 200)
        throw std::invalid_argument("partition_number: Z must lie in [0, 200]");
    std::vector<bigint> p(static_cast<std::size_t>(Z) + 1);
    p[0] = 1;
    for (int m = 1; m <= Z; ++m) {
        bigint acc = 0;
        for (int k = 1;; ++k) {
            long g1 = static_cast<long>(k) * (3L * k - 1) / 2;
            long g2 = static_cast<long>(k) * (3L * k + 1) / 2;
            if (g1 > m && g2 > m) break;
            bigint term = 0;
            if (g1 <= m) term += p[static_cast<std::size_t>(m - g1)];
            if (g2 <= m) term += p[static_cast<std::size_t>(m - g2)];
            if (k % 2 == 1)
                acc += term;
            else
                acc -= term;
        }
        p[static_cast<std::size_t>(m)] = acc;
    }
    return p[static_cast<std::size_t>(Z)];
}

// Upper bound Z! * p(Z) on the cardinality of the ensemble equivalence class
// with Z total leaves.
inline bigint equiv_class_bound(int Z) {
    bigint fact = 1;
    for (int i = 2; i <= Z; ++i) fact *= i;
    return fact * partition_number(Z);
}

} // namespace spikeforest
