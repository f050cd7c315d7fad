#pragma once
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "core.hpp"
#include "rng.hpp"
#include "theory.hpp"

namespace spikeforest {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Prior specifications
// ---------------------------------------------------------------------------

struct SubsetPriorSpec {
    enum class Kind { BetaBinomial, FixedTheta };
    Kind kind = Kind::BetaBinomial;
    double a = 1.0;
    double b = 1.0;
    double theta = 0.5;

    static SubsetPriorSpec beta_binomial(double a, double b) {
        SubsetPriorSpec s;
        s.kind = Kind::BetaBinomial;
        s.a = a;
        s.b = b;
        return s;
    }
    static SubsetPriorSpec fixed_theta(double theta) {
        SubsetPriorSpec s;
        s.kind = Kind::FixedTheta;
        s.theta = theta;
        return s;
    }
    void validate() const {
        if (kind == Kind::BetaBinomial && !(a > 0.0 && b > 0.0))
            throw std::invalid_argument("subset prior: a, b must be positive");
        // closed endpoints admit the degenerate always/never-include cases
        if (kind == Kind::FixedTheta && !(theta >= 0.0 && theta <= 1.0))
            throw std::invalid_argument("subset prior: theta must lie in [0, 1]");
    }
};

struct TreePriorSpec {
    enum class Kind { PoissonUniform, Branching };
    Kind kind = Kind::Branching;
    double lambda = 5.0;       // Poisson rate on leaf counts, truncated to [1, n]
    double gamma_split = 0.95; // branching: split probability scale
    double beta_depth = 2.0;   // branching: depth decay exponent

    static TreePriorSpec branching(double gamma_split = 0.95, double beta_depth = 2.0) {
        TreePriorSpec s;
        s.kind = Kind::Branching;
        s.gamma_split = gamma_split;
        s.beta_depth = beta_depth;
        return s;
    }
    static TreePriorSpec poisson_uniform(double lambda = 5.0) {
        TreePriorSpec s;
        s.kind = Kind::PoissonUniform;
        s.lambda = lambda;
        return s;
    }
    void validate() const {
        if (kind == Kind::PoissonUniform && !(lambda > 0.0))
            throw std::invalid_argument("tree prior: lambda must be positive");
        if (kind == Kind::Branching &&
            !(gamma_split >= 0.0 && gamma_split <= 1.0 && beta_depth >= 0.0))
            throw std::invalid_argument("tree prior: need gamma in [0,1], beta >= 0");
    }
};

struct LeafPriorSpec {
    double sigma_beta_sq = 1.0;

    void validate() const {
        if (!(sigma_beta_sq > 0.0))
            throw std::invalid_argument("leaf prior: variance must be positive");
    }
};

struct NoisePriorSpec {
    enum class Kind { Fixed, InvChiSq };
    Kind kind = Kind::InvChiSq;
    double sigma_sq = 1.0;     // fixed
    double nu = 3.0;           // inverse chi-squared degrees of freedom
    double lambda_scale = 1.0; // inverse chi-squared scale

    static NoisePriorSpec fixed(double sigma_sq) {
        NoisePriorSpec s;
        s.kind = Kind::Fixed;
        s.sigma_sq = sigma_sq;
        return s;
    }
    static NoisePriorSpec inv_chisq(double nu, double lambda_scale) {
        NoisePriorSpec s;
        s.kind = Kind::InvChiSq;
        s.nu = nu;
        s.lambda_scale = lambda_scale;
        return s;
    }
    void validate() const {
        if (kind == Kind::Fixed && !(sigma_sq > 0.0))
            throw std::invalid_argument("noise prior: sigma_sq must be positive");
        if (kind == Kind::InvChiSq && !(nu > 0.0 && lambda_scale > 0.0))
            throw std::invalid_argument("noise prior: nu, scale must be positive");
    }
};

// ---------------------------------------------------------------------------
// Truncated Poisson on leaf counts
// ---------------------------------------------------------------------------

struct TruncatedPoisson {
    double lambda;
    int n_max;
    double log_norm;

    TruncatedPoisson(double lambda_, int n_max_) : lambda(lambda_), n_max(n_max_) {
        if (!(lambda > 0.0) || n_max < 1)
            throw std::invalid_argument("truncated poisson: bad parameters");
        double mx = kNegInf;
        std::vector<double> terms(static_cast<std::size_t>(n_max));
        for (int k = 1; k <= n_max; ++k) {
            terms[static_cast<std::size_t>(k - 1)] =
                k * std::log(lambda) - std::lgamma(k + 1.0);
            mx = std::max(mx, terms[static_cast<std::size_t>(k - 1)]);
        }
        double acc = 0.0;
        for (double t : terms) acc += std::exp(t - mx);
        log_norm = mx + std::log(acc);
    }

    double log_pmf(int k) const {
        if (k < 1 || k > n_max) return kNegInf;
        return k * std::log(lambda) - std::lgamma(k + 1.0) - log_norm;
    }
    // pmf(k+1)/pmf(k) inside the support, 0 at the upper edge
    double ratio_up(int k) const {
        if (k + 1 > n_max) return 0.0;
        return lambda / (k + 1.0);
    }
    double ratio_down(int k) const {
        if (k - 1 < 1) return 0.0;
        return k / lambda;
    }
    int sample(rng_t& rng) const {
        double u = rand_u(rng);
        double acc = 0.0;
        for (int k = 1; k <= n_max; ++k) {
            acc += std::exp(log_pmf(k));
            if (u <= acc) return k;
        }
        return n_max;
    }
};

// ---------------------------------------------------------------------------
// Samplers
// ---------------------------------------------------------------------------

inline double beta_draw(rng_t& rng, double a, double b) {
    double ga = std::gamma_distribution<double>(a, 1.0)(rng);
    double gb = std::gamma_distribution<double>(b, 1.0)(rng);
    return ga / (ga + gb);
}

inline SubsetS sample_subset(const SubsetPriorSpec& spec, int p, rng_t& rng) {
    if (p < 1) throw std::invalid_argument("sample_subset: p >= 1 required");
    spec.validate();
    double theta = spec.kind == SubsetPriorSpec::Kind::FixedTheta
                       ? spec.theta
                       : beta_draw(rng, spec.a, spec.b);
    SubsetS s;
    for (int j = 0; j < p; ++j)
        if (rand_u(rng) < theta) s.members.push_back(j);
    return s;
}

// Log prior mass of a subset of the given size (theta integrated out for the
// beta-binomial kind).
inline double log_subset_prior(const SubsetPriorSpec& spec, int p, int subset_size) {
    double q = static_cast<double>(subset_size);
    if (spec.kind == SubsetPriorSpec::Kind::BetaBinomial) {
        auto lbeta = [](double x, double y) {
            return std::lgamma(x) + std::lgamma(y) - std::lgamma(x + y);
        };
        return lbeta(spec.a + q, spec.b + p - q) - lbeta(spec.a, spec.b);
    }
    if (spec.theta <= 0.0) return subset_size == 0 ? 0.0 : kNegInf;
    if (spec.theta >= 1.0) return subset_size == p ? 0.0 : kNegInf;
    return q * std::log(spec.theta) + (p - q) * std::log1p(-spec.theta);
}

namespace detail {

inline double branching_split_prob(const TreePriorSpec& spec, int depth) {
    return spec.gamma_split * std::pow(1.0 + depth, -spec.beta_depth);
}

inline void grow_branching(Tree& tree, int node_id, std::vector<int> rows, int depth,
                           const TreePriorSpec& spec, const SubsetS& S,
                           const Dataset& data, rng_t& rng) {
    if (rand_u(rng) >= branching_split_prob(spec, depth)) return;
    int var = S.members[static_cast<std::size_t>(rand_index(rng, S.size()))];
    std::vector<double> cuts = candidate_cuts(data, rows, var);
    if (cuts.empty()) return; // no valid split on the drawn variable: stay a leaf
    double cut = cuts[static_cast<std::size_t>(rand_index(rng, static_cast<int>(cuts.size())))];

    auto& nd = tree.nodes[static_cast<std::size_t>(node_id)];
    nd.var = var;
    nd.cut = cut;
    nd.left = static_cast<int>(tree.nodes.size());
    nd.right = nd.left + 1;
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    int left = tree.nodes[static_cast<std::size_t>(node_id)].left;
    int right = tree.nodes[static_cast<std::size_t>(node_id)].right;

    std::vector<int> lrows, rrows;
    for (int i : rows)
        (data.x(i, var) <= cut ? lrows : rrows).push_back(i);
    grow_branching(tree, left, std::move(lrows), depth + 1, spec, S, data, rng);
    grow_branching(tree, right, std::move(rrows), depth + 1, spec, S, data, rng);
}

// Grow leaf by leaf to exactly K leaves; empty return means this attempt got
// stuck before reaching K.
inline Tree grow_to_k(const Dataset& data, const SubsetS& S, int K, rng_t& rng,
                      bool& ok) {
    Tree tree = Tree::root_only();
    std::vector<std::vector<int>> rows(1);
    rows[0].resize(static_cast<std::size_t>(data.n));
    for (int i = 0; i < data.n; ++i) rows[0][static_cast<std::size_t>(i)] = i;
    ok = true;
    while (tree.leaf_count() < K) {
        std::vector<int> splittable;
        for (int id : tree.leaf_ids()) {
            for (int var : S.members) {
                if (!candidate_cuts(data, rows[static_cast<std::size_t>(id)], var).empty()) {
                    splittable.push_back(id);
                    break;
                }
            }
        }
        if (splittable.empty()) {
            ok = false;
            return tree;
        }
        int leaf = splittable[static_cast<std::size_t>(
            rand_index(rng, static_cast<int>(splittable.size())))];
        std::vector<int> vars;
        for (int var : S.members)
            if (!candidate_cuts(data, rows[static_cast<std::size_t>(leaf)], var).empty())
                vars.push_back(var);
        int var = vars[static_cast<std::size_t>(rand_index(rng, static_cast<int>(vars.size())))];
        auto cuts = candidate_cuts(data, rows[static_cast<std::size_t>(leaf)], var);
        double cut =
            cuts[static_cast<std::size_t>(rand_index(rng, static_cast<int>(cuts.size())))];
        int left = static_cast<int>(tree.nodes.size());
        int right = left + 1;
        {
            auto& nd = tree.nodes[static_cast<std::size_t>(leaf)];
            nd.var = var;
            nd.cut = cut;
            nd.left = left;
            nd.right = right;
        }
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        rows.resize(tree.nodes.size());
        for (int i : rows[static_cast<std::size_t>(leaf)])
            rows[static_cast<std::size_t>(data.x(i, var) <= cut ? left : right)].push_back(i);
    }
    return tree;
}

} // namespace detail

// Draw a bare partition from the tree prior, splitting only inside S. The
// returned tree is always valid for the design.
inline Tree sample_tree_structure(const TreePriorSpec& spec, const SubsetS& S,
                                  const Dataset& data, rng_t& rng) {
    spec.validate();
    if (S.empty()) return Tree::root_only();
    if (spec.kind == TreePriorSpec::Kind::Branching) {
        Tree tree = Tree::root_only();
        std::vector<int> rows(static_cast<std::size_t>(data.n));
        for (int i = 0; i < data.n; ++i) rows[static_cast<std::size_t>(i)] = i;
        detail::grow_branching(tree, 0, std::move(rows), 0, spec, S, data, rng);
        return tree;
    }

    TruncatedPoisson tp(spec.lambda, data.n);
    constexpr int kRedrawCap = 1000;
    constexpr int kGrowCap = 100000;
    for (int redraw = 0; redraw < kRedrawCap; ++redraw) {
        int K = tp.sample(rng);
        if (K == 1) return Tree::root_only();
        if (enumeration_bound(K, data.n, S.size()) <= 1e7) {
            EnumeratedTrees all = enumerate_valid_trees(data, S, K);
            if (all.count == 0) continue; // no valid K-leaf tree: redraw K
            if (all.count <= 1000000) {
                return all.trees[static_cast<std::size_t>(
                    rand_index(rng, static_cast<int>(all.count)))];
            }
        }
        // approximate the uniform draw by rejection from the leaf grower
        for (int attempt = 0; attempt < kGrowCap; ++attempt) {
            bool ok = false;
            Tree t = detail::grow_to_k(data, S, K, rng, ok);
            if (ok) return t;
        }
    }
    throw std::runtime_error("sample_tree_structure: rejection cap exhausted");
}

inline std::vector<double> sample_leaf_heights(int K, const LeafPriorSpec& spec,
                                               rng_t& rng) {
    if (K < 0) throw std::invalid_argument("sample_leaf_heights: K >= 0 required");
    spec.validate();
    std::vector<double> beta(static_cast<std::size_t>(K));
    double sd = std::sqrt(spec.sigma_beta_sq);
    for (auto& b : beta) b = rand_normal(rng, 0.0, sd);
    return beta;
}

inline double sample_sigma_sq(const NoisePriorSpec& spec, rng_t& rng) {
    spec.validate();
    if (spec.kind == NoisePriorSpec::Kind::Fixed) return spec.sigma_sq;
    double chisq = std::chi_squared_distribution<double>(spec.nu)(rng);
    return spec.nu * spec.lambda_scale / chisq;
}

// ---------------------------------------------------------------------------
// Tree prior density
// ---------------------------------------------------------------------------

namespace detail {

inline double log_branching_prior(const Tree& tree, const TreePriorSpec& spec,
                                  const SubsetS& S, const Dataset& data) {
    auto rows = node_rows(tree, data);
    std::vector<int> depth(tree.nodes.size(), 0);
    double logp = 0.0;
    for (int id = 0; id < static_cast<int>(tree.nodes.size()); ++id) {
        const auto& nd = tree.nodes[static_cast<std::size_t>(id)];
        double psplit = branching_split_prob(spec, depth[static_cast<std::size_t>(id)]);
        if (!nd.is_leaf()) {
            if (S.empty()) return kNegInf;
            auto cuts = candidate_cuts(data, rows[static_cast<std::size_t>(id)], nd.var);
            bool on_grid = false;
            for (double c : cuts) on_grid |= c == nd.cut;
            if (!on_grid || psplit <= 0.0) return kNegInf;
            logp += std::log(psplit) - std::log(static_cast<double>(S.size())) -
                    std::log(static_cast<double>(cuts.size()));
            depth[static_cast<std::size_t>(nd.left)] =
                depth[static_cast<std::size_t>(id)] + 1;
            depth[static_cast<std::size_t>(nd.right)] =
                depth[static_cast<std::size_t>(id)] + 1;
        } else {
            // a drawn variable with no candidate cut also ends growth here
            double p_leaf;
            if (S.empty()) {
                p_leaf = 1.0;
            } else {
                int blocked = 0;
                for (int var : S.members)
                    if (candidate_cuts(data, rows[static_cast<std::size_t>(id)], var).empty())
                        ++blocked;
                p_leaf = (1.0 - psplit) +
                         psplit * blocked / static_cast<double>(S.size());
            }
            if (p_leaf <= 0.0) return kNegInf;
            logp += std::log(p_leaf);
        }
    }
    return logp;
}

} // namespace detail

// Log prior mass of a bare partition. Returns -inf when the tree is invalid
// for the design, splits outside S, or places a cut off the midpoint grid.
// The poisson-uniform kind needs the exact valid-tree count and therefore
// throws BudgetExceeded beyond the enumeration bound.
inline double log_tree_prior(const Tree& tree, const TreePriorSpec& spec, const SubsetS& S,
                             const Dataset& data) {
    spec.validate();
    if (!tree.used_vars().subset_of(S)) return kNegInf;
    if (!validate_tree(tree, data).valid) return kNegInf;
    if (spec.kind == TreePriorSpec::Kind::Branching)
        return detail::log_branching_prior(tree, spec, S, data);
    int K = tree.leaf_count();
    TruncatedPoisson tp(spec.lambda, data.n);
    EnumeratedTrees all = enumerate_valid_trees(data, S, K);
    if (all.count == 0) return kNegInf;
    return tp.log_pmf(K) - std::log(static_cast<double>(all.count));
}

} // namespace spikeforest
