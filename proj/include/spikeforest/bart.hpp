#pragma once
#include <cmath>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "core.hpp"
#include "marginal.hpp"
#include "priors.hpp"
#include "rng.hpp"

namespace spikeforest {

// ---------------------------------------------------------------------------
// Configuration and state
// ---------------------------------------------------------------------------

struct BartConfig {
    int num_trees = 10;
    int burn_in = 100;
    TreePriorSpec tree_prior = TreePriorSpec::branching();
    double sigma_beta_sq = 0.0;  // <= 0 resolves to 1/num_trees
    NoisePriorSpec noise_prior = NoisePriorSpec::inv_chisq(3.0, 0.0); // scale <= 0: var(Y)
    double p_grow = 0.25;
    double p_prune = 0.25;
    double p_change = 0.5;

    void validate() const {
        if (num_trees < 1) throw std::invalid_argument("bart: num_trees >= 1 required");
        if (burn_in < 0) throw std::invalid_argument("bart: burn_in >= 0 required");
        if (p_grow < 0 || p_prune < 0 || p_change < 0 ||
            std::abs(p_grow + p_prune + p_change - 1.0) > 1e-9)
            throw std::invalid_argument("bart: move probabilities must sum to 1");
        tree_prior.validate();
    }

    double resolved_sigma_beta_sq() const {
        return sigma_beta_sq > 0.0 ? sigma_beta_sq : 1.0 / num_trees;
    }
};

// Fills data-dependent defaults (noise scale from the response variance).
inline BartConfig resolve_bart_defaults(BartConfig cfg, const Dataset& data) {
    cfg.validate();
    if (cfg.noise_prior.kind == NoisePriorSpec::Kind::InvChiSq &&
        cfg.noise_prior.lambda_scale <= 0.0) {
        double v = sample_variance(data.y);
        cfg.noise_prior.lambda_scale = v > 0.0 ? v : 1.0;
    }
    return cfg;
}

struct BartState {
    Forest forest;
    double sigma_sq = 1.0;
    std::vector<std::vector<double>> tree_fit; // per-tree fitted values, length n
    std::vector<double> total_fit;

    // cache consistency check, O(n * T)
    bool cache_consistent(const Dataset& data, double tol = 1e-9) const {
        for (std::size_t t = 0; t < forest.trees.size(); ++t)
            for (int i = 0; i < data.n; ++i)
                if (std::abs(tree_fit[t][static_cast<std::size_t>(i)] -
                             evaluate_tree(forest.trees[t], data.row(i))) > tol)
                    return false;
        for (int i = 0; i < data.n; ++i) {
            double s = 0.0;
            for (std::size_t t = 0; t < forest.trees.size(); ++t)
                s += tree_fit[t][static_cast<std::size_t>(i)];
            if (std::abs(s - total_fit[static_cast<std::size_t>(i)]) > tol) return false;
        }
        return true;
    }
};

inline BartState bart_init(const Dataset& data, const BartConfig& cfg) {
    BartState st;
    st.forest.trees.assign(static_cast<std::size_t>(cfg.num_trees),
                           Tree::root_with_height(0.0));
    st.tree_fit.assign(static_cast<std::size_t>(cfg.num_trees),
                       std::vector<double>(static_cast<std::size_t>(data.n), 0.0));
    st.total_fit.assign(static_cast<std::size_t>(data.n), 0.0);
    if (cfg.noise_prior.kind == NoisePriorSpec::Kind::Fixed) {
        st.sigma_sq = cfg.noise_prior.sigma_sq;
    } else {
        double v = sample_variance(data.y);
        st.sigma_sq = v > 0.0 ? v : 1.0;
    }
    return st;
}

// ---------------------------------------------------------------------------
// Structure moves
// ---------------------------------------------------------------------------

namespace detail {

// Tree prior log-ratio new vs old. The branching prior is evaluated exactly;
// the poisson-uniform kind uses the truncated-Poisson mass on leaf counts,
// the per-count normalization being intractable at sampling scale.
inline double log_tree_prior_ratio(const Tree& tree_new, const Tree& tree_old,
                                   const TreePriorSpec& spec, const SubsetS& S,
                                   const Dataset& data) {
    if (spec.kind == TreePriorSpec::Kind::Branching) {
        double lp_new = log_branching_prior(tree_new, spec, S, data);
        if (lp_new == kNegInf) return kNegInf;
        return lp_new - log_branching_prior(tree_old, spec, S, data);
    }
    TruncatedPoisson tp(spec.lambda, data.n);
    double lp_new = tp.log_pmf(tree_new.leaf_count());
    if (lp_new == kNegInf) return kNegInf;
    return lp_new - tp.log_pmf(tree_old.leaf_count());
}

// One Metropolis move (grow / prune / change) on a single tree held against
// fixed residuals. Returns true when the proposal is accepted and `tree` has
// been replaced.
inline bool structure_move(Tree& tree, const Dataset& data, const SubsetS& S,
                           std::span<const double> resid, double sigma_sq,
                           double sigma_beta_sq, const BartConfig& cfg, rng_t& rng) {
    double u = rand_u(rng);
    double log_fwd = 0.0, log_rev = 0.0;
    Tree proposal;

    if (u < cfg.p_grow) {
        if (S.empty()) return false;
        auto leaves = tree.leaf_ids();
        int leaf = leaves[static_cast<std::size_t>(
            rand_index(rng, static_cast<int>(leaves.size())))];
        int var = S.members[static_cast<std::size_t>(rand_index(rng, S.size()))];
        auto rows = node_rows(tree, data);
        auto cuts = candidate_cuts(data, rows[static_cast<std::size_t>(leaf)], var);
        if (cuts.empty()) return false;
        double cut =
            cuts[static_cast<std::size_t>(rand_index(rng, static_cast<int>(cuts.size())))];
        proposal = grow_at(tree, leaf, var, cut);
        log_fwd = std::log(cfg.p_grow) - std::log(static_cast<double>(leaves.size())) -
                  std::log(static_cast<double>(S.size())) -
                  std::log(static_cast<double>(cuts.size()));
        log_rev = std::log(cfg.p_prune) -
                  std::log(static_cast<double>(prunable_ids(proposal).size()));
    } else if (u < cfg.p_grow + cfg.p_prune) {
        auto prunable = prunable_ids(tree);
        if (prunable.empty()) return false;
        int node = prunable[static_cast<std::size_t>(
            rand_index(rng, static_cast<int>(prunable.size())))];
        int old_var = tree.nodes[static_cast<std::size_t>(node)].var;
        proposal = prune_at(tree, node);
        auto rows_old = node_rows(tree, data);
        auto cuts = candidate_cuts(data, rows_old[static_cast<std::size_t>(node)], old_var);
        log_fwd = std::log(cfg.p_prune) - std::log(static_cast<double>(prunable.size()));
        log_rev = std::log(cfg.p_grow) -
                  std::log(static_cast<double>(proposal.leaf_count())) -
                  std::log(static_cast<double>(S.size())) -
                  std::log(static_cast<double>(cuts.size()));
    } else {
        if (S.empty()) return false;
        auto internals = tree.internal_ids();
        if (internals.empty()) return false;
        int node = internals[static_cast<std::size_t>(
            rand_index(rng, static_cast<int>(internals.size())))];
        auto rows = node_rows(tree, data);
        int var = S.members[static_cast<std::size_t>(rand_index(rng, S.size()))];
        auto cuts_new = candidate_cuts(data, rows[static_cast<std::size_t>(node)], var);
        if (cuts_new.empty()) return false;
        double cut = cuts_new[static_cast<std::size_t>(
            rand_index(rng, static_cast<int>(cuts_new.size())))];
        int old_var = tree.nodes[static_cast<std::size_t>(node)].var;
        auto cuts_old = candidate_cuts(data, rows[static_cast<std::size_t>(node)], old_var);
        proposal = change_rule(tree, node, var, cut);
        if (!validate_tree(proposal, data).valid) return false;
        log_fwd = -std::log(static_cast<double>(cuts_new.size()));
        log_rev = -std::log(static_cast<double>(cuts_old.size()));
    }

    double prior_ratio = log_tree_prior_ratio(proposal, tree, cfg.tree_prior, S, data);
    if (prior_ratio == kNegInf) return false;
    double lm_new = log_marginal_tree(proposal, data, resid, sigma_sq, sigma_beta_sq);
    if (lm_new == kNegInf) return false;
    double lm_old = log_marginal_tree(tree, data, resid, sigma_sq, sigma_beta_sq);
    double log_alpha = lm_new - lm_old + prior_ratio + log_rev - log_fwd;
    if (log_alpha >= 0.0 || std::log(rand_u(rng)) < log_alpha) {
        tree = std::move(proposal);
        return true;
    }
    return false;
}

// Conjugate Gaussian draw of all leaf heights given residuals, refreshing the
// fitted values of this tree.
inline void draw_leaf_heights(Tree& tree, const Dataset& data,
                              std::span<const double> resid, double sigma_sq,
                              double sigma_beta_sq, rng_t& rng,
                              std::vector<double>& fit) {
    auto stats = leaf_stats(tree, data, resid);
    for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
        auto& nd = tree.nodes[id];
        if (!nd.is_leaf()) continue;
        double nk = stats[id].n;
        double mean = nk > 0 ? stats[id].sum / nk : 0.0;
        double post_var = sigma_beta_sq * sigma_sq / (sigma_sq + nk * sigma_beta_sq);
        double post_mean = sigma_beta_sq * nk * mean / (sigma_sq + nk * sigma_beta_sq);
        nd.height = rand_normal(rng, post_mean, std::sqrt(post_var));
    }
    tree.has_heights = true;
    for (int i = 0; i < data.n; ++i)
        fit[static_cast<std::size_t>(i)] = evaluate_tree(tree, data.row(i));
}

} // namespace detail

// Scaled-inverse-chi-squared full conditional of the noise variance: prior
// (nu, lambda), n observations with the given residual sum of squares.
inline double draw_sigma_sq_conditional(double nu, double lambda, int n, double residual_ss,
                                        rng_t& rng) {
    double nu_post = nu + n;
    double scale_post = (nu * lambda + residual_ss) / nu_post;
    double chisq = std::chi_squared_distribution<double>(nu_post)(rng);
    return nu_post * scale_post / chisq;
}

// ---------------------------------------------------------------------------
// Backfitting sweep
// ---------------------------------------------------------------------------

// One Gibbs pass: per tree, a Metropolis structure move against the partial
// residual followed by a conjugate redraw of its leaf heights; then the
// variance update unless the noise prior is fixed. Splits only use variables
// in S.
inline void backfit_sweep(BartState& st, const Dataset& data, const SubsetS& S,
                          const BartConfig& cfg, rng_t& rng) {
    const double sb2 = cfg.resolved_sigma_beta_sq();
    std::vector<double> resid(static_cast<std::size_t>(data.n));
    for (int t = 0; t < cfg.num_trees; ++t) {
        auto& fit_t = st.tree_fit[static_cast<std::size_t>(t)];
        for (int i = 0; i < data.n; ++i) {
            std::size_t u = static_cast<std::size_t>(i);
            resid[u] = data.y[u] - (st.total_fit[u] - fit_t[u]);
        }
        Tree& tree = st.forest.trees[static_cast<std::size_t>(t)];
        detail::structure_move(tree, data, S, resid, st.sigma_sq, sb2, cfg, rng);
        for (int i = 0; i < data.n; ++i)
            st.total_fit[static_cast<std::size_t>(i)] -= fit_t[static_cast<std::size_t>(i)];
        detail::draw_leaf_heights(tree, data, resid, st.sigma_sq, sb2, rng, fit_t);
        for (int i = 0; i < data.n; ++i)
            st.total_fit[static_cast<std::size_t>(i)] += fit_t[static_cast<std::size_t>(i)];
    }
    if (cfg.noise_prior.kind == NoisePriorSpec::Kind::Fixed) {
        st.sigma_sq = cfg.noise_prior.sigma_sq;
        return;
    }
    double ss = 0.0;
    for (int i = 0; i < data.n; ++i) {
        double e = data.y[static_cast<std::size_t>(i)] -
                   st.total_fit[static_cast<std::size_t>(i)];
        ss += e * e;
    }
    st.sigma_sq = draw_sigma_sq_conditional(cfg.noise_prior.nu, cfg.noise_prior.lambda_scale,
                                            data.n, ss, rng);
}

// Single posterior draw: burn-in sweeps from the root-only initialization.
inline std::pair<Forest, double> draw_posterior_sample(const Dataset& data, const SubsetS& S,
                                                       const BartConfig& cfg, rng_t& rng) {
    if (data.n < 1) throw std::invalid_argument("draw_posterior_sample: empty data");
    BartConfig rcfg = resolve_bart_defaults(cfg, data);
    BartState st = bart_init(data, rcfg);
    for (int sweep = 0; sweep < rcfg.burn_in; ++sweep)
        backfit_sweep(st, data, S, rcfg, rng);
    return {st.forest, st.sigma_sq};
}

// Posterior-mean predictor: average over consecutive post-burn-in draws.
struct AveragedForest {
    std::vector<Forest> draws;
    double sigma_sq_mean = 1.0;

    double evaluate(std::span<const double> xrow) const {
        double acc = 0.0;
        for (const auto& f : draws) acc += f.evaluate(xrow);
        return acc / static_cast<double>(draws.size());
    }
    SubsetS used_vars() const {
        SubsetS s;
        for (const auto& f : draws)
            for (int j : f.used_vars().members) s.add(j);
        return s;
    }
};

inline AveragedForest posterior_mean_fit(const Dataset& data, const SubsetS& S,
                                         const BartConfig& cfg, int n_samples, rng_t& rng) {
    if (n_samples < 1) throw std::invalid_argument("posterior_mean_fit: n_samples >= 1");
    BartConfig rcfg = resolve_bart_defaults(cfg, data);
    BartState st = bart_init(data, rcfg);
    for (int sweep = 0; sweep < rcfg.burn_in; ++sweep)
        backfit_sweep(st, data, S, rcfg, rng);
    AveragedForest out;
    double s2 = 0.0;
    for (int s = 0; s < n_samples; ++s) {
        if (s > 0) backfit_sweep(st, data, S, rcfg, rng);
        out.draws.push_back(st.forest);
        s2 += st.sigma_sq;
    }
    out.sigma_sq_mean = s2 / n_samples;
    return out;
}

} // namespace spikeforest
