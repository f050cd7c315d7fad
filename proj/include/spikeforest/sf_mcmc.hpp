#pragma once
#include <cassert>
#include <cmath>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "core.hpp"
#include "io.hpp"
#include "marginal.hpp"
#include "priors.hpp"
#include "rng.hpp"

namespace spikeforest {

// Metropolis-Hastings sampler over (variable subset, forest partition) with
// leaf heights integrated out and the residual variance held at a fixed
// value. Joint proposals couple a subset move (add / delete / stay) with a
// matched tree move so a newly added variable enters the tree at once and a
// deleted one leaves it.

struct SfConfig {
    long iterations = 10000;
    double p_add = 0.4;
    double p_delete = 0.4;
    double p_stay = 0.2;
    double birth_scale = 0.7;
    double poisson_lambda = 5.0; // truncated-Poisson prior on leaves per tree
    double subset_a = 1.0;       // beta-binomial subset prior
    double subset_b = 1.0;
    int num_trees = 1;           // 1 recovers single-tree sampling
    double sigma_sq = 1.0;       // fixed; standardize the response beforehand
    double sigma_beta_sq = 1.0;
    double burn_in_fraction = 0.2;
    // stay-branch tree moves: add, delete, replace, rule
    double p_stay_add = 0.25;
    double p_stay_delete = 0.25;
    double p_stay_replace = 0.25;
    double p_stay_rule = 0.25;

    void validate() const {
        if (iterations < 1) throw std::invalid_argument("sf: iterations >= 1 required");
        if (std::abs(p_add + p_delete + p_stay - 1.0) > 1e-9 || p_add < 0 ||
            p_delete < 0 || p_stay < 0)
            throw std::invalid_argument("sf: subset move probabilities must sum to 1");
        if (!(birth_scale > 0.0 && birth_scale <= 1.0))
            throw std::invalid_argument("sf: birth_scale in (0, 1] required");
        if (!(poisson_lambda > 0.0 && subset_a > 0.0 && subset_b > 0.0))
            throw std::invalid_argument("sf: positive lambda, a, b required");
        if (num_trees < 1) throw std::invalid_argument("sf: num_trees >= 1 required");
        if (!(sigma_sq > 0.0 && sigma_beta_sq > 0.0))
            throw std::invalid_argument("sf: positive variances required");
        if (std::abs(p_stay_add + p_stay_delete + p_stay_replace + p_stay_rule - 1.0) > 1e-9)
            throw std::invalid_argument("sf: stay move probabilities must sum to 1");
        if (!(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0))
            throw std::invalid_argument("sf: burn_in_fraction in [0, 1) required");
    }
};

struct SfState {
    SubsetS subset;
    Forest forest;
    std::vector<std::vector<double>> tree_fit; // heights-based fits, for num_trees > 1
    std::vector<double> total_fit;
    double log_post = 0.0;
};

enum class SubsetMove { Add, Delete, Stay };

inline const char* subset_move_name(SubsetMove m) {
    switch (m) {
        case SubsetMove::Add: return "add";
        case SubsetMove::Delete: return "delete";
        case SubsetMove::Stay: return "stay";
    }
    return "?";
}

struct SubsetProposal {
    SubsetMove kind = SubsetMove::Stay;
    int candidate = -1; // variable for add/delete
};

struct SfProposal {
    bool valid = false; // false marks auto-reject
    SubsetMove kind = SubsetMove::Stay;
    int candidate = -1;
    SubsetS new_subset;
    bool tree_changed = false;
    bool subset_only = false;
    int tree_index = 0;
    Tree new_tree;
    double log_fwd = 0.0;
    double log_rev = 0.0;
    std::string move;
};

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<int> var_occurrences(const Tree& tree, int var) {
    std::vector<int> out;
    for (int id = 0; id < static_cast<int>(tree.nodes.size()); ++id)
        if (!tree.nodes[static_cast<std::size_t>(id)].is_leaf() &&
            tree.nodes[static_cast<std::size_t>(id)].var == var)
            out.push_back(id);
    return out;
}

inline std::vector<int> repeat_vars(const Tree& tree) {
    std::map<int, int> counts;
    for (const auto& nd : tree.nodes)
        if (!nd.is_leaf()) ++counts[nd.var];
    std::vector<int> out;
    for (const auto& [var, c] : counts)
        if (c > 1) out.push_back(var);
    return out;
}

inline std::vector<int> death_positions(const Tree& tree, int var) {
    std::vector<int> out;
    for (int id : var_occurrences(tree, var)) {
        const auto& nd = tree.nodes[static_cast<std::size_t>(id)];
        if (tree.nodes[static_cast<std::size_t>(nd.left)].is_leaf() &&
            tree.nodes[static_cast<std::size_t>(nd.right)].is_leaf())
            out.push_back(id);
    }
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Proposals
// ---------------------------------------------------------------------------

inline SubsetProposal propose_subset(const SfState& st, int p, const SfConfig& cfg,
                                     rng_t& rng) {
    SubsetProposal out;
    double u = rand_u(rng);
    if (u < cfg.p_add)
        out.kind = SubsetMove::Add;
    else if (u < cfg.p_add + cfg.p_delete)
        out.kind = SubsetMove::Delete;
    else
        out.kind = SubsetMove::Stay;
    // degenerate cases fall back to stay
    if (out.kind == SubsetMove::Add && st.subset.size() == p) out.kind = SubsetMove::Stay;
    if (out.kind == SubsetMove::Delete && st.subset.empty()) out.kind = SubsetMove::Stay;
    if (out.kind == SubsetMove::Add) {
        SubsetS comp = st.subset.complement(p);
        out.candidate = comp.members[static_cast<std::size_t>(rand_index(rng, comp.size()))];
    } else if (out.kind == SubsetMove::Delete) {
        out.candidate =
            st.subset.members[static_cast<std::size_t>(rand_index(rng, st.subset.size()))];
    }
    return out;
}

// Tree move matched to a subset proposal, with the full forward/reverse
// proposal log-probabilities (subset kind and candidate terms included).
inline SfProposal propose_tree_given_subset(const SfState& st, const SubsetProposal& sp,
                                            const SubsetS& new_subset, const Dataset& data,
                                            const SfConfig& cfg, rng_t& rng) {
    SfProposal out;
    out.kind = sp.kind;
    out.candidate = sp.candidate;
    out.new_subset = new_subset;
    out.tree_index = cfg.num_trees == 1 ? 0 : rand_index(rng, cfg.num_trees);
    const Tree& tree = st.forest.trees[static_cast<std::size_t>(out.tree_index)];
    const int K = tree.leaf_count();
    const int q = st.subset.size();
    const int p = data.p;
    TruncatedPoisson tp(cfg.poisson_lambda, data.n);

    if (sp.kind == SubsetMove::Add) {
        const int j = sp.candidate;
        out.log_fwd = std::log(cfg.p_add) - std::log(static_cast<double>(p - q));
        out.log_rev = std::log(cfg.p_delete) - std::log(static_cast<double>(q + 1));

        bool birth_ok = K + 1 <= data.n;
        auto reps = detail::repeat_vars(tree);
        bool replace_ok = !reps.empty();
        if (!birth_ok && !replace_ok) return out; // no eligible move: auto-reject
        double p_birth = !birth_ok ? 0.0
                         : replace_ok
                             ? cfg.birth_scale * std::min(tp.ratio_up(K), 1.0)
                             : 1.0;
        bool do_birth = rand_u(rng) < p_birth;
        auto rows = node_rows(tree, data);

        if (do_birth) {
            out.move = "add-birth";
            auto leaves = tree.leaf_ids();
            int leaf = leaves[static_cast<std::size_t>(
                rand_index(rng, static_cast<int>(leaves.size())))];
            auto cuts = candidate_cuts(data, rows[static_cast<std::size_t>(leaf)], j);
            if (cuts.empty()) return out;
            double cut = cuts[static_cast<std::size_t>(
                rand_index(rng, static_cast<int>(cuts.size())))];
            out.new_tree = grow_at(tree, leaf, j, cut);
            out.log_fwd += std::log(p_birth) - std::log(static_cast<double>(K)) -
                           std::log(static_cast<double>(cuts.size()));
            // reverse: delete j, death of the fresh node (j occurs exactly once)
            bool rev_replace_ok = out.new_tree.used_vars().size() >= 2;
            double p_death_rev =
                rev_replace_ok ? cfg.birth_scale * std::min(tp.ratio_down(K + 1), 1.0) : 1.0;
            out.log_rev += std::log(p_death_rev); // single eligible death position
        } else {
            out.move = "add-replace";
            int v = reps[static_cast<std::size_t>(
                rand_index(rng, static_cast<int>(reps.size())))];
            auto occs = detail::var_occurrences(tree, v);
            int node = occs[static_cast<std::size_t>(
                rand_index(rng, static_cast<int>(occs.size())))];
            auto cuts_j = candidate_cuts(data, rows[static_cast<std::size_t>(node)], j);
            if (cuts_j.empty()) return out;
            double cut = cuts_j[static_cast<std::size_t>(
                rand_index(rng, static_cast<int>(cuts_j.size())))];
            out.new_tree = change_rule(tree, node, j, cut);
            if (!validate_tree(out.new_tree, data).valid) return out;
            out.log_fwd += std::log(1.0 - p_birth) -
                           std::log(static_cast<double>(reps.size())) -
                           std::log(static_cast<double>(occs.size())) -
                           std::log(static_cast<double>(cuts_j.size()));
            // reverse: delete j (occurs exactly once, at `node`) via replace
            // back to v, which stays used elsewhere
            auto dpos = detail::death_positions(out.new_tree, j);
            double p_death_rev =
                dpos.empty() ? 0.0
                             : cfg.birth_scale * std::min(tp.ratio_down(K), 1.0);
            double p_rep_rev = 1.0 - p_death_rev;
            int m_rev = out.new_tree.used_vars().size() - 1; // targets other than j
            auto cuts_v = candidate_cuts(data, rows[static_cast<std::size_t>(node)],
                                         tree.nodes[static_cast<std::size_t>(node)].var);
            out.log_rev += std::log(p_rep_rev) - std::log(static_cast<double>(m_rev)) -
                           std::log(static_cast<double>(cuts_v.size()));
        }
        out.tree_changed = true;
        out.valid = true;
        return out;
    }

    if (sp.kind == SubsetMove::Delete) {
        const int v = sp.candidate;
        out.log_fwd = std::log(cfg.p_delete) - std::log(static_cast<double>(q));
        out.log_rev = std::log(cfg.p_add) - std::log(static_cast<double>(p - q + 1));
        auto occs = detail::var_occurrences(tree, v);

        if (occs.empty()) {
            // variable unused by this tree: subset-only move; the catalog has
            // no tree-preserving reverse, acceptance uses the prior ratio only
            out.move = "delete-unused";
            out.subset_only = true;
            out.log_fwd = 0.0;
            out.log_rev = 0.0;
            out.valid = true;
            return out;
        }

        auto dpos = detail::death_positions(tree, v);
        bool death_ok = !dpos.empty();
        bool replace_ok = occs.size() == 1 && tree.used_vars().size() >= 2;
        if (!death_ok && !replace_ok) return out; // auto-reject the whole move
        double p_death = !death_ok ? 0.0
                         : replace_ok
                             ? cfg.birth_scale * std::min(tp.ratio_down(K), 1.0)
                             : 1.0;
        bool do_death = rand_u(rng) < p_death;
        auto rows = node_rows(tree, data);

        if (do_death) {
            out.move = "delete-death";
            int node = dpos[static_cast<std::size_t>(
                rand_index(rng, static_cast<int>(dpos.size())))];
            out.new_tree = prune_at(tree, node);
            out.log_fwd += std::log(p_death) - std::log(static_cast<double>(dpos.size()));
            // reverse: add v back by splitting the collapsed leaf
            auto reps_rev = detail::repeat_vars(out.new_tree);
            double p_birth_rev =
                reps_rev.empty() ? 1.0
                                 : cfg.birth_scale * std::min(tp.ratio_up(K - 1), 1.0);
            auto cuts_v = candidate_cuts(data, rows[static_cast<std::size_t>(node)], v);
            out.log_rev += std::log(p_birth_rev) -
                           std::log(static_cast<double>(K - 1)) -
                           std::log(static_cast<double>(cuts_v.size()));
        } else {
            out.move = "delete-replace";
            int node = occs[0]; // single occurrence
            std::vector<int> targets;
            for (int w : tree.used_vars().members)
                if (w != v) targets.push_back(w);
            int w = targets[static_cast<std::size_t>(
                rand_index(rng, static_cast<int>(targets.size())))];
            auto cuts_w = candidate_cuts(data, rows[static_cast<std::size_t>(node)], w);
            if (cuts_w.empty()) return out;
            double cut = cuts_w[static_cast<std::size_t>(
                rand_index(rng, static_cast<int>(cuts_w.size())))];
            out.new_tree = change_rule(tree, node, w, cut);
            if (!validate_tree(out.new_tree, data).valid) return out;
            out.log_fwd += std::log(1.0 - p_death) -
                           std::log(static_cast<double>(targets.size())) -
                           std::log(static_cast<double>(cuts_w.size()));
            // reverse: add v, replacing one occurrence of the repeated w
            auto reps_rev = detail::repeat_vars(out.new_tree);
            double p_birth_rev = K + 1 > data.n
                                     ? 0.0
                                     : cfg.birth_scale * std::min(tp.ratio_up(K), 1.0);
            auto occ_w_rev = detail::var_occurrences(out.new_tree, w);
            auto cuts_v = candidate_cuts(data, rows[static_cast<std::size_t>(node)], v);
            out.log_rev += std::log(1.0 - p_birth_rev) -
                           std::log(static_cast<double>(reps_rev.size())) -
                           std::log(static_cast<double>(occ_w_rev.size())) -
                           std::log(static_cast<double>(cuts_v.size()));
        }
        out.tree_changed = true;
        out.valid = true;
        return out;
    }

    // stay: tree-only moves, subset unchanged (kind probabilities cancel)
    double u = rand_u(rng);
    auto rows = node_rows(tree, data);
    if (u < cfg.p_stay_add) {
        out.move = "stay-add";
        if (st.subset.empty()) return out;
        auto leaves = tree.leaf_ids();
        int leaf =
            leaves[static_cast<std::size_t>(rand_index(rng, static_cast<int>(leaves.size())))];
        int var = st.subset.members[static_cast<std::size_t>(rand_index(rng, q))];
        auto cuts = candidate_cuts(data, rows[static_cast<std::size_t>(leaf)], var);
        if (cuts.empty()) return out;
        double cut =
            cuts[static_cast<std::size_t>(rand_index(rng, static_cast<int>(cuts.size())))];
        out.new_tree = grow_at(tree, leaf, var, cut);
        out.log_fwd = std::log(cfg.p_stay_add) - std::log(static_cast<double>(K)) -
                      std::log(static_cast<double>(q)) -
                      std::log(static_cast<double>(cuts.size()));
        out.log_rev = std::log(cfg.p_stay_delete) -
                      std::log(static_cast<double>(prunable_ids(out.new_tree).size()));
    } else if (u < cfg.p_stay_add + cfg.p_stay_delete) {
        out.move = "stay-delete";
        auto prunable = prunable_ids(tree);
        if (prunable.empty()) return out;
        int node = prunable[static_cast<std::size_t>(
            rand_index(rng, static_cast<int>(prunable.size())))];
        int old_var = tree.nodes[static_cast<std::size_t>(node)].var;
        out.new_tree = prune_at(tree, node);
        auto cuts = candidate_cuts(data, rows[static_cast<std::size_t>(node)], old_var);
        out.log_fwd = std::log(cfg.p_stay_delete) -
                      std::log(static_cast<double>(prunable.size()));
        out.log_rev = std::log(cfg.p_stay_add) -
                      std::log(static_cast<double>(K - 1)) -
                      std::log(static_cast<double>(q)) -
                      std::log(static_cast<double>(cuts.size()));
    } else if (u < cfg.p_stay_add + cfg.p_stay_delete + cfg.p_stay_replace) {
        out.move = "stay-replace";
        if (st.subset.empty()) return out;
        auto internals = tree.internal_ids();
        if (internals.empty()) return out;
        int node = internals[static_cast<std::size_t>(
            rand_index(rng, static_cast<int>(internals.size())))];
        int var = st.subset.members[static_cast<std::size_t>(rand_index(rng, q))];
        auto cuts_new = candidate_cuts(data, rows[static_cast<std::size_t>(node)], var);
        if (cuts_new.empty()) return out;
        double cut = cuts_new[static_cast<std::size_t>(
            rand_index(rng, static_cast<int>(cuts_new.size())))];
        int old_var = tree.nodes[static_cast<std::size_t>(node)].var;
        auto cuts_old = candidate_cuts(data, rows[static_cast<std::size_t>(node)], old_var);
        out.new_tree = change_rule(tree, node, var, cut);
        if (!validate_tree(out.new_tree, data).valid) return out;
        out.log_fwd = -std::log(static_cast<double>(cuts_new.size()));
        out.log_rev = -std::log(static_cast<double>(cuts_old.size()));
    } else {
        out.move = "stay-rule";
        auto internals = tree.internal_ids();
        if (internals.empty()) return out;
        int node = internals[static_cast<std::size_t>(
            rand_index(rng, static_cast<int>(internals.size())))];
        int var = tree.nodes[static_cast<std::size_t>(node)].var;
        auto cuts = candidate_cuts(data, rows[static_cast<std::size_t>(node)], var);
        if (cuts.empty()) return out;
        double cut =
            cuts[static_cast<std::size_t>(rand_index(rng, static_cast<int>(cuts.size())))];
        out.new_tree = change_rule(tree, node, var, cut);
        if (!validate_tree(out.new_tree, data).valid) return out;
        // symmetric: same node set, same candidate set
        out.log_fwd = 0.0;
        out.log_rev = 0.0;
    }
    out.tree_changed = true;
    out.valid = true;
    return out;
}

inline SfProposal propose_joint(const SfState& st, const Dataset& data, const SfConfig& cfg,
                                rng_t& rng) {
    SubsetProposal sp = propose_subset(st, data.p, cfg, rng);
    SubsetS new_subset = st.subset;
    if (sp.kind == SubsetMove::Add) new_subset.add(sp.candidate);
    if (sp.kind == SubsetMove::Delete) new_subset.remove(sp.candidate);
    return propose_tree_given_subset(st, sp, new_subset, data, cfg, rng);
}

// ---------------------------------------------------------------------------
// Chain
// ---------------------------------------------------------------------------

namespace detail {

inline void sf_partial_residual(const SfState& st, const Dataset& data, int t,
                                std::vector<double>& resid) {
    resid.resize(static_cast<std::size_t>(data.n));
    for (int i = 0; i < data.n; ++i) {
        std::size_t u = static_cast<std::size_t>(i);
        resid[u] = data.y[u] -
                   (st.total_fit[u] - st.tree_fit[static_cast<std::size_t>(t)][u]);
    }
}

inline double sf_log_post(const SfState& st, const Dataset& data, const SfConfig& cfg) {
    TruncatedPoisson tp(cfg.poisson_lambda, data.n);
    SubsetPriorSpec sp = SubsetPriorSpec::beta_binomial(cfg.subset_a, cfg.subset_b);
    double lp = log_subset_prior(sp, data.p, st.subset.size());
    std::vector<double> resid;
    for (int t = 0; t < cfg.num_trees; ++t) {
        const Tree& tree = st.forest.trees[static_cast<std::size_t>(t)];
        lp += tp.log_pmf(tree.leaf_count());
        sf_partial_residual(st, data, t, resid);
        lp += log_marginal_tree(tree, data, resid, cfg.sigma_sq, cfg.sigma_beta_sq);
    }
    return lp;
}

} // namespace detail

inline SfState sf_init(const Dataset& data, const SfConfig& cfg) {
    cfg.validate();
    SfState st;
    st.forest.trees.assign(static_cast<std::size_t>(cfg.num_trees),
                           Tree::root_with_height(0.0));
    st.tree_fit.assign(static_cast<std::size_t>(cfg.num_trees),
                       std::vector<double>(static_cast<std::size_t>(data.n), 0.0));
    st.total_fit.assign(static_cast<std::size_t>(data.n), 0.0);
    st.log_post = detail::sf_log_post(st, data, cfg);
    return st;
}

struct SfStepResult {
    bool accepted = false;
    std::string move;
};

inline SfStepResult sf_step(SfState& st, const Dataset& data, const SfConfig& cfg,
                            rng_t& rng) {
    SfStepResult res;
    SfProposal pr = propose_joint(st, data, cfg, rng);
    res.move = pr.move.empty() ? subset_move_name(pr.kind) : pr.move;
    if (!pr.valid) return res;

    double log_alpha = 0.0;
    TruncatedPoisson tp(cfg.poisson_lambda, data.n);
    SubsetPriorSpec spp = SubsetPriorSpec::beta_binomial(cfg.subset_a, cfg.subset_b);
    log_alpha += log_subset_prior(spp, data.p, pr.new_subset.size()) -
                 log_subset_prior(spp, data.p, st.subset.size());

    std::vector<double> resid;
    if (pr.tree_changed) {
        // the whole forest must stay inside the proposed pool
        SubsetS used_after;
        for (int t = 0; t < cfg.num_trees; ++t) {
            const Tree& tr = t == pr.tree_index
                                 ? pr.new_tree
                                 : st.forest.trees[static_cast<std::size_t>(t)];
            for (int j : tr.used_vars().members) used_after.add(j);
        }
        if (!used_after.subset_of(pr.new_subset)) return res;

        const Tree& old_tree = st.forest.trees[static_cast<std::size_t>(pr.tree_index)];
        detail::sf_partial_residual(st, data, pr.tree_index, resid);
        double lm_new =
            log_marginal_tree(pr.new_tree, data, resid, cfg.sigma_sq, cfg.sigma_beta_sq);
        if (lm_new == kNegInf) return res;
        double lm_old =
            log_marginal_tree(old_tree, data, resid, cfg.sigma_sq, cfg.sigma_beta_sq);
        log_alpha += lm_new - lm_old;
        log_alpha += tp.log_pmf(pr.new_tree.leaf_count()) - tp.log_pmf(old_tree.leaf_count());
        log_alpha += pr.log_rev - pr.log_fwd;
    } else {
        // subset-only delete: the variable is unused, every tree stays put
        SubsetS used;
        for (const auto& tr : st.forest.trees)
            for (int j : tr.used_vars().members) used.add(j);
        if (!used.subset_of(pr.new_subset)) return res;
    }

    if (log_alpha >= 0.0 || std::log(rand_u(rng)) < log_alpha) {
        res.accepted = true;
        // executed transitions must be undoable by the move catalog; the
        // subset-only delete is the documented exception
        assert(pr.subset_only || std::isfinite(pr.log_rev));
        st.subset = pr.new_subset;
        if (pr.tree_changed) {
            st.forest.trees[static_cast<std::size_t>(pr.tree_index)] = pr.new_tree;
            if (cfg.num_trees > 1) {
                // refresh this tree's heights so other trees see its fit
                detail::sf_partial_residual(st, data, pr.tree_index, resid);
                auto& fit = st.tree_fit[static_cast<std::size_t>(pr.tree_index)];
                for (int i = 0; i < data.n; ++i)
                    st.total_fit[static_cast<std::size_t>(i)] -=
                        fit[static_cast<std::size_t>(i)];
                Tree& tree = st.forest.trees[static_cast<std::size_t>(pr.tree_index)];
                auto stats = leaf_stats(tree, data, resid);
                for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
                    auto& nd = tree.nodes[id];
                    if (!nd.is_leaf()) continue;
                    double nk = stats[id].n;
                    double mean = nk > 0 ? stats[id].sum / nk : 0.0;
                    double pv = cfg.sigma_beta_sq * cfg.sigma_sq /
                                (cfg.sigma_sq + nk * cfg.sigma_beta_sq);
                    double pm = cfg.sigma_beta_sq * nk * mean /
                                (cfg.sigma_sq + nk * cfg.sigma_beta_sq);
                    nd.height = rand_normal(rng, pm, std::sqrt(pv));
                }
                tree.has_heights = true;
                for (int i = 0; i < data.n; ++i) {
                    fit[static_cast<std::size_t>(i)] = evaluate_tree(tree, data.row(i));
                    st.total_fit[static_cast<std::size_t>(i)] +=
                        fit[static_cast<std::size_t>(i)];
                }
            }
        }
        st.log_post = detail::sf_log_post(st, data, cfg);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Chain driver and summaries
// ---------------------------------------------------------------------------

struct SfChainRow {
    long step = 0;
    bool accepted = false;
    SubsetS subset;
    int K_total = 0;
    double log_post = 0.0;
};

struct SfSummary {
    std::vector<double> inclusion_freq;    // post-burn-in usage frequency per var
    std::map<SubsetS, long> visited_subsets; // post-burn-in subset visit counts
    std::vector<SfChainRow> chain;
    long accepted = 0;
    long burn_in = 0;
};

inline SfSummary sf_run(const Dataset& data, const SfConfig& cfg, rng_t& rng) {
    cfg.validate();
    data.validate();
    if (data.n < 1) throw std::invalid_argument("sf_run: empty data");
    long burn = static_cast<long>(cfg.burn_in_fraction * static_cast<double>(cfg.iterations));
    if (cfg.iterations - burn < 1)
        throw std::invalid_argument("sf_run: no iterations left after burn-in");

    SfState st = sf_init(data, cfg);
    SfSummary out;
    out.burn_in = burn;
    out.inclusion_freq.assign(static_cast<std::size_t>(data.p), 0.0);
    out.chain.reserve(static_cast<std::size_t>(cfg.iterations));
    for (long step = 0; step < cfg.iterations; ++step) {
        SfStepResult res = sf_step(st, data, cfg, rng);
        out.accepted += res.accepted;
        int K_total = 0;
        for (const auto& t : st.forest.trees) K_total += t.leaf_count();
        out.chain.push_back({step, res.accepted, st.subset, K_total, st.log_post});
        if (step >= burn) {
            SubsetS used = st.forest.used_vars();
            for (int j : used.members) out.inclusion_freq[static_cast<std::size_t>(j)] += 1.0;
            ++out.visited_subsets[st.subset];
        }
    }
    double denom = static_cast<double>(cfg.iterations - burn);
    for (auto& f : out.inclusion_freq) f /= denom;
    return out;
}

inline void write_sf_chain_csv(const std::string& path, const SfSummary& summary) {
    auto f = open_out(path);
    f << "step,accepted,subset,K_total,log_post\n";
    for (const auto& row : summary.chain) {
        f << row.step << ',' << (row.accepted ? 1 : 0) << ',' << join_set(row.subset) << ','
          << row.K_total << ',' << fmt17(row.log_post) << "\n";
    }
}

inline void write_sf_inclusion_csv(const std::string& path, const SfSummary& summary) {
    auto f = open_out(path);
    f << "var,freq\n";
    for (std::size_t j = 0; j < summary.inclusion_freq.size(); ++j)
        f << (j + 1) << ',' << fmt17(summary.inclusion_freq[j]) << "\n";
}

} // namespace spikeforest
