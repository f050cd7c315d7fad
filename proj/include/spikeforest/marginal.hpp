#pragma once
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "core.hpp"
#include "priors.hpp"

namespace spikeforest {

struct LeafSuffStats {
    int n = 0;
    double sum = 0.0;
    double sum_sq = 0.0; // raw sum of squared residuals
};

// log of the Gaussian likelihood with the leaf height integrated out under a
// N(0, sigma_beta_sq) prior:
//   -(n/2) log(2 pi s2) - (1/2) log(1 + n sb2/s2) - SS/(2 s2)
//   + sb2 n^2 rbar^2 / (2 s2 (s2 + n sb2))
inline double log_marginal_leaf(const LeafSuffStats& st, double sigma_sq,
                                double sigma_beta_sq) {
    if (st.n == 0) return kNegInf;
    double n = st.n;
    double mean = st.sum / n;
    return -0.5 * n * std::log(2.0 * std::numbers::pi * sigma_sq) -
           0.5 * std::log1p(n * sigma_beta_sq / sigma_sq) -
           st.sum_sq / (2.0 * sigma_sq) +
           sigma_beta_sq * n * n * mean * mean /
               (2.0 * sigma_sq * (sigma_sq + n * sigma_beta_sq));
}

inline std::vector<LeafSuffStats> leaf_stats(const Tree& tree, const Dataset& data,
                                             std::span<const double> residuals) {
    std::vector<LeafSuffStats> stats(tree.nodes.size());
    for (int i = 0; i < data.n; ++i) {
        int leaf = tree.route(data.row(i));
        auto& st = stats[static_cast<std::size_t>(leaf)];
        double r = residuals[static_cast<std::size_t>(i)];
        ++st.n;
        st.sum += r;
        st.sum_sq += r * r;
    }
    return stats;
}

// Marginal likelihood of residuals given a bare partition, all leaf heights
// integrated out. -inf when some leaf cell is empty.
inline double log_marginal_tree(const Tree& partition, const Dataset& data,
                                std::span<const double> residuals, double sigma_sq,
                                double sigma_beta_sq) {
    auto stats = leaf_stats(partition, data, residuals);
    double total = 0.0;
    for (std::size_t id = 0; id < partition.nodes.size(); ++id) {
        if (!partition.nodes[id].is_leaf()) continue;
        double term = log_marginal_leaf(stats[id], sigma_sq, sigma_beta_sq);
        if (term == kNegInf) return kNegInf;
        total += term;
    }
    return total;
}

} // namespace spikeforest
