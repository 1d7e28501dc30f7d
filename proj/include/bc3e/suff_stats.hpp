#pragma once

// Aggregate statistics gathered during an E-step sweep. These are the only
// quantities the M-step needs, and the only quantities a data site ever
// ships: partial beta numerators, partial digamma statistics for the alpha
// update, an instance count, and the params-independent ELBO share. Fields
// are ExactSum accumulators, so partials from any split of the instances
// merge to the same totals as a single-site sweep.

#include <cstdint>
#include <span>
#include <vector>

#include "bc3e/exact_sum.hpp"
#include "bc3e/inference.hpp"
#include "bc3e/matrix.hpp"
#include "bc3e/types.hpp"

namespace bc3e {

struct SuffStats {
    std::int64_t count = 0;                        // |X_d|
    std::vector<ExactSum> gamma_stats;             // k: sum_n E[log theta_ni]
    std::vector<Matrix<ExactSum>> beta_numerators; // per m: k x k^(m), sum_n phi_nmi w2_nmj
    ExactSum elbo_base;                            // sum_n params-independent ELBO share

    static SuffStats zero(std::size_t k, std::span<const std::size_t> clusters_per) {
        SuffStats s;
        s.gamma_stats.resize(k);
        s.beta_numerators.reserve(clusters_per.size());
        for (std::size_t km : clusters_per)
            s.beta_numerators.emplace_back(k, km);
        return s;
    }

    static SuffStats zero(const ProblemShape& shape) {
        return zero(shape.n_classes, shape.clusters_per_clustering);
    }

    void merge(const SuffStats& other) {
        count += other.count;
        for (std::size_t i = 0; i < gamma_stats.size(); ++i)
            gamma_stats[i].merge(other.gamma_stats[i]);
        for (std::size_t m = 0; m < beta_numerators.size(); ++m)
            for (std::size_t x = 0; x < beta_numerators[m].data().size(); ++x)
                beta_numerators[m].data()[x].merge(other.beta_numerators[m].data()[x]);
        elbo_base.merge(other.elbo_base);
    }

    bool operator==(const SuffStats&) const = default;
};

inline void accumulate_instance(SuffStats& stats,
                                std::span<const double> gamma_n,
                                const MatrixD& phi_n,
                                std::span<const int> class_labels_n,
                                std::span<const int> cluster_labels_n) {
    stats.count += 1;
    const InstanceElog ie = instance_elog(gamma_n);
    for (std::size_t i = 0; i < ie.elog.size(); ++i) stats.gamma_stats[i].add(ie.elog[i]);
    for (std::size_t m = 0; m < phi_n.rows(); ++m) {
        const auto j = static_cast<std::size_t>(cluster_labels_n[m]);
        for (std::size_t i = 0; i < phi_n.cols(); ++i)
            stats.beta_numerators[m](i, j).add(phi_n(m, i));
    }
    stats.elbo_base.add(instance_base_share(ie, gamma_n, phi_n, class_labels_n));
}

}  // namespace bc3e
