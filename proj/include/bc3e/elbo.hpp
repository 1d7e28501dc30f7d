#pragma once

// ELBO evaluation. The bound splits into a params-independent per-instance
// part plus two closed forms in the aggregates:
//   alpha part:  N [log G(sum a) - sum log G(a_i)] + sum_i (a_i - 1) gs_i
//   beta part:   sum_{m,i,j} S_mij log beta_mij
// where gs and S are the SuffStats fields. Both the centralized driver and
// the aggregator assemble totals this way, which is what makes their ELBO
// traces directly comparable.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bc3e/errors.hpp"
#include "bc3e/special_functions.hpp"
#include "bc3e/suff_stats.hpp"
#include "bc3e/types.hpp"

namespace bc3e {

// Expected Dirichlet log prior of the whole data set as a function of
// alpha; this is the objective the Newton step maximizes.
inline double alpha_objective(std::span<const double> alpha,
                              std::span<const double> gamma_stats,
                              std::int64_t n_instances) {
    double alpha_sum = 0.0;
    for (double a : alpha) {
        if (!(a > 0.0)) throw DomainError("alpha_objective: alpha entries must be > 0");
        alpha_sum += a;
    }
    double log_gamma_block = log_gamma(alpha_sum);
    for (double a : alpha) log_gamma_block -= log_gamma(a);
    double value = static_cast<double>(n_instances) * log_gamma_block;
    for (std::size_t i = 0; i < alpha.size(); ++i)
        value += (alpha[i] - 1.0) * gamma_stats[i];
    return value;
}

inline std::vector<double> alpha_gradient(std::span<const double> alpha,
                                          std::span<const double> gamma_stats,
                                          std::int64_t n_instances) {
    double alpha_sum = 0.0;
    for (double a : alpha) {
        if (!(a > 0.0)) throw DomainError("alpha_gradient: alpha entries must be > 0");
        alpha_sum += a;
    }
    const double psi_sum = digamma(alpha_sum);
    std::vector<double> grad(alpha.size());
    for (std::size_t i = 0; i < alpha.size(); ++i)
        grad[i] = static_cast<double>(n_instances) * (psi_sum - digamma(alpha[i])) +
                  gamma_stats[i];
    return grad;
}

// Total bound from aggregates. Fold order is fixed (base, alpha part, beta
// part; matrices walked m, i, j ascending) so the result is reproducible.
inline double assemble_elbo(const SuffStats& stats, const ModelParams& params) {
    std::vector<double> gs(stats.gamma_stats.size());
    for (std::size_t i = 0; i < gs.size(); ++i) gs[i] = stats.gamma_stats[i].value();
    const double alpha_part = alpha_objective(params.alpha, gs, stats.count);
    double beta_part = 0.0;
    for (std::size_t m = 0; m < stats.beta_numerators.size(); ++m) {
        const auto& numerators = stats.beta_numerators[m];
        for (std::size_t i = 0; i < numerators.rows(); ++i)
            for (std::size_t j = 0; j < numerators.cols(); ++j)
                beta_part += numerators(i, j).value() * std::log(params.beta[m](i, j));
    }
    const double total = stats.elbo_base.value() + alpha_part + beta_part;
    if (std::isnan(total)) throw NumericalError("assemble_elbo: NaN bound");
    return total;
}

struct ElboBreakdown {
    double total = 0.0;
    double expected_log_joint = 0.0;
    double entropy = 0.0;
    // expected log joint, term by term
    double theta_prior_term = 0.0;
    double classifier_term = 0.0;
    double z_term = 0.0;
    double cluster_emission_term = 0.0;
    // entropy, term by term; the discrete part is nonnegative
    double dirichlet_entropy_term = 0.0;
    double multinomial_entropy_term = 0.0;
};

// Full named breakdown for a given state. `total` is assembled exactly like
// the fit trace (base + alpha part + beta part); the named terms are
// informational per-term sums and agree with it to rounding.
inline ElboBreakdown compute_elbo(const ModelParams& params, const VariationalState& state,
                                  const LabelTable& table) {
    const std::size_t n = state.n_instances();
    const std::size_t k = params.alpha.size();
    const std::size_t r1 = table.class_labels.cols();
    const std::size_t r2 = table.cluster_labels.cols();

    std::vector<std::size_t> clusters_per(r2);
    for (std::size_t m = 0; m < r2; ++m) clusters_per[m] = params.beta[m].cols();
    SuffStats stats = SuffStats::zero(k, clusters_per);

    ExactSum theta_prior, classifier, z_term, emission, dir_entropy, mult_entropy;
    MatrixD phi_n(r2, k);
    for (std::size_t row = 0; row < n; ++row) {
        std::span<const double> gamma_n(state.gamma.row(row), k);
        for (std::size_t m = 0; m < r2; ++m)
            for (std::size_t i = 0; i < k; ++i) phi_n(m, i) = state.phi[m](row, i);
        std::span<const int> class_row(r1 ? table.class_labels.row(row) : nullptr, r1);
        std::span<const int> cluster_row(r2 ? table.cluster_labels.row(row) : nullptr, r2);
        accumulate_instance(stats, gamma_n, phi_n, class_row, cluster_row);

        const InstanceElog ie = instance_elog(gamma_n);
        theta_prior.add(instance_alpha_share(ie, params.alpha));
        double c = 0.0;
        for (int label : class_row) c += ie.elog[static_cast<std::size_t>(label)];
        classifier.add(c);
        double z = 0.0;
        for (std::size_t m = 0; m < r2; ++m)
            for (std::size_t i = 0; i < k; ++i) z += phi_n(m, i) * ie.elog[i];
        z_term.add(z);
        emission.add(instance_emission_share(phi_n, params.beta, cluster_row));
        double de = -log_gamma(ie.gamma_sum);
        for (std::size_t i = 0; i < k; ++i) de += log_gamma(gamma_n[i]);
        for (std::size_t i = 0; i < k; ++i) de -= (gamma_n[i] - 1.0) * ie.elog[i];
        dir_entropy.add(de);
        double me = 0.0;
        for (std::size_t m = 0; m < r2; ++m)
            for (std::size_t i = 0; i < k; ++i) {
                const double p = phi_n(m, i);
                if (p > 0.0) me -= p * std::log(p);
            }
        mult_entropy.add(me);
    }

    ElboBreakdown out;
    out.theta_prior_term = theta_prior.value();
    out.classifier_term = classifier.value();
    out.z_term = z_term.value();
    out.cluster_emission_term = emission.value();
    out.dirichlet_entropy_term = dir_entropy.value();
    out.multinomial_entropy_term = mult_entropy.value();
    out.expected_log_joint = out.theta_prior_term + out.classifier_term + out.z_term +
                             out.cluster_emission_term;
    out.entropy = out.dirichlet_entropy_term + out.multinomial_entropy_term;
    out.total = assemble_elbo(stats, params);
    if (std::isnan(out.expected_log_joint) || std::isnan(out.entropy))
        throw NumericalError("compute_elbo: NaN term");
    return out;
}

}  // namespace bc3e
