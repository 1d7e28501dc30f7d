#pragma once

// Per-instance variational E-step. The coordinate updates are
//   phi_nmi  ~  exp(psi(gamma_ni)) * beta_{mi j(n,m)}   (normalized over i)
//   gamma_ni =  alpha_i + #votes for class i + sum_m phi_nmi
// and are iterated until gamma stops moving. Both updates touch only row n
// of the table, so any number of workers can run instances concurrently.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "bc3e/matrix.hpp"
#include "bc3e/special_functions.hpp"
#include "bc3e/types.hpp"

namespace bc3e {

struct EStepConfig {
    double inner_tol = 1e-8;      // max absolute change in gamma_n
    int max_inner_iters = 50;
    double elbo_slack = 1e-8;     // tolerated ELBO wobble when tracing
};

struct EStepResult {
    std::vector<double> gamma;    // length k
    MatrixD phi;                  // r2 x k, row m = phi_nm
    int inner_iterations = 0;
    bool converged = true;        // false = NonConvergenceWarning
    bool elbo_monotone = true;    // only meaningful when a trace was requested
};

// E[log theta_i] under Dir(gamma) plus the gamma total, reused by every
// ELBO term.
struct InstanceElog {
    std::vector<double> elog;
    double gamma_sum = 0.0;
};

inline InstanceElog instance_elog(std::span<const double> gamma_n) {
    InstanceElog out;
    out.elog.resize(gamma_n.size());
    for (double g : gamma_n) out.gamma_sum += g;
    const double psi_sum = digamma(out.gamma_sum);
    for (std::size_t i = 0; i < gamma_n.size(); ++i)
        out.elog[i] = digamma(gamma_n[i]) - psi_sum;
    return out;
}

inline MatrixD update_phi(std::span<const double> gamma_n,
                          const std::vector<MatrixD>& beta,
                          std::span<const int> cluster_labels_n) {
    const std::size_t k = gamma_n.size();
    const std::size_t r2 = beta.size();
    MatrixD phi(r2, k);
    std::vector<double> psi_gamma(k);
    for (std::size_t i = 0; i < k; ++i) psi_gamma[i] = digamma(gamma_n[i]);
    std::vector<double> log_w(k);
    for (std::size_t m = 0; m < r2; ++m) {
        const int j = cluster_labels_n[m];
        for (std::size_t i = 0; i < k; ++i)
            log_w[i] = psi_gamma[i] + std::log(beta[m](i, static_cast<std::size_t>(j)));
        const auto row = normalize_in_log_space(std::span<const double>(log_w));
        for (std::size_t i = 0; i < k; ++i) phi(m, i) = row[i];
    }
    return phi;
}

inline std::vector<double> update_gamma(std::span<const double> alpha,
                                        std::span<const int> class_labels_n,
                                        const MatrixD& phi_n) {
    const std::size_t k = alpha.size();
    std::vector<double> counts(k, 0.0);
    for (int label : class_labels_n) counts[static_cast<std::size_t>(label)] += 1.0;
    std::vector<double> gamma(k);
    for (std::size_t i = 0; i < k; ++i) {
        double g = alpha[i] + counts[i];
        for (std::size_t m = 0; m < phi_n.rows(); ++m) g += phi_n(m, i);
        gamma[i] = g;
    }
    return gamma;
}

// ELBO share of one instance, split so the alpha- and beta-dependent parts
// can be reconstructed from aggregates alone.

// classifier term + z term + both entropy terms; depends only on (gamma, phi).
inline double instance_base_share(const InstanceElog& ie,
                                  std::span<const double> gamma_n,
                                  const MatrixD& phi_n,
                                  std::span<const int> class_labels_n) {
    double classifier = 0.0;
    for (int label : class_labels_n) classifier += ie.elog[static_cast<std::size_t>(label)];
    double z_term = 0.0;
    for (std::size_t m = 0; m < phi_n.rows(); ++m)
        for (std::size_t i = 0; i < phi_n.cols(); ++i) z_term += phi_n(m, i) * ie.elog[i];
    double dir_entropy = -log_gamma(ie.gamma_sum);
    for (std::size_t i = 0; i < gamma_n.size(); ++i) dir_entropy += log_gamma(gamma_n[i]);
    for (std::size_t i = 0; i < gamma_n.size(); ++i)
        dir_entropy -= (gamma_n[i] - 1.0) * ie.elog[i];
    double mult_entropy = 0.0;
    for (std::size_t m = 0; m < phi_n.rows(); ++m)
        for (std::size_t i = 0; i < phi_n.cols(); ++i) {
            const double p = phi_n(m, i);
            if (p > 0.0) mult_entropy -= p * std::log(p);
        }
    return classifier + z_term + dir_entropy + mult_entropy;
}

inline double instance_alpha_share(const InstanceElog& ie, std::span<const double> alpha) {
    double alpha_sum = 0.0;
    for (double a : alpha) alpha_sum += a;
    double share = log_gamma(alpha_sum);
    for (double a : alpha) share -= log_gamma(a);
    for (std::size_t i = 0; i < alpha.size(); ++i) share += (alpha[i] - 1.0) * ie.elog[i];
    return share;
}

inline double instance_emission_share(const MatrixD& phi_n,
                                      const std::vector<MatrixD>& beta,
                                      std::span<const int> cluster_labels_n) {
    double share = 0.0;
    for (std::size_t m = 0; m < phi_n.rows(); ++m) {
        const auto j = static_cast<std::size_t>(cluster_labels_n[m]);
        for (std::size_t i = 0; i < phi_n.cols(); ++i)
            share += phi_n(m, i) * std::log(beta[m](i, j));
    }
    return share;
}

// Full additive ELBO contribution of one instance under the given params.
inline double instance_elbo_share(const ModelParams& params,
                                  std::span<const double> gamma_n,
                                  const MatrixD& phi_n,
                                  std::span<const int> class_labels_n,
                                  std::span<const int> cluster_labels_n) {
    const InstanceElog ie = instance_elog(gamma_n);
    return instance_base_share(ie, gamma_n, phi_n, class_labels_n) +
           instance_alpha_share(ie, params.alpha) +
           instance_emission_share(phi_n, params.beta, cluster_labels_n);
}

// Row-level E-step. Starts gamma at the update-equation value under
// uninformative phi (alpha + vote counts + r2/k) and alternates the two
// updates until gamma moves less than inner_tol. The returned phi is
// recomputed from the final gamma so the pair is mutually consistent.
inline EStepResult e_step_instance_rows(std::span<const double> alpha,
                                        const std::vector<MatrixD>& beta,
                                        std::span<const int> class_labels_n,
                                        std::span<const int> cluster_labels_n,
                                        const EStepConfig& cfg,
                                        const ModelParams* params_for_trace = nullptr,
                                        std::vector<double>* inner_elbo_trace = nullptr) {
    const std::size_t k = alpha.size();
    const std::size_t r2 = beta.size();
    EStepResult result;
    result.gamma.resize(k);
    std::vector<double> counts(k, 0.0);
    for (int label : class_labels_n) counts[static_cast<std::size_t>(label)] += 1.0;
    const double phi_prior_mass = static_cast<double>(r2) / static_cast<double>(k);
    for (std::size_t i = 0; i < k; ++i) result.gamma[i] = alpha[i] + counts[i] + phi_prior_mass;

    auto record = [&](const MatrixD& phi) {
        if (!inner_elbo_trace || !params_for_trace) return;
        const double share = instance_elbo_share(*params_for_trace, result.gamma, phi,
                                                 class_labels_n, cluster_labels_n);
        if (!inner_elbo_trace->empty() &&
            share < inner_elbo_trace->back() - cfg.elbo_slack)
            result.elbo_monotone = false;
        inner_elbo_trace->push_back(share);
    };

    result.converged = false;
    for (int it = 1; it <= cfg.max_inner_iters; ++it) {
        result.inner_iterations = it;
        MatrixD phi = update_phi(result.gamma, beta, cluster_labels_n);
        std::vector<double> next = update_gamma(alpha, class_labels_n, phi);
        double delta = 0.0;
        for (std::size_t i = 0; i < k; ++i)
            delta = std::max(delta, std::fabs(next[i] - result.gamma[i]));
        result.gamma = std::move(next);
        record(phi);
        if (delta < cfg.inner_tol) {
            result.converged = true;
            break;
        }
    }
    result.phi = update_phi(result.gamma, beta, cluster_labels_n);
    record(result.phi);
    return result;
}

inline EStepResult e_step_instance(std::size_t n, const ModelParams& params,
                                   const LabelTable& table, const EStepConfig& cfg,
                                   std::vector<double>* inner_elbo_trace = nullptr) {
    const std::size_t r1 = table.class_labels.cols();
    const std::size_t r2 = table.cluster_labels.cols();
    std::span<const int> class_row(r1 ? table.class_labels.row(n) : nullptr, r1);
    std::span<const int> cluster_row(r2 ? table.cluster_labels.row(n) : nullptr, r2);
    return e_step_instance_rows(params.alpha, params.beta, class_row, cluster_row, cfg,
                                inner_elbo_trace ? &params : nullptr, inner_elbo_trace);
}

}  // namespace bc3e
