#pragma once

// M-step and the outer VEM driver.
//
// beta has the closed form  beta_mij ~ eps + sum_n phi_nmi w2_nmj  (rows
// normalized); alpha has no closed form and is found by Newton-Raphson on
// the expected Dirichlet log prior, with the diagonal-plus-rank-one Hessian
// inverted in O(k) and a backtracking line search that keeps alpha at or
// above alpha_floor and never lets the objective decrease.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <thread>
#include <vector>

#include "bc3e/elbo.hpp"
#include "bc3e/errors.hpp"
#include "bc3e/inference.hpp"
#include "bc3e/rng.hpp"
#include "bc3e/suff_stats.hpp"
#include "bc3e/types.hpp"

namespace bc3e {

struct FitConfig {
    double outer_tol = 1e-6;        // relative ELBO change
    int max_outer_iters = 100;
    double eps_beta = 1e-10;
    double alpha_floor = 1e-10;
    int newton_max_iters = 50;
    double newton_tol = 1e-10;      // inf-norm of the alpha gradient
    std::uint64_t rng_seed = 0;
    bool freeze_alpha = false;
    int workers = 1;
    EStepConfig estep;
};

struct FitReport {
    std::vector<double> elbo_trace;   // one entry per outer iteration
    int outer_iterations = 0;
    bool converged = false;
    MatrixD posteriors;               // N x k, rows sum to 1
    std::vector<int> predicted_class; // argmax posterior, lowest index on ties
    ModelParams params;
    // diagnostics
    bool estep_all_converged = true;
    bool newton_all_converged = true;
};

inline std::vector<MatrixD> m_step_beta_from_numerators(
    const std::vector<Matrix<ExactSum>>& numerators, double eps_beta) {
    std::vector<MatrixD> beta;
    beta.reserve(numerators.size());
    for (const auto& num : numerators) {
        MatrixD b(num.rows(), num.cols());
        for (std::size_t i = 0; i < num.rows(); ++i) {
            double denom = 0.0;
            for (std::size_t j = 0; j < num.cols(); ++j) {
                b(i, j) = eps_beta + num(i, j).value();
                denom += b(i, j);
            }
            for (std::size_t j = 0; j < num.cols(); ++j) b(i, j) /= denom;
        }
        beta.push_back(std::move(b));
    }
    return beta;
}

inline std::vector<MatrixD> m_step_beta(const VariationalState& state,
                                        const LabelTable& table, double eps_beta) {
    const std::size_t k = state.gamma.cols();
    const std::size_t r2 = state.phi.size();
    std::vector<std::size_t> clusters_per(r2);
    for (std::size_t m = 0; m < r2; ++m) {
        std::size_t max_label = 0;
        for (std::size_t n = 0; n < table.cluster_labels.rows(); ++n)
            max_label = std::max(max_label,
                                 static_cast<std::size_t>(table.cluster_labels(n, m)));
        clusters_per[m] = max_label + 1;
    }
    std::vector<Matrix<ExactSum>> numerators;
    numerators.reserve(r2);
    for (std::size_t m = 0; m < r2; ++m) numerators.emplace_back(k, clusters_per[m]);
    for (std::size_t n = 0; n < state.n_instances(); ++n)
        for (std::size_t m = 0; m < r2; ++m) {
            const auto j = static_cast<std::size_t>(table.cluster_labels(n, m));
            for (std::size_t i = 0; i < k; ++i)
                numerators[m](i, j).add(state.phi[m](n, i));
        }
    return m_step_beta_from_numerators(numerators, eps_beta);
}

struct NewtonResult {
    std::vector<double> alpha;
    int iterations = 0;
    bool converged = false;   // false = NewtonNonConvergence, best iterate returned
};

inline NewtonResult m_step_alpha(std::span<const double> alpha_init,
                                 std::span<const double> gamma_stats,
                                 std::int64_t n_instances, const FitConfig& cfg) {
    const std::size_t k = alpha_init.size();
    NewtonResult result;
    result.alpha.assign(alpha_init.begin(), alpha_init.end());
    for (double& a : result.alpha) a = std::max(a, cfg.alpha_floor);
    const auto n = static_cast<double>(n_instances);
    double objective = alpha_objective(result.alpha, gamma_stats, n_instances);

    for (int it = 1; it <= cfg.newton_max_iters; ++it) {
        result.iterations = it;
        const std::vector<double> g = alpha_gradient(result.alpha, gamma_stats, n_instances);
        double g_inf = 0.0;
        for (double gi : g) g_inf = std::max(g_inf, std::fabs(gi));
        if (g_inf < cfg.newton_tol) {
            result.converged = true;
            return result;
        }
        // H = diag(h) + z 11^T; invert with the Sherman-Morrison identity.
        double alpha_sum = 0.0;
        for (double a : result.alpha) alpha_sum += a;
        const double z = n * trigamma(alpha_sum);
        std::vector<double> h(k);
        double sum_g_over_h = 0.0;
        double sum_inv_h = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            h[i] = -n * trigamma(result.alpha[i]);
            sum_g_over_h += g[i] / h[i];
            sum_inv_h += 1.0 / h[i];
        }
        const double c = z * sum_g_over_h / (1.0 + z * sum_inv_h);
        std::vector<double> direction(k);
        for (std::size_t i = 0; i < k; ++i) direction[i] = -(g[i] - c) / h[i];

        double step = 1.0;
        bool accepted = false;
        std::vector<double> candidate(k);
        while (step >= 1e-20) {
            bool feasible = true;
            for (std::size_t i = 0; i < k; ++i) {
                candidate[i] = result.alpha[i] + step * direction[i];
                if (candidate[i] < cfg.alpha_floor) feasible = false;
            }
            if (feasible) {
                const double cand_obj = alpha_objective(candidate, gamma_stats, n_instances);
                if (cand_obj >= objective) {
                    result.alpha = candidate;
                    objective = cand_obj;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if (!accepted) return result;  // wedged against the floor or a flat spot
    }
    const std::vector<double> g = alpha_gradient(result.alpha, gamma_stats, n_instances);
    double g_inf = 0.0;
    for (double gi : g) g_inf = std::max(g_inf, std::fabs(gi));
    result.converged = g_inf < cfg.newton_tol;
    return result;
}

// alpha = 1; beta rows = uniform plus a seeded perturbation of magnitude
// 0.01, renormalized. Exactly uniform beta is a symmetric saddle of the
// updates; the perturbation breaks it deterministically.
inline ModelParams init_params(const ProblemShape& shape, const FitConfig& cfg) {
    ModelParams params;
    params.alpha.assign(shape.n_classes, 1.0);
    SplitMix64 rng(cfg.rng_seed);
    for (std::size_t m = 0; m < shape.n_clusterings; ++m) {
        const std::size_t km = shape.clusters_per_clustering[m];
        MatrixD b(shape.n_classes, km);
        for (std::size_t i = 0; i < shape.n_classes; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < km; ++j) {
                const double v = 1.0 / static_cast<double>(km) +
                                 0.01 * (rng.next_double() - 0.5);
                b(i, j) = std::max(v, 1e-6);
                sum += b(i, j);
            }
            for (std::size_t j = 0; j < km; ++j) b(i, j) /= sum;
        }
        params.beta.push_back(std::move(b));
    }
    return params;
}

struct SweepOutcome {
    VariationalState state;
    SuffStats stats;
    bool all_converged = true;
};

// One full E-step over a table (or shard). Workers split the rows into
// contiguous blocks; per-block stats merge exactly, so the worker count
// cannot change any output bit.
inline SweepOutcome run_e_step_sweep(const LabelTable& table, const ProblemShape& shape,
                                     const ModelParams& params, const EStepConfig& estep,
                                     int workers = 1) {
    const std::size_t n = table.n_instances();
    const std::size_t k = shape.n_classes;
    const std::size_t r1 = shape.n_classifiers;
    const std::size_t r2 = shape.n_clusterings;

    SweepOutcome outcome;
    outcome.state.gamma = MatrixD(n, k);
    outcome.state.phi.assign(r2, MatrixD(n, k));
    outcome.stats = SuffStats::zero(k, shape.clusters_per_clustering);

    const std::size_t n_blocks =
        std::clamp<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), 1, std::max<std::size_t>(n, 1));
    std::vector<SuffStats> block_stats(n_blocks, SuffStats::zero(k, shape.clusters_per_clustering));
    std::vector<char> block_converged(n_blocks, 1);

    auto run_block = [&](std::size_t b) {
        const std::size_t begin = n * b / n_blocks;
        const std::size_t end = n * (b + 1) / n_blocks;
        for (std::size_t row = begin; row < end; ++row) {
            std::span<const int> class_row(r1 ? table.class_labels.row(row) : nullptr, r1);
            std::span<const int> cluster_row(r2 ? table.cluster_labels.row(row) : nullptr, r2);
            EStepResult res = e_step_instance_rows(params.alpha, params.beta, class_row,
                                                   cluster_row, estep);
            if (!res.converged) block_converged[b] = 0;
            for (std::size_t i = 0; i < k; ++i) outcome.state.gamma(row, i) = res.gamma[i];
            for (std::size_t m = 0; m < r2; ++m)
                for (std::size_t i = 0; i < k; ++i)
                    outcome.state.phi[m](row, i) = res.phi(m, i);
            accumulate_instance(block_stats[b], res.gamma, res.phi, class_row, cluster_row);
        }
    };

    if (n_blocks == 1) {
        run_block(0);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(n_blocks);
        for (std::size_t b = 0; b < n_blocks; ++b) pool.emplace_back(run_block, b);
        for (auto& t : pool) t.join();
    }
    for (std::size_t b = 0; b < n_blocks; ++b) {
        outcome.stats.merge(block_stats[b]);
        if (!block_converged[b]) outcome.all_converged = false;
    }
    return outcome;
}

struct MStepOutcome {
    ModelParams params;
    bool newton_converged = true;
};

inline MStepOutcome m_step_params(const SuffStats& stats, const ModelParams& current,
                                  const FitConfig& cfg) {
    MStepOutcome out;
    out.params.beta = m_step_beta_from_numerators(stats.beta_numerators, cfg.eps_beta);
    if (cfg.freeze_alpha) {
        out.params.alpha = current.alpha;
    } else {
        std::vector<double> gs(stats.gamma_stats.size());
        for (std::size_t i = 0; i < gs.size(); ++i) gs[i] = stats.gamma_stats[i].value();
        NewtonResult newton = m_step_alpha(current.alpha, gs, stats.count, cfg);
        out.params.alpha = std::move(newton.alpha);
        out.newton_converged = newton.converged;
    }
    return out;
}

inline bool elbo_converged(double prev, double current, double outer_tol) {
    return std::fabs(current - prev) <= outer_tol * std::fabs(prev);
}

inline MatrixD posteriors_from_gamma(const MatrixD& gamma) {
    MatrixD post(gamma.rows(), gamma.cols());
    for (std::size_t n = 0; n < gamma.rows(); ++n) {
        double sum = 0.0;
        for (std::size_t i = 0; i < gamma.cols(); ++i) sum += gamma(n, i);
        for (std::size_t i = 0; i < gamma.cols(); ++i) post(n, i) = gamma(n, i) / sum;
    }
    return post;
}

inline std::vector<int> argmax_rows(const MatrixD& m) {
    std::vector<int> out(m.rows());
    for (std::size_t n = 0; n < m.rows(); ++n) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < m.cols(); ++i)
            if (m(n, i) > m(n, best)) best = i;
        out[n] = static_cast<int>(best);
    }
    return out;
}

// Outer VEM loop. The trace records the bound after each E-step; the loop
// stops when the relative change falls under outer_tol. The reported params
// are the ones the final E-step ran with, so posteriors and params are a
// consistent pair.
inline FitReport fit(const LabelTable& table, const ProblemShape& shape,
                     const FitConfig& cfg) {
    shape.validate();
    const ValidationReport validation = validate_table(table, shape);
    if (!validation.ok())
        throw ValidationError("fit: invalid label table\n" + validation.to_string());

    FitReport report;
    ModelParams params = init_params(shape, cfg);
    double prev_elbo = 0.0;
    SweepOutcome sweep;
    for (int t = 1; t <= cfg.max_outer_iters; ++t) {
        sweep = run_e_step_sweep(table, shape, params, cfg.estep, cfg.workers);
        if (!sweep.all_converged) report.estep_all_converged = false;
        const double elbo = assemble_elbo(sweep.stats, params);
        report.elbo_trace.push_back(elbo);
        report.outer_iterations = t;
        if (t > 1 && elbo_converged(prev_elbo, elbo, cfg.outer_tol)) {
            report.converged = true;
            break;
        }
        prev_elbo = elbo;
        if (t == cfg.max_outer_iters) break;
        MStepOutcome m = m_step_params(sweep.stats, params, cfg);
        if (!m.newton_converged) report.newton_all_converged = false;
        params = std::move(m.params);
    }
    report.params = std::move(params);
    report.posteriors = posteriors_from_gamma(sweep.state.gamma);
    report.predicted_class = argmax_rows(report.posteriors);
    return report;
}

}  // namespace bc3e
