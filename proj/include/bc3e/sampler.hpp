#pragma once

// Forward sampler for the generative process: theta_n ~ Dir(alpha), class
// labels ~ Mult(theta_n) with an optional uniform-resample noise flip,
// z_nm ~ Mult(theta_n), cluster label ~ Mult(beta_{m, z_nm}). Each instance
// draws from its own counter-seeded stream, so output is a function of the
// seed alone, never of scheduling.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "bc3e/errors.hpp"
#include "bc3e/matrix.hpp"
#include "bc3e/rng.hpp"
#include "bc3e/types.hpp"

namespace bc3e {

struct GenerativeSpec {
    ProblemShape shape;
    std::vector<double> true_alpha;     // length k
    std::vector<MatrixD> true_beta;     // per m, k x k^(m); one-hot rows allowed
    double classifier_noise = 0.0;      // probability of a uniform resample
    std::uint64_t rng_seed = 0;

    void validate() const {
        shape.validate();
        if (true_alpha.size() != shape.n_classes)
            throw ValidationError("generative spec: true_alpha must have length k");
        for (double a : true_alpha)
            if (!(a > 0.0)) throw ValidationError("generative spec: true_alpha entries > 0");
        if (true_beta.size() != shape.n_clusterings)
            throw ValidationError("generative spec: true_beta must have r2 matrices");
        for (std::size_t m = 0; m < true_beta.size(); ++m) {
            const auto& b = true_beta[m];
            if (b.rows() != shape.n_classes || b.cols() != shape.clusters_per_clustering[m])
                throw ValidationError("generative spec: true_beta dimensions");
            for (std::size_t i = 0; i < b.rows(); ++i) {
                double sum = 0.0;
                for (std::size_t j = 0; j < b.cols(); ++j) {
                    if (!(b(i, j) >= 0.0))
                        throw ValidationError("generative spec: true_beta entries >= 0");
                    sum += b(i, j);
                }
                if (std::fabs(sum - 1.0) > 1e-9)
                    throw ValidationError("generative spec: true_beta rows must sum to 1");
            }
        }
        if (!(classifier_noise >= 0.0 && classifier_noise < 1.0))
            throw ValidationError("generative spec: classifier_noise must be in [0, 1)");
    }
};

struct SampleResult {
    LabelTable table;
    MatrixD theta;                 // N x k ground-truth mixed memberships
    std::vector<int> true_class;   // argmax theta, lowest index on ties
};

inline SampleResult sample_dataset(const GenerativeSpec& spec) {
    spec.validate();
    const auto& shape = spec.shape;
    const std::size_t n = shape.n_instances;
    const std::size_t k = shape.n_classes;

    SampleResult out;
    out.table.class_labels = MatrixI(n, shape.n_classifiers);
    out.table.cluster_labels = MatrixI(n, shape.n_clusterings);
    out.table.instance_ids.resize(n);
    out.theta = MatrixD(n, k);
    out.true_class.resize(n);

    for (std::size_t row = 0; row < n; ++row) {
        SplitMix64 rng = instance_stream(spec.rng_seed, row);
        const std::vector<double> theta = sample_dirichlet(rng, spec.true_alpha);
        for (std::size_t i = 0; i < k; ++i) out.theta(row, i) = theta[i];
        std::size_t best = 0;
        for (std::size_t i = 1; i < k; ++i)
            if (theta[i] > theta[best]) best = i;
        out.true_class[row] = static_cast<int>(best);

        for (std::size_t l = 0; l < shape.n_classifiers; ++l) {
            int label = sample_categorical(rng, theta);
            if (rng.next_double() < spec.classifier_noise)
                label = static_cast<int>(rng.next_below(k));
            out.table.class_labels(row, l) = label;
        }
        for (std::size_t m = 0; m < shape.n_clusterings; ++m) {
            const int z = sample_categorical(rng, theta);
            const auto& beta_row_start = spec.true_beta[m];
            std::span<const double> beta_row(beta_row_start.row(static_cast<std::size_t>(z)),
                                             beta_row_start.cols());
            out.table.cluster_labels(row, m) = sample_categorical(rng, beta_row);
        }
        char id[24];
        std::snprintf(id, sizeof id, "n%07zu", row);
        out.table.instance_ids[row] = id;
    }
    return out;
}

}  // namespace bc3e
