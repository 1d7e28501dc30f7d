#pragma once

// Shared synthetic fixtures. The "pure clustering / noisy classifier"
// family below is used by both the unit suite and the acceptance suite.

#include <vector>

#include "bc3e/matrix.hpp"
#include "bc3e/sampler.hpp"
#include "bc3e/types.hpp"

namespace fixtures {

inline bc3e::MatrixD diag_dominant(std::size_t k, std::size_t cols, double diag,
                                   std::size_t shift = 0) {
    bc3e::MatrixD b(k, cols);
    const double off = (1.0 - diag) / static_cast<double>(cols - 1);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < cols; ++j)
            b(i, j) = (j == (i + shift) % cols) ? diag : off;
    return b;
}

// k = 3 ensemble: three classifiers resampled uniformly 30% of the time,
// two nearly pure clusterings (one with permuted cluster numbering).
inline bc3e::GenerativeSpec noisy_vote_spec(std::size_t n_instances,
                                            std::uint64_t seed = 42) {
    bc3e::GenerativeSpec spec;
    spec.shape.n_instances = n_instances;
    spec.shape.n_classes = 3;
    spec.shape.n_classifiers = 3;
    spec.shape.n_clusterings = 2;
    spec.shape.clusters_per_clustering = {3, 3};
    spec.true_alpha = {0.7, 0.5, 0.6};
    spec.true_beta = {diag_dominant(3, 3, 0.9, 0), diag_dominant(3, 3, 0.9, 1)};
    spec.classifier_noise = 0.3;
    spec.rng_seed = seed;
    return spec;
}

// Recovery fixture: every class emits its own pair of clusters, so the two
// clusterings are maximally separated (disjoint row supports) and the fit
// has to recover the within-class split probabilities and the alpha
// direction. Diagonally dominant shared-support rows are deliberately not
// used here: the mean-field updates drive those toward degenerate one-hot
// rows, which says nothing about recovery quality.
inline bc3e::GenerativeSpec recovery_spec(std::size_t n_instances,
                                          std::uint64_t seed = 42) {
    bc3e::GenerativeSpec spec;
    spec.shape.n_instances = n_instances;
    spec.shape.n_classes = 3;
    spec.shape.n_classifiers = 3;
    spec.shape.n_clusterings = 2;
    spec.shape.clusters_per_clustering = {6, 6};
    spec.true_alpha = {0.7, 0.5, 0.6};
    bc3e::MatrixD b1(3, 6, 0.0);
    bc3e::MatrixD b2(3, 6, 0.0);
    for (std::size_t i = 0; i < 3; ++i) {
        b1(i, 2 * i) = 0.55;
        b1(i, 2 * i + 1) = 0.45;
        b2(i, i) = 0.6;
        b2(i, i + 3) = 0.4;
    }
    spec.true_beta = {b1, b2};
    spec.classifier_noise = 0.2;
    spec.rng_seed = seed;
    return spec;
}

// Small k = 2 table with fixed labels for hand calculations.
inline bc3e::LabelTable tiny_k2_table() {
    bc3e::LabelTable table;
    table.class_labels = bc3e::MatrixI(3, 2);
    table.cluster_labels = bc3e::MatrixI(3, 1);
    table.instance_ids = {"a", "b", "c"};
    table.class_labels(0, 0) = 0;
    table.class_labels(0, 1) = 0;
    table.class_labels(1, 0) = 0;
    table.class_labels(1, 1) = 1;
    table.class_labels(2, 0) = 1;
    table.class_labels(2, 1) = 1;
    table.cluster_labels(0, 0) = 0;
    table.cluster_labels(1, 0) = 1;
    table.cluster_labels(2, 0) = 1;
    return table;
}

inline bc3e::ProblemShape tiny_k2_shape() {
    return {3, 2, 2, 1, {2}};
}

inline bc3e::ModelParams tiny_k2_params() {
    bc3e::ModelParams params;
    params.alpha = {1.3, 1.7};
    bc3e::MatrixD b(2, 2);
    b(0, 0) = 0.8;
    b(0, 1) = 0.2;
    b(1, 0) = 0.25;
    b(1, 1) = 0.75;
    params.beta = {b};
    return params;
}

}  // namespace fixtures
