#include <doctest.h>

#include <cmath>
#include <vector>

#include "bc3e/estimation.hpp"
#include "bc3e/metrics.hpp"
#include "bc3e/sampler.hpp"
#include "fixtures.hpp"

using namespace bc3e;

TEST_CASE("sampler is deterministic per seed") {
    const auto spec = fixtures::noisy_vote_spec(200, 42);
    const auto a = sample_dataset(spec);
    const auto b = sample_dataset(spec);
    CHECK(a.table.class_labels == b.table.class_labels);
    CHECK(a.table.cluster_labels == b.table.cluster_labels);
    CHECK(a.theta.data() == b.theta.data());
    CHECK(a.true_class == b.true_class);

    auto other = spec;
    other.rng_seed = 43;
    const auto c = sample_dataset(other);
    CHECK(a.table.class_labels.data() != c.table.class_labels.data());
}

TEST_CASE("huge symmetric alpha gives near-uniform label frequencies") {
    GenerativeSpec spec;
    spec.shape = {100000, 4, 1, 0, {}};
    spec.true_alpha.assign(4, 1e6);
    spec.rng_seed = 3;
    const auto sample = sample_dataset(spec);
    const double n_draws = 100000.0;
    const double p = 0.25;
    const double sigma = std::sqrt(p * (1.0 - p) / n_draws);
    std::vector<double> freq(4, 0.0);
    for (std::size_t n = 0; n < 100000; ++n)
        freq[static_cast<std::size_t>(sample.table.class_labels(n, 0))] += 1.0 / n_draws;
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::fabs(freq[i] - p) <= 3.0 * sigma);
}

TEST_CASE("empirical mean of theta matches alpha direction within 3 sigma") {
    GenerativeSpec spec;
    spec.shape = {100000, 3, 1, 0, {}};
    spec.true_alpha = {2.0, 1.0, 0.5};
    spec.rng_seed = 4;
    const auto sample = sample_dataset(spec);
    const double alpha_sum = 3.5;
    for (std::size_t i = 0; i < 3; ++i) {
        const double mean_i = spec.true_alpha[i] / alpha_sum;
        const double var_i = mean_i * (1.0 - mean_i) / (alpha_sum + 1.0);
        const double sigma = std::sqrt(var_i / 100000.0);
        double empirical = 0.0;
        for (std::size_t n = 0; n < 100000; ++n) empirical += sample.theta(n, i) / 100000.0;
        CHECK(std::fabs(empirical - mean_i) <= 3.0 * sigma);
    }
}

TEST_CASE("one-hot emissions with concentrated memberships are deterministic") {
    GenerativeSpec spec;
    spec.shape = {500, 3, 1, 1, {3}};
    spec.true_alpha = {1e7, 1e-7, 1e-7};  // theta is a near point mass on class 1
    MatrixD beta(3, 3, 0.0);
    beta(0, 1) = 1.0;  // class 1 -> cluster 2
    beta(1, 2) = 1.0;
    beta(2, 0) = 1.0;
    spec.true_beta = {beta};
    spec.rng_seed = 5;
    const auto sample = sample_dataset(spec);
    for (std::size_t n = 0; n < 500; ++n) {
        CHECK(sample.true_class[n] == 0);
        CHECK(sample.table.class_labels(n, 0) == 0);
        CHECK(sample.table.cluster_labels(n, 0) == 1);
    }
}

TEST_CASE("classifier noise rate lands in its binomial band") {
    auto spec = fixtures::noisy_vote_spec(50000, 8);
    spec.shape.n_clusterings = 0;
    spec.shape.clusters_per_clustering.clear();
    spec.true_beta.clear();
    auto clean = spec;
    clean.classifier_noise = 0.0;
    const auto noisy = sample_dataset(spec);
    const auto noiseless = sample_dataset(clean);
    // Compare the first classifier column only: up to its noise decision the
    // two runs consume identical random streams, so differences there are
    // pure resamples. A resample moves the label with probability 1 - 1/k.
    double moved = 0.0;
    const double total = 50000.0;
    for (std::size_t n = 0; n < 50000; ++n)
        if (noisy.table.class_labels(n, 0) != noiseless.table.class_labels(n, 0))
            moved += 1.0;
    const double expected = 0.3 * (2.0 / 3.0);
    const double sigma = std::sqrt(expected * (1.0 - expected) / total);
    CHECK(std::fabs(moved / total - expected) <= 4.0 * sigma);
}

TEST_CASE("evaluate_accuracy basics") {
    const std::vector<int> truth{0, 1, 2, 0, 1};
    CHECK(evaluate_accuracy(truth, truth).accuracy == 1.0);
    CHECK_THROWS_AS(evaluate_accuracy(std::vector<int>{0, 1}, truth), ValidationError);

    std::vector<int> predicted(100, 0);
    std::vector<int> target(100, 0);
    for (int i = 0; i < 25; ++i) target[static_cast<std::size_t>(i)] = 1;
    CHECK(evaluate_accuracy(predicted, target).accuracy == 0.75);
}

TEST_CASE("round-trip recovery of generative parameters") {
    const auto spec = fixtures::recovery_spec(2000, 7);
    const auto sample = sample_dataset(spec);
    bc3e::FitConfig cfg;
    const auto fitted = bc3e::fit(sample.table, spec.shape, cfg);
    for (std::size_t m = 0; m < 2; ++m)
        for (std::size_t i = 0; i < 3; ++i) {
            double tv = 0.0;
            for (std::size_t j = 0; j < 6; ++j)
                tv += std::fabs(fitted.params.beta[m](i, j) - spec.true_beta[m](i, j));
            CHECK(0.5 * tv <= 0.05);
        }
    double fitted_sum = 0.0;
    double true_sum = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        fitted_sum += fitted.params.alpha[i];
        true_sum += spec.true_alpha[i];
    }
    double l1 = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
        l1 += std::fabs(fitted.params.alpha[i] / fitted_sum -
                        spec.true_alpha[i] / true_sum);
    CHECK(l1 <= 0.1);
}

TEST_CASE("majority vote breaks ties toward the lowest class index") {
    MatrixI labels(2, 2);
    labels(0, 0) = 0;
    labels(0, 1) = 1;  // tie between class 1 and class 2
    labels(1, 0) = 2;
    labels(1, 1) = 1;  // tie between class 2 and class 3
    const auto vote = majority_vote(labels, 3);
    CHECK(vote[0] == 0);
    CHECK(vote[1] == 1);
}

TEST_CASE("component accuracies and best component") {
    MatrixI labels(4, 2);
    // column 1 matches truth 3/4 times, column 2 matches 1/4
    const std::vector<int> truth{0, 1, 0, 1};
    labels(0, 0) = 0;
    labels(1, 0) = 1;
    labels(2, 0) = 0;
    labels(3, 0) = 0;
    labels(0, 1) = 1;
    labels(1, 1) = 0;
    labels(2, 1) = 1;
    labels(3, 1) = 1;
    const std::vector<int> predicted{0, 1, 1, 1};
    const auto report = evaluate_accuracy(predicted, truth, &labels, 2);
    CHECK(report.accuracy == 0.75);
    CHECK(report.component_accuracy[0] == 0.75);
    CHECK(report.component_accuracy[1] == 0.25);
    CHECK(report.best_component == 0.75);
}
