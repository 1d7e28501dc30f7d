#pragma once

// Accuracy bookkeeping: model accuracy against ground truth, plus the
// accuracy of every base classifier column and of their majority vote so a
// run can be judged against its best component.

#include <cstddef>
#include <span>
#include <vector>

#include "bc3e/errors.hpp"
#include "bc3e/matrix.hpp"

namespace bc3e {

struct AccuracyReport {
    double accuracy = 0.0;                      // predicted vs truth
    std::vector<double> component_accuracy;     // one per classifier column
    double best_component = 0.0;
    double majority_vote_accuracy = 0.0;        // lowest index wins ties
    bool has_components = false;
};

inline double fraction_equal(std::span<const int> a, std::span<const int> b) {
    if (a.size() != b.size())
        throw ValidationError("evaluate_accuracy: length mismatch");
    if (a.empty()) throw ValidationError("evaluate_accuracy: empty input");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] == b[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(a.size());
}

inline std::vector<int> majority_vote(const MatrixI& class_labels, std::size_t n_classes) {
    std::vector<int> vote(class_labels.rows());
    std::vector<int> tally(n_classes);
    for (std::size_t n = 0; n < class_labels.rows(); ++n) {
        std::fill(tally.begin(), tally.end(), 0);
        for (std::size_t l = 0; l < class_labels.cols(); ++l)
            ++tally[static_cast<std::size_t>(class_labels(n, l))];
        std::size_t best = 0;
        for (std::size_t i = 1; i < n_classes; ++i)
            if (tally[i] > tally[best]) best = i;
        vote[n] = static_cast<int>(best);
    }
    return vote;
}

inline AccuracyReport evaluate_accuracy(std::span<const int> predicted,
                                        std::span<const int> truth,
                                        const MatrixI* class_labels = nullptr,
                                        std::size_t n_classes = 0) {
    AccuracyReport report;
    report.accuracy = fraction_equal(predicted, truth);
    if (class_labels != nullptr && class_labels->cols() > 0) {
        if (class_labels->rows() != truth.size())
            throw ValidationError("evaluate_accuracy: label table length mismatch");
        report.has_components = true;
        for (std::size_t l = 0; l < class_labels->cols(); ++l) {
            std::size_t hits = 0;
            for (std::size_t n = 0; n < class_labels->rows(); ++n)
                if ((*class_labels)(n, l) == truth[n]) ++hits;
            report.component_accuracy.push_back(static_cast<double>(hits) /
                                                static_cast<double>(truth.size()));
        }
        report.best_component = *std::max_element(report.component_accuracy.begin(),
                                                  report.component_accuracy.end());
        const std::vector<int> vote = majority_vote(*class_labels, n_classes);
        report.majority_vote_accuracy = fraction_equal(vote, truth);
    }
    return report;
}

}  // namespace bc3e
