#pragma once

// Domain types. Labels are 1-based in files and on user-facing surfaces;
// everything in memory is 0-based, converted once at the ingestion boundary.

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "bc3e/errors.hpp"
#include "bc3e/matrix.hpp"

namespace bc3e {

struct ProblemShape {
    std::size_t n_instances = 0;            // N
    std::size_t n_classes = 0;              // k
    std::size_t n_classifiers = 0;          // r1
    std::size_t n_clusterings = 0;          // r2
    std::vector<std::size_t> clusters_per_clustering;  // k^(m), length r2

    void validate() const {
        if (n_instances < 1) throw ValidationError("shape: N must be >= 1");
        if (n_classes < 2) throw ValidationError("shape: k must be >= 2");
        if (n_classifiers + n_clusterings < 1)
            throw ValidationError("shape: r1 + r2 must be >= 1");
        if (clusters_per_clustering.size() != n_clusterings)
            throw ValidationError("shape: clusters_per_clustering must have length r2");
        for (std::size_t m = 0; m < n_clusterings; ++m)
            if (clusters_per_clustering[m] < 1)
                throw ValidationError("shape: every clustering needs >= 1 cluster");
    }
};

// Observed labels for the target set: N x r1 class labels and N x r2
// cluster labels, all 0-based in memory.
struct LabelTable {
    MatrixI class_labels;    // N x r1, entries in [0, k)
    MatrixI cluster_labels;  // N x r2, entries in [0, k^(m))
    std::vector<std::string> instance_ids;

    std::size_t n_instances() const {
        return instance_ids.empty()
                   ? std::max(class_labels.rows(), cluster_labels.rows())
                   : instance_ids.size();
    }
};

struct LabelViolation {
    enum class Kind { ClassLabel, ClusterLabel, Shape };
    Kind kind = Kind::Shape;
    std::size_t row = 0;     // instance index
    std::size_t column = 0;  // classifier index l or clustering index m
    long long value = 0;     // offending 1-based label as it appeared
    std::string message;
};

struct ValidationReport {
    std::vector<LabelViolation> violations;
    bool ok() const { return violations.empty(); }

    std::string to_string() const {
        std::ostringstream os;
        for (const auto& v : violations) os << v.message << "\n";
        return os.str();
    }
};

// Checks every index-range invariant; collects all violations instead of
// stopping at the first one so a corrupt file is reported in one pass.
inline ValidationReport validate_table(const LabelTable& table, const ProblemShape& shape) {
    ValidationReport report;
    auto shape_violation = [&](const std::string& msg) {
        report.violations.push_back({LabelViolation::Kind::Shape, 0, 0, 0, msg});
    };
    if (table.class_labels.rows() != shape.n_instances && shape.n_classifiers > 0)
        shape_violation("class label rows != N");
    if (table.class_labels.cols() != shape.n_classifiers)
        shape_violation("class label columns != r1");
    if (table.cluster_labels.rows() != shape.n_instances && shape.n_clusterings > 0)
        shape_violation("cluster label rows != N");
    if (table.cluster_labels.cols() != shape.n_clusterings)
        shape_violation("cluster label columns != r2");
    if (!table.instance_ids.empty() && table.instance_ids.size() != shape.n_instances)
        shape_violation("instance id count != N");
    if (!report.ok()) return report;

    for (std::size_t n = 0; n < table.class_labels.rows(); ++n) {
        for (std::size_t l = 0; l < table.class_labels.cols(); ++l) {
            const int label = table.class_labels(n, l);
            if (label < 0 || static_cast<std::size_t>(label) >= shape.n_classes) {
                std::ostringstream os;
                os << "class label out of range at (row " << n << ", classifier " << l
                   << "): value " << label + 1 << " not in [1, " << shape.n_classes << "]";
                report.violations.push_back({LabelViolation::Kind::ClassLabel, n, l,
                                             label + 1, os.str()});
            }
        }
    }
    for (std::size_t n = 0; n < table.cluster_labels.rows(); ++n) {
        for (std::size_t m = 0; m < table.cluster_labels.cols(); ++m) {
            const int label = table.cluster_labels(n, m);
            const auto limit = shape.clusters_per_clustering[m];
            if (label < 0 || static_cast<std::size_t>(label) >= limit) {
                std::ostringstream os;
                os << "cluster label out of range at (row " << n << ", clustering " << m
                   << "): value " << label + 1 << " not in [1, " << limit << "]";
                report.violations.push_back({LabelViolation::Kind::ClusterLabel, n, m,
                                             label + 1, os.str()});
            }
        }
    }
    return report;
}

// Global parameters: Dirichlet concentration alpha and, per clustering m,
// a k x k^(m) row-stochastic emission matrix beta_m.
struct ModelParams {
    std::vector<double> alpha;   // length k, all > 0
    std::vector<MatrixD> beta;   // r2 matrices, k x k^(m)

    std::size_t n_classes() const { return alpha.size(); }

    void validate(double row_sum_tol = 1e-12) const {
        for (double a : alpha)
            if (!(a > 0.0)) throw ValidationError("params: alpha entries must be > 0");
        for (std::size_t m = 0; m < beta.size(); ++m) {
            const auto& b = beta[m];
            if (b.rows() != alpha.size())
                throw ValidationError("params: beta_m must have k rows");
            for (std::size_t i = 0; i < b.rows(); ++i) {
                double sum = 0.0;
                for (std::size_t j = 0; j < b.cols(); ++j) {
                    if (!(b(i, j) > 0.0))
                        throw ValidationError("params: beta entries must be > 0 (smoothed)");
                    sum += b(i, j);
                }
                if (std::fabs(sum - 1.0) > row_sum_tol)
                    throw ValidationError("params: beta row does not sum to 1");
            }
        }
    }
};

// Per-instance variational parameters: gamma (Dirichlet) and, per
// clustering, a class-membership vector phi.
struct VariationalState {
    MatrixD gamma;              // N x k
    std::vector<MatrixD> phi;   // r2 matrices, N x k

    std::size_t n_instances() const { return gamma.rows(); }
};

// Indicator expansion helpers (labels <-> one-hot rows).
inline std::vector<double> expand_indicator(int label, std::size_t size) {
    std::vector<double> row(size, 0.0);
    row[static_cast<std::size_t>(label)] = 1.0;
    return row;
}

inline int collapse_indicator(const std::vector<double>& row) {
    for (std::size_t i = 0; i < row.size(); ++i)
        if (row[i] == 1.0) return static_cast<int>(i);
    throw ValidationError("collapse_indicator: not a one-hot row");
}

}  // namespace bc3e
