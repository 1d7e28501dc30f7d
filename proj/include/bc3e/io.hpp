#pragma once

// File formats.
//   labels:     CSV, header id,c1..c{r1},g1..g{r2}, labels 1-based
//   posteriors: CSV, header id,p1..p{k},predicted, predicted 1-based
//   truth:      CSV, header id,t1..t{k},true_class
//   config:     flat "key = value" lines, '#' comments, BC3E_* env overrides
// Floats are written with 17 significant digits so write-then-read
// reproduces in-memory values exactly.

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bc3e/errors.hpp"
#include "bc3e/estimation.hpp"
#include "bc3e/matrix.hpp"
#include "bc3e/metrics.hpp"
#include "bc3e/sampler.hpp"
#include "bc3e/types.hpp"

namespace bc3e {

inline std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

namespace io_detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(field);
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    fields.push_back(field);
    return fields;
}

inline long parse_int_field(const std::string& field, const std::string& path,
                            std::size_t line_no, std::size_t col) {
    char* end = nullptr;
    const long v = std::strtol(field.c_str(), &end, 10);
    if (end == field.c_str() || *end != '\0') {
        std::ostringstream os;
        os << path << ":" << line_no << ": column " << col + 1
           << ": expected an integer, got \"" << field << "\"";
        throw ValidationError(os.str());
    }
    return v;
}

inline double parse_double_field(const std::string& field, const std::string& path,
                                 std::size_t line_no, std::size_t col) {
    char* end = nullptr;
    const double v = std::strtod(field.c_str(), &end);
    if (end == field.c_str() || *end != '\0') {
        std::ostringstream os;
        os << path << ":" << line_no << ": column " << col + 1
           << ": expected a number, got \"" << field << "\"";
        throw ValidationError(os.str());
    }
    return v;
}

}  // namespace io_detail

// -- label tables ---------------------------------------------------------------

// Returns the table with 0-based labels; r1/r2 come from the header.
inline LabelTable read_label_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open labels file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError(path + ": empty file");
    const auto header = io_detail::split_csv_line(line);
    if (header.empty() || header[0] != "id")
        throw ValidationError(path + ":1: header must start with \"id\"");
    std::size_t r1 = 0;
    std::size_t col = 1;
    while (col < header.size() && header[col] == "c" + std::to_string(r1 + 1)) {
        ++r1;
        ++col;
    }
    std::size_t r2 = 0;
    while (col < header.size() && header[col] == "g" + std::to_string(r2 + 1)) {
        ++r2;
        ++col;
    }
    if (col != header.size())
        throw ValidationError(path + ":1: unexpected header column \"" + header[col] + "\"");

    std::vector<std::string> ids;
    std::vector<int> class_flat;
    std::vector<int> cluster_flat;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = io_detail::split_csv_line(line);
        if (fields.size() != 1 + r1 + r2) {
            std::ostringstream os;
            os << path << ":" << line_no << ": expected " << 1 + r1 + r2
               << " fields, got " << fields.size();
            throw ValidationError(os.str());
        }
        ids.push_back(fields[0]);
        for (std::size_t l = 0; l < r1; ++l)
            class_flat.push_back(static_cast<int>(
                io_detail::parse_int_field(fields[1 + l], path, line_no, 1 + l) - 1));
        for (std::size_t m = 0; m < r2; ++m)
            cluster_flat.push_back(static_cast<int>(
                io_detail::parse_int_field(fields[1 + r1 + m], path, line_no, 1 + r1 + m) - 1));
    }
    if (ids.empty()) throw ValidationError(path + ": no data rows");

    LabelTable table;
    table.instance_ids = std::move(ids);
    table.class_labels = MatrixI(table.instance_ids.size(), r1);
    table.cluster_labels = MatrixI(table.instance_ids.size(), r2);
    for (std::size_t n = 0; n < table.instance_ids.size(); ++n) {
        for (std::size_t l = 0; l < r1; ++l)
            table.class_labels(n, l) = class_flat[n * r1 + l];
        for (std::size_t m = 0; m < r2; ++m)
            table.cluster_labels(n, m) = cluster_flat[n * r2 + m];
    }
    return table;
}

inline void write_label_table(const std::string& path, const LabelTable& table) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write labels file: " + path);
    out << "id";
    for (std::size_t l = 0; l < table.class_labels.cols(); ++l) out << ",c" << l + 1;
    for (std::size_t m = 0; m < table.cluster_labels.cols(); ++m) out << ",g" << m + 1;
    out << "\n";
    for (std::size_t n = 0; n < table.n_instances(); ++n) {
        out << table.instance_ids[n];
        for (std::size_t l = 0; l < table.class_labels.cols(); ++l)
            out << "," << table.class_labels(n, l) + 1;
        for (std::size_t m = 0; m < table.cluster_labels.cols(); ++m)
            out << "," << table.cluster_labels(n, m) + 1;
        out << "\n";
    }
}

// -- posteriors -------------------------------------------------------------------

inline void write_posteriors(const std::string& path, const std::vector<std::string>& ids,
                             const MatrixD& posteriors, const std::vector<int>& predicted) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write posterior file: " + path);
    out << "id";
    for (std::size_t i = 0; i < posteriors.cols(); ++i) out << ",p" << i + 1;
    out << ",predicted\n";
    for (std::size_t n = 0; n < posteriors.rows(); ++n) {
        out << ids[n];
        for (std::size_t i = 0; i < posteriors.cols(); ++i)
            out << "," << format_double(posteriors(n, i));
        out << "," << predicted[n] + 1 << "\n";
    }
}

struct PosteriorFile {
    std::vector<std::string> ids;
    MatrixD posteriors;
    std::vector<int> predicted;  // 0-based
};

inline PosteriorFile read_posteriors(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open posterior file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError(path + ": empty file");
    const auto header = io_detail::split_csv_line(line);
    if (header.size() < 3 || header.front() != "id" || header.back() != "predicted")
        throw ValidationError(path + ":1: bad posterior header");
    const std::size_t k = header.size() - 2;
    PosteriorFile out;
    std::vector<double> flat;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = io_detail::split_csv_line(line);
        if (fields.size() != k + 2)
            throw ValidationError(path + ":" + std::to_string(line_no) + ": bad field count");
        out.ids.push_back(fields[0]);
        for (std::size_t i = 0; i < k; ++i)
            flat.push_back(io_detail::parse_double_field(fields[1 + i], path, line_no, 1 + i));
        out.predicted.push_back(static_cast<int>(
            io_detail::parse_int_field(fields[k + 1], path, line_no, k + 1) - 1));
    }
    out.posteriors = MatrixD(out.ids.size(), k);
    for (std::size_t n = 0; n < out.ids.size(); ++n)
        for (std::size_t i = 0; i < k; ++i) out.posteriors(n, i) = flat[n * k + i];
    return out;
}

// -- ground truth -------------------------------------------------------------------

inline void write_truth(const std::string& path, const std::vector<std::string>& ids,
                        const MatrixD& theta, const std::vector<int>& true_class) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write truth file: " + path);
    out << "id";
    for (std::size_t i = 0; i < theta.cols(); ++i) out << ",t" << i + 1;
    out << ",true_class\n";
    for (std::size_t n = 0; n < theta.rows(); ++n) {
        out << ids[n];
        for (std::size_t i = 0; i < theta.cols(); ++i) out << "," << format_double(theta(n, i));
        out << "," << true_class[n] + 1 << "\n";
    }
}

struct TruthFile {
    std::vector<std::string> ids;
    MatrixD theta;
    std::vector<int> true_class;  // 0-based
};

inline TruthFile read_truth(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open truth file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError(path + ": empty file");
    const auto header = io_detail::split_csv_line(line);
    if (header.size() < 3 || header.front() != "id" || header.back() != "true_class")
        throw ValidationError(path + ":1: bad truth header");
    const std::size_t k = header.size() - 2;
    TruthFile out;
    std::vector<double> flat;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = io_detail::split_csv_line(line);
        if (fields.size() != k + 2)
            throw ValidationError(path + ":" + std::to_string(line_no) + ": bad field count");
        out.ids.push_back(fields[0]);
        for (std::size_t i = 0; i < k; ++i)
            flat.push_back(io_detail::parse_double_field(fields[1 + i], path, line_no, 1 + i));
        out.true_class.push_back(static_cast<int>(
            io_detail::parse_int_field(fields[k + 1], path, line_no, k + 1) - 1));
    }
    out.theta = MatrixD(out.ids.size(), k);
    for (std::size_t n = 0; n < out.ids.size(); ++n)
        for (std::size_t i = 0; i < k; ++i) out.theta(n, i) = flat[n * k + i];
    return out;
}

// -- flat key-value config ------------------------------------------------------------

class KeyValueConfig {
public:
    KeyValueConfig() = default;

    static KeyValueConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ValidationError("cannot open config file: " + path);
        KeyValueConfig cfg;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                if (line.find_first_not_of(" \t\r") != std::string::npos)
                    throw ValidationError(path + ":" + std::to_string(line_no) +
                                          ": expected key = value");
                continue;
            }
            cfg.values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
        }
        return cfg;
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    bool has(const std::string& key) const { return lookup(key).has_value(); }

    std::string get_string(const std::string& key, const std::string& fallback = "") const {
        const auto v = lookup(key);
        return v.has_value() ? *v : fallback;
    }

    double get_double(const std::string& key, double fallback) const {
        const auto v = lookup(key);
        if (!v.has_value()) return fallback;
        char* end = nullptr;
        const double parsed = std::strtod(v->c_str(), &end);
        if (end == v->c_str() || *end != '\0')
            throw ValidationError("config key " + key + ": expected a number, got " + *v);
        return parsed;
    }

    long long get_int(const std::string& key, long long fallback) const {
        const auto v = lookup(key);
        if (!v.has_value()) return fallback;
        char* end = nullptr;
        const long long parsed = std::strtoll(v->c_str(), &end, 10);
        if (end == v->c_str() || *end != '\0')
            throw ValidationError("config key " + key + ": expected an integer, got " + *v);
        return parsed;
    }

    bool get_bool(const std::string& key, bool fallback) const {
        const auto v = lookup(key);
        if (!v.has_value()) return fallback;
        if (*v == "true" || *v == "1") return true;
        if (*v == "false" || *v == "0") return false;
        throw ValidationError("config key " + key + ": expected true/false, got " + *v);
    }

    std::vector<std::string> get_list(const std::string& key) const {
        const auto v = lookup(key);
        std::vector<std::string> out;
        if (!v.has_value()) return out;
        std::string item;
        for (char c : *v) {
            if (c == ',') {
                out.push_back(trim(item));
                item.clear();
            } else {
                item += c;
            }
        }
        if (!trim(item).empty() || !out.empty()) out.push_back(trim(item));
        return out;
    }

private:
    // Environment overrides win: key a.b-c becomes BC3E_A_B_C.
    std::optional<std::string> lookup(const std::string& key) const {
        std::string env_name = "BC3E_";
        for (char c : key)
            env_name += std::isalnum(static_cast<unsigned char>(c))
                            ? static_cast<char>(std::toupper(static_cast<unsigned char>(c)))
                            : '_';
        if (const char* env = std::getenv(env_name.c_str())) return std::string(env);
        const auto it = values_.find(key);
        if (it == values_.end()) return std::nullopt;
        return it->second;
    }

    static std::string trim(const std::string& s) {
        const auto begin = s.find_first_not_of(" \t\r");
        if (begin == std::string::npos) return "";
        const auto end = s.find_last_not_of(" \t\r");
        return s.substr(begin, end - begin + 1);
    }

    std::map<std::string, std::string> values_;
};

// -- config -> domain objects -----------------------------------------------------------

inline ProblemShape shape_from_config(const KeyValueConfig& cfg, std::size_t n_instances,
                                      std::size_t n_classifiers) {
    ProblemShape shape;
    shape.n_instances = n_instances;
    shape.n_classes = static_cast<std::size_t>(cfg.get_int("n_classes", 0));
    shape.n_classifiers = n_classifiers;
    for (const auto& item : cfg.get_list("clusters_per_clustering")) {
        char* end = nullptr;
        const long v = std::strtol(item.c_str(), &end, 10);
        if (end == item.c_str() || *end != '\0' || v < 1)
            throw ValidationError("config: bad clusters_per_clustering entry: " + item);
        shape.clusters_per_clustering.push_back(static_cast<std::size_t>(v));
    }
    shape.n_clusterings = shape.clusters_per_clustering.size();
    if (cfg.has("n_classifiers") &&
        static_cast<std::size_t>(cfg.get_int("n_classifiers", 0)) != n_classifiers)
        throw ValidationError("config: n_classifiers disagrees with the labels file header");
    if (cfg.has("n_instances") &&
        static_cast<std::size_t>(cfg.get_int("n_instances", 0)) != n_instances)
        throw ValidationError("config: n_instances disagrees with the labels file");
    return shape;
}

inline FitConfig fit_config_from(const KeyValueConfig& cfg) {
    FitConfig fit;
    fit.outer_tol = cfg.get_double("outer_tol", fit.outer_tol);
    fit.max_outer_iters = static_cast<int>(cfg.get_int("max_outer_iters", fit.max_outer_iters));
    fit.eps_beta = cfg.get_double("eps_beta", fit.eps_beta);
    fit.alpha_floor = cfg.get_double("alpha_floor", fit.alpha_floor);
    fit.newton_tol = cfg.get_double("newton_tol", fit.newton_tol);
    fit.newton_max_iters =
        static_cast<int>(cfg.get_int("newton_max_iters", fit.newton_max_iters));
    fit.rng_seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
    fit.freeze_alpha = cfg.get_bool("freeze_alpha", false);
    fit.workers = static_cast<int>(cfg.get_int("workers", 1));
    fit.estep.inner_tol = cfg.get_double("inner_tol", fit.estep.inner_tol);
    fit.estep.max_inner_iters =
        static_cast<int>(cfg.get_int("max_inner_iters", fit.estep.max_inner_iters));
    fit.estep.elbo_slack = cfg.get_double("elbo_slack", fit.estep.elbo_slack);
    return fit;
}

inline GenerativeSpec generative_spec_from(const KeyValueConfig& cfg) {
    GenerativeSpec spec;
    spec.shape.n_instances = static_cast<std::size_t>(cfg.get_int("n_instances", 0));
    spec.shape.n_classes = static_cast<std::size_t>(cfg.get_int("n_classes", 0));
    spec.shape.n_classifiers = static_cast<std::size_t>(cfg.get_int("n_classifiers", 0));
    for (const auto& item : cfg.get_list("clusters_per_clustering")) {
        char* end = nullptr;
        const long v = std::strtol(item.c_str(), &end, 10);
        if (end == item.c_str() || *end != '\0' || v < 1)
            throw ValidationError("spec: bad clusters_per_clustering entry: " + item);
        spec.shape.clusters_per_clustering.push_back(static_cast<std::size_t>(v));
    }
    spec.shape.n_clusterings = spec.shape.clusters_per_clustering.size();
    for (const auto& item : cfg.get_list("true_alpha")) {
        char* end = nullptr;
        spec.true_alpha.push_back(std::strtod(item.c_str(), &end));
        if (end == item.c_str() || *end != '\0')
            throw ValidationError("spec: bad true_alpha entry: " + item);
    }
    for (std::size_t m = 0; m < spec.shape.n_clusterings; ++m) {
        MatrixD b(spec.shape.n_classes, spec.shape.clusters_per_clustering[m]);
        for (std::size_t i = 0; i < spec.shape.n_classes; ++i) {
            const std::string key =
                "beta." + std::to_string(m + 1) + "." + std::to_string(i + 1);
            const auto row = cfg.get_list(key);
            if (row.size() != b.cols())
                throw ValidationError("spec: key " + key + " must list " +
                                      std::to_string(b.cols()) + " probabilities");
            for (std::size_t j = 0; j < b.cols(); ++j) {
                char* end = nullptr;
                b(i, j) = std::strtod(row[j].c_str(), &end);
                if (end == row[j].c_str() || *end != '\0')
                    throw ValidationError("spec: bad probability in " + key);
            }
        }
        spec.true_beta.push_back(std::move(b));
    }
    spec.classifier_noise = cfg.get_double("classifier_noise", 0.0);
    spec.rng_seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
    return spec;
}

// -- reports -----------------------------------------------------------------------------

inline void write_fit_report(const std::string& path, const FitReport& report) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write report file: " + path);
    out << "converged = " << (report.converged ? "true" : "false") << "\n";
    out << "outer_iterations = " << report.outer_iterations << "\n";
    out << "estep_all_converged = " << (report.estep_all_converged ? "true" : "false") << "\n";
    out << "newton_all_converged = " << (report.newton_all_converged ? "true" : "false")
        << "\n";
    out << "alpha = ";
    for (std::size_t i = 0; i < report.params.alpha.size(); ++i)
        out << (i ? "," : "") << format_double(report.params.alpha[i]);
    out << "\n";
    for (std::size_t m = 0; m < report.params.beta.size(); ++m) {
        const auto& b = report.params.beta[m];
        for (std::size_t i = 0; i < b.rows(); ++i) {
            out << "beta." << m + 1 << "." << i + 1 << " = ";
            for (std::size_t j = 0; j < b.cols(); ++j)
                out << (j ? "," : "") << format_double(b(i, j));
            out << "\n";
        }
    }
    for (std::size_t t = 0; t < report.elbo_trace.size(); ++t)
        out << "elbo." << t + 1 << " = " << format_double(report.elbo_trace[t]) << "\n";
}

inline void write_metrics_report(std::ostream& out, const AccuracyReport& report) {
    out << "accuracy = " << format_double(report.accuracy) << "\n";
    if (report.has_components) {
        out << "majority_vote_accuracy = " << format_double(report.majority_vote_accuracy)
            << "\n";
        out << "best_component = " << format_double(report.best_component) << "\n";
        for (std::size_t l = 0; l < report.component_accuracy.size(); ++l)
            out << "component." << l + 1 << " = "
                << format_double(report.component_accuracy[l]) << "\n";
    }
}

}  // namespace bc3e
