#pragma once

// Row-distributed execution. Sites hold disjoint instance subsets and run
// E-steps locally; the aggregator only ever receives SuffStats aggregates,
// runs the M-step, and broadcasts the next parameters. Rounds are
// synchronous: a round's statistics are applied only to that round's
// parameters, stale messages are dropped and resynced, and a per-round
// deadline aborts the session with a resumable checkpoint.
//
// Because sites and the centralized driver share the same E-step and the
// same exact accumulators, a distributed run produces bit-identical
// parameters and ELBO trace for any number of sites.

#include <chrono>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bc3e/errors.hpp"
#include "bc3e/estimation.hpp"
#include "bc3e/transcript.hpp"
#include "bc3e/transport.hpp"
#include "bc3e/wire.hpp"

namespace bc3e {

struct StaleRound : Error {
    explicit StaleRound(const std::string& what) : Error(what) {}
};
struct MissingSite : Error {
    explicit MissingSite(const std::string& what) : Error(what) {}
};
struct DuplicateSite : Error {
    explicit DuplicateSite(const std::string& what) : Error(what) {}
};

// -- site assignment ----------------------------------------------------------

struct SiteAssignment {
    int n_sites = 1;
    std::vector<int> site_of_instance;  // length N
    bool contiguous = false;

    void validate() const {
        if (n_sites < 1) throw ValidationError("assignment: need at least one site");
        std::vector<std::size_t> per_site(static_cast<std::size_t>(n_sites), 0);
        for (int s : site_of_instance) {
            if (s < 0 || s >= n_sites)
                throw ValidationError("assignment: site index out of range");
            ++per_site[static_cast<std::size_t>(s)];
        }
        for (std::size_t d = 0; d < per_site.size(); ++d)
            if (per_site[d] == 0)
                throw ValidationError("assignment: site " + std::to_string(d) + " is empty");
    }
};

inline SiteAssignment contiguous_assignment(std::size_t n_instances, int n_sites) {
    SiteAssignment out;
    out.n_sites = n_sites;
    out.contiguous = true;
    out.site_of_instance.resize(n_instances);
    for (std::size_t n = 0; n < n_instances; ++n)
        out.site_of_instance[n] =
            static_cast<int>(n * static_cast<std::size_t>(n_sites) / n_instances);
    return out;
}

// Shards keep ascending instance order, so per-site sweeps follow the
// canonical order contract.
inline std::vector<LabelTable> split_table(const LabelTable& table,
                                           const SiteAssignment& assignment) {
    assignment.validate();
    const std::size_t r1 = table.class_labels.cols();
    const std::size_t r2 = table.cluster_labels.cols();
    std::vector<std::vector<std::size_t>> rows_of(static_cast<std::size_t>(assignment.n_sites));
    for (std::size_t n = 0; n < assignment.site_of_instance.size(); ++n)
        rows_of[static_cast<std::size_t>(assignment.site_of_instance[n])].push_back(n);
    std::vector<LabelTable> shards;
    shards.reserve(rows_of.size());
    for (const auto& rows : rows_of) {
        LabelTable shard;
        shard.class_labels = MatrixI(rows.size(), r1);
        shard.cluster_labels = MatrixI(rows.size(), r2);
        shard.instance_ids.reserve(rows.size());
        for (std::size_t out_row = 0; out_row < rows.size(); ++out_row) {
            const std::size_t in_row = rows[out_row];
            for (std::size_t l = 0; l < r1; ++l)
                shard.class_labels(out_row, l) = table.class_labels(in_row, l);
            for (std::size_t m = 0; m < r2; ++m)
                shard.cluster_labels(out_row, m) = table.cluster_labels(in_row, m);
            shard.instance_ids.push_back(table.instance_ids.empty()
                                             ? std::to_string(in_row)
                                             : table.instance_ids[in_row]);
        }
        shards.push_back(std::move(shard));
    }
    return shards;
}

// -- checkpoints --------------------------------------------------------------

struct Checkpoint {
    std::uint64_t round = 1;
    ModelParams params;
    std::vector<double> elbo_trace;
    std::vector<int> acked_sites;  // partials received in the aborted round
};

inline std::string format_exact_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    nlohmann::json doc;
    doc["round"] = ck.round;
    nlohmann::json alpha = nlohmann::json::array();
    for (double a : ck.params.alpha) alpha.push_back(format_exact_double(a));
    doc["alpha"] = alpha;
    nlohmann::json beta = nlohmann::json::array();
    for (const auto& b : ck.params.beta) {
        nlohmann::json matrix = nlohmann::json::array();
        for (std::size_t i = 0; i < b.rows(); ++i) {
            nlohmann::json row = nlohmann::json::array();
            for (std::size_t j = 0; j < b.cols(); ++j) row.push_back(format_exact_double(b(i, j)));
            matrix.push_back(row);
        }
        beta.push_back(matrix);
    }
    doc["beta"] = beta;
    nlohmann::json trace = nlohmann::json::array();
    for (double v : ck.elbo_trace) trace.push_back(format_exact_double(v));
    doc["elbo_trace"] = trace;
    doc["acked_sites"] = ck.acked_sites;
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write checkpoint: " + path);
    out << doc.dump(2) << "\n";
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read checkpoint: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("checkpoint parse error: ") + e.what());
    }
    Checkpoint ck;
    ck.round = doc.at("round").get<std::uint64_t>();
    for (const auto& a : doc.at("alpha"))
        ck.params.alpha.push_back(std::strtod(a.get<std::string>().c_str(), nullptr));
    for (const auto& matrix_json : doc.at("beta")) {
        const std::size_t rows = matrix_json.size();
        const std::size_t cols = rows ? matrix_json[0].size() : 0;
        MatrixD m(rows, cols);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j)
                m(i, j) = std::strtod(matrix_json[i][j].get<std::string>().c_str(), nullptr);
        ck.params.beta.push_back(std::move(m));
    }
    for (const auto& v : doc.at("elbo_trace"))
        ck.elbo_trace.push_back(std::strtod(v.get<std::string>().c_str(), nullptr));
    if (doc.contains("acked_sites"))
        ck.acked_sites = doc["acked_sites"].get<std::vector<int>>();
    return ck;
}

// -- aggregator core (transport-free) ------------------------------------------

class Coordinator {
public:
    Coordinator(ProblemShape shape, FitConfig cfg, std::set<int> expected_sites)
        : shape_(std::move(shape)),
          cfg_(cfg),
          expected_sites_(std::move(expected_sites)),
          params_(init_params(shape_, cfg_)) {}

    Coordinator(ProblemShape shape, FitConfig cfg, std::set<int> expected_sites,
                const Checkpoint& resume)
        : shape_(std::move(shape)),
          cfg_(cfg),
          expected_sites_(std::move(expected_sites)),
          params_(resume.params),
          round_(resume.round),
          trace_(resume.elbo_trace) {}

    std::uint64_t round() const { return round_; }
    const ModelParams& params() const { return params_; }
    const std::vector<double>& trace() const { return trace_; }

    ParamsBroadcast make_broadcast() const {
        return {round_, params_.alpha, params_.beta, cfg_.eps_beta, cfg_.freeze_alpha};
    }

    struct Outcome {
        bool terminated = false;
        bool converged = false;
    };

    // Validates one partial per expected site at the current round, merges
    // them in ascending site order, and either advances the parameters or
    // decides termination.
    Outcome aggregate_and_m_step(std::vector<PartialStatsMsg> partials) {
        std::set<int> seen;
        for (const auto& p : partials) {
            if (p.round != round_)
                throw StaleRound("partial for round " + std::to_string(p.round) +
                                 " during round " + std::to_string(round_));
            if (!expected_sites_.contains(p.site_id))
                throw ProtocolViolation("partial from unknown site " +
                                        std::to_string(p.site_id));
            if (!seen.insert(p.site_id).second)
                throw DuplicateSite("duplicate partial from site " +
                                    std::to_string(p.site_id));
            bool shape_ok = p.stats.gamma_stats.size() == shape_.n_classes &&
                            p.stats.beta_numerators.size() == shape_.n_clusterings;
            for (std::size_t m = 0; shape_ok && m < p.stats.beta_numerators.size(); ++m)
                shape_ok = p.stats.beta_numerators[m].rows() == shape_.n_classes &&
                           p.stats.beta_numerators[m].cols() ==
                               shape_.clusters_per_clustering[m];
            if (!shape_ok)
                throw ProtocolViolation("partial from site " + std::to_string(p.site_id) +
                                        " has the wrong shape");
        }
        for (int site : expected_sites_)
            if (!seen.contains(site))
                throw MissingSite("no partial from site " + std::to_string(site));

        std::sort(partials.begin(), partials.end(),
                  [](const auto& a, const auto& b) { return a.site_id < b.site_id; });
        SuffStats merged = SuffStats::zero(shape_.n_classes, shape_.clusters_per_clustering);
        for (const auto& p : partials) merged.merge(p.stats);

        const double elbo = assemble_elbo(merged, params_);
        trace_.push_back(elbo);
        Outcome outcome;
        if (trace_.size() > 1 &&
            elbo_converged(trace_[trace_.size() - 2], elbo, cfg_.outer_tol)) {
            outcome.terminated = true;
            outcome.converged = true;
            return outcome;
        }
        if (round_ >= static_cast<std::uint64_t>(cfg_.max_outer_iters)) {
            outcome.terminated = true;
            return outcome;
        }
        MStepOutcome m = m_step_params(merged, params_, cfg_);
        if (!m.newton_converged) newton_all_converged_ = false;
        params_ = std::move(m.params);
        ++round_;
        return outcome;
    }

    // Params and trace only; posteriors stay at the sites.
    FitReport report(bool converged) const {
        FitReport out;
        out.elbo_trace = trace_;
        out.outer_iterations = static_cast<int>(trace_.size());
        out.converged = converged;
        out.params = params_;
        out.newton_all_converged = newton_all_converged_;
        return out;
    }

    Checkpoint checkpoint(std::vector<int> acked = {}) const {
        return {round_, params_, trace_, std::move(acked)};
    }

private:
    ProblemShape shape_;
    FitConfig cfg_;
    std::set<int> expected_sites_;
    ModelParams params_;
    std::uint64_t round_ = 1;
    std::vector<double> trace_;
    bool newton_all_converged_ = true;
};

// -- site core (transport-free) -------------------------------------------------

class SiteWorker {
public:
    SiteWorker(LabelTable shard, std::size_t n_classes,
               std::vector<std::size_t> clusters_per_clustering, EStepConfig estep,
               int site_id, int workers = 1)
        : shard_(std::move(shard)), estep_(estep), site_id_(site_id), workers_(workers) {
        local_shape_.n_instances = shard_.n_instances();
        local_shape_.n_classes = n_classes;
        local_shape_.n_classifiers = shard_.class_labels.cols();
        local_shape_.n_clusterings = shard_.cluster_labels.cols();
        local_shape_.clusters_per_clustering = std::move(clusters_per_clustering);
        const ValidationReport validation = validate_table(shard_, local_shape_);
        if (!validation.ok())
            throw ValidationError("site shard invalid\n" + validation.to_string());
    }

    int site_id() const { return site_id_; }
    std::uint64_t expected_round() const { return expected_round_; }
    const LabelTable& shard() const { return shard_; }
    const VariationalState& state() const { return state_; }

    // Runs the local E-step for one round. Per-instance gamma/phi stay
    // resident here; only the aggregates leave.
    PartialStatsMsg site_e_step(const ParamsBroadcast& broadcast) {
        if (broadcast.round < expected_round_)
            throw StaleRound("broadcast for round " + std::to_string(broadcast.round) +
                             ", expected >= " + std::to_string(expected_round_));
        if (broadcast.alpha.size() != local_shape_.n_classes ||
            broadcast.beta.size() != local_shape_.n_clusterings)
            throw ProtocolViolation("broadcast shape does not match this site");
        for (std::size_t m = 0; m < broadcast.beta.size(); ++m)
            if (broadcast.beta[m].rows() != local_shape_.n_classes ||
                broadcast.beta[m].cols() != local_shape_.clusters_per_clustering[m])
                throw ProtocolViolation("broadcast beta dimensions do not match this site");
        ModelParams params{broadcast.alpha, broadcast.beta};
        params.validate();
        SweepOutcome sweep = run_e_step_sweep(shard_, local_shape_, params, estep_, workers_);
        state_ = std::move(sweep.state);
        expected_round_ = broadcast.round + 1;
        PartialStatsMsg msg;
        msg.site_id = site_id_;
        msg.round = broadcast.round;
        msg.stats = std::move(sweep.stats);
        return msg;
    }

    MatrixD posteriors() const { return posteriors_from_gamma(state_.gamma); }

private:
    LabelTable shard_;
    ProblemShape local_shape_;
    EStepConfig estep_;
    int site_id_ = 0;
    int workers_ = 1;
    VariationalState state_;
    std::uint64_t expected_round_ = 1;
};

// -- transport-driven sessions ---------------------------------------------------

struct SessionOptions {
    FitConfig fit;
    ProblemShape shape;  // k and clusters_per_clustering; N is never needed here
    std::chrono::milliseconds round_timeout{15000};
    bool ring = false;
    std::string checkpoint_path;
    TranscriptRecorder* recorder = nullptr;
};

class AggregatorSession {
public:
    // `local_worker` is the peer-mode case: the aggregator node also owns a
    // shard and computes its own partial in its time window each round.
    AggregatorSession(std::vector<std::unique_ptr<Transport>> site_links, SessionOptions opt,
                      std::optional<Checkpoint> resume = std::nullopt,
                      SiteWorker* local_worker = nullptr)
        : links_(std::move(site_links)), opt_(std::move(opt)), local_worker_(local_worker) {
        std::set<int> expected;
        if (local_worker_ != nullptr) expected.insert(local_worker_->site_id());
        if (opt_.ring) {
            if (!links_.empty()) expected.insert(kRingSiteId);
        } else {
            for (std::size_t i = 0; i < links_.size(); ++i)
                expected.insert(first_remote_id() + static_cast<int>(i));
        }
        if (expected.empty()) throw ValidationError("aggregator session has no sites");
        if (resume.has_value())
            coordinator_.emplace(opt_.shape, opt_.fit, expected, *resume);
        else
            coordinator_.emplace(opt_.shape, opt_.fit, expected);
    }

    FitReport run() {
        for (;;) {
            const ParamsBroadcast broadcast = coordinator_->make_broadcast();
            const std::string broadcast_payload = serialize(broadcast);
            for (std::size_t i = 0; i < links_.size(); ++i) send_to(i, broadcast_payload);

            std::vector<PartialStatsMsg> partials;
            if (local_worker_ != nullptr)
                partials.push_back(local_worker_->site_e_step(broadcast));
            try {
                collect_partials(broadcast_payload, partials);
            } catch (const TransportTimeout&) {
                write_checkpoint(partials);
                throw;
            }

            const Coordinator::Outcome outcome =
                coordinator_->aggregate_and_m_step(std::move(partials));
            if (!opt_.checkpoint_path.empty())
                save_checkpoint(coordinator_->checkpoint(), opt_.checkpoint_path);
            if (outcome.terminated) {
                const TerminateMsg terminate{coordinator_->round(), outcome.converged};
                const std::string payload = serialize(terminate);
                for (std::size_t i = 0; i < links_.size(); ++i) send_to(i, payload);
                collect_acks();
                return coordinator_->report(outcome.converged);
            }
        }
    }

private:
    int first_remote_id() const { return local_worker_ != nullptr ? 1 : 0; }

    void send_to(std::size_t link_index, const std::string& payload) {
        links_[link_index]->send(payload);
        if (opt_.recorder != nullptr)
            opt_.recorder->record("from_aggregator",
                                  first_remote_id() + static_cast<int>(link_index), payload);
    }

    void collect_partials(const std::string& broadcast_payload,
                          std::vector<PartialStatsMsg>& partials) {
        const auto deadline = std::chrono::steady_clock::now() + opt_.round_timeout;
        // In ring mode the accumulated total arrives on the last site's link.
        std::vector<std::size_t> sources;
        if (opt_.ring) {
            if (!links_.empty()) sources.push_back(links_.size() - 1);
        } else {
            for (std::size_t i = 0; i < links_.size(); ++i) sources.push_back(i);
        }
        for (std::size_t link_index : sources) {
            for (;;) {
                const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
                    deadline - std::chrono::steady_clock::now());
                if (remaining.count() <= 0) throw TransportTimeout("round deadline exceeded");
                const std::string payload = links_[link_index]->recv(remaining);
                if (opt_.recorder != nullptr)
                    opt_.recorder->record("to_aggregator",
                                          first_remote_id() + static_cast<int>(link_index),
                                          payload);
                const ParsedMessage msg = parse_message(payload);
                if (msg.type == MessageType::ResyncRequest) {
                    send_to(link_index, broadcast_payload);
                    continue;
                }
                if (msg.type != MessageType::PartialStats)
                    throw ProtocolViolation(std::string("unexpected aggregator-bound type: ") +
                                            message_type_name(msg.type));
                PartialStatsMsg partial = decode_partial_stats(msg);
                if (partial.round != coordinator_->round()) {
                    // Stale partial: drop it and resync the site.
                    send_to(link_index, broadcast_payload);
                    continue;
                }
                partials.push_back(std::move(partial));
                break;
            }
        }
    }

    void collect_acks() {
        for (auto& link : links_) {
            try {
                const std::string payload = link->recv(std::chrono::milliseconds(2000));
                if (opt_.recorder != nullptr)
                    opt_.recorder->record("to_aggregator", -1, payload);
                (void)decode_ack(parse_message(payload));
            } catch (const Error&) {
                // Terminate acks are best effort; the report already stands.
            }
        }
    }

    void write_checkpoint(const std::vector<PartialStatsMsg>& received) {
        if (opt_.checkpoint_path.empty()) return;
        std::vector<int> acked;
        for (const auto& p : received) acked.push_back(p.site_id);
        save_checkpoint(coordinator_->checkpoint(std::move(acked)), opt_.checkpoint_path);
    }

    std::vector<std::unique_ptr<Transport>> links_;
    SessionOptions opt_;
    SiteWorker* local_worker_ = nullptr;
    std::optional<Coordinator> coordinator_;
};

struct SiteSessionResult {
    MatrixD posteriors;
    std::vector<std::string> instance_ids;
    bool converged = false;
    std::uint64_t rounds = 0;
};

class SiteSession {
public:
    // `ring_in` receives the running partial from the predecessor site;
    // `ring_out` forwards it. A null ring_out on the last site means the
    // accumulated total goes back on the aggregator link under the ring
    // sentinel id.
    SiteSession(std::unique_ptr<Transport> aggregator_link, SiteWorker worker,
                SessionOptions opt, std::unique_ptr<Transport> ring_in = nullptr,
                std::unique_ptr<Transport> ring_out = nullptr, bool last_in_ring = false)
        : link_(std::move(aggregator_link)),
          worker_(std::move(worker)),
          opt_(std::move(opt)),
          ring_in_(std::move(ring_in)),
          ring_out_(std::move(ring_out)),
          last_in_ring_(last_in_ring) {}

    SiteSessionResult run() {
        for (;;) {
            const std::string payload = link_->recv(opt_.round_timeout);
            if (opt_.recorder != nullptr) opt_.recorder->record("from_aggregator", -1, payload);
            const ParsedMessage msg = parse_message(payload);
            if (msg.type == MessageType::Terminate) {
                const TerminateMsg terminate = decode_terminate(msg);
                const std::string ack = serialize(AckMsg{worker_.site_id(), terminate.round});
                link_->send(ack);
                if (opt_.recorder != nullptr)
                    opt_.recorder->record("to_aggregator", -1, ack);
                SiteSessionResult result;
                result.posteriors = worker_.posteriors();
                result.instance_ids = worker_.shard().instance_ids;
                result.converged = terminate.converged;
                result.rounds = terminate.round;
                return result;
            }
            if (msg.type != MessageType::ParamsBroadcast)
                throw ProtocolViolation(std::string("unexpected site-bound type: ") +
                                        message_type_name(msg.type));
            const ParamsBroadcast broadcast = decode_params_broadcast(msg);
            if (broadcast.round + 1 == worker_.expected_round()) {
                // Round already processed: the aggregator is missing our
                // partial, so replay it.
                if (!last_partial_payload_.empty() && !opt_.ring) {
                    link_->send(last_partial_payload_);
                    if (opt_.recorder != nullptr)
                        opt_.recorder->record("to_aggregator", -1, last_partial_payload_);
                }
                continue;
            }
            if (broadcast.round < worker_.expected_round()) {
                const std::string resync =
                    serialize(ResyncRequestMsg{worker_.site_id(), worker_.expected_round()});
                link_->send(resync);
                if (opt_.recorder != nullptr) opt_.recorder->record("to_aggregator", -1, resync);
                continue;
            }
            PartialStatsMsg partial = worker_.site_e_step(broadcast);
            if (opt_.ring) {
                forward_ring(partial);
            } else {
                last_partial_payload_ = serialize(partial);
                link_->send(last_partial_payload_);
                if (opt_.recorder != nullptr)
                    opt_.recorder->record("to_aggregator", -1, last_partial_payload_);
            }
        }
    }

private:
    void forward_ring(PartialStatsMsg& own) {
        if (ring_in_ != nullptr) {
            const std::string token_payload = ring_in_->recv(opt_.round_timeout);
            if (opt_.recorder != nullptr)
                opt_.recorder->record("site_to_site", worker_.site_id() - 1, token_payload);
            const PartialStatsMsg token = decode_partial_stats(parse_message(token_payload));
            if (token.round != own.round)
                throw StaleRound("ring token round mismatch");
            own.stats.merge(token.stats);
        }
        if (last_in_ring_) {
            own.site_id = kRingSiteId;  // totals only; no per-site identity
            const std::string payload = serialize(own);
            link_->send(payload);
            if (opt_.recorder != nullptr) opt_.recorder->record("to_aggregator", -1, payload);
        } else {
            const std::string payload = serialize(own);
            ring_out_->send(payload);
            if (opt_.recorder != nullptr)
                opt_.recorder->record("site_to_site", worker_.site_id() + 1, payload);
        }
    }

    std::unique_ptr<Transport> link_;
    SiteWorker worker_;
    SessionOptions opt_;
    std::unique_ptr<Transport> ring_in_;
    std::unique_ptr<Transport> ring_out_;
    bool last_in_ring_ = false;
    std::string last_partial_payload_;
};

}  // namespace bc3e
