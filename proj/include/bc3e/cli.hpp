#pragma once

// Command-line surface: fit | serve | site | peer | sample | evaluate | audit.
// Exit codes: 0 ok, 2 validation error, 3 numerical error, 4 protocol or
// transport error.

#include <chrono>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bc3e/audit.hpp"
#include "bc3e/elbo.hpp"
#include "bc3e/estimation.hpp"
#include "bc3e/io.hpp"
#include "bc3e/metrics.hpp"
#include "bc3e/sampler.hpp"
#include "bc3e/session.hpp"
#include "bc3e/transport.hpp"

namespace bc3e {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitProtocol = 4;

namespace cli_detail {

struct Endpoint {
    std::string host;
    std::uint16_t port = 0;
};

inline Endpoint parse_endpoint(const std::string& text) {
    const auto colon = text.rfind(':');
    if (colon == std::string::npos || colon + 1 >= text.size())
        throw ValidationError("bad endpoint (want host:port): " + text);
    Endpoint ep;
    ep.host = text.substr(0, colon);
    const long port = std::strtol(text.c_str() + colon + 1, nullptr, 10);
    if (port < 1 || port > 65535) throw ValidationError("bad port in endpoint: " + text);
    ep.port = static_cast<std::uint16_t>(port);
    return ep;
}

// Sites introduce themselves with an ACK at round 0 so the aggregator can
// map connections to site ids.
inline std::vector<std::unique_ptr<Transport>> accept_site_links(
    SocketListener& listener, int n_sites, std::chrono::milliseconds timeout,
    TranscriptRecorder* recorder, int first_site_id) {
    std::vector<std::unique_ptr<Transport>> links(static_cast<std::size_t>(n_sites));
    for (int i = 0; i < n_sites; ++i) {
        auto link = listener.accept(timeout);
        const std::string hello = link->recv(timeout);
        if (recorder != nullptr) recorder->record("to_aggregator", -1, hello);
        const AckMsg ack = decode_ack(parse_message(hello));
        const int slot = ack.site_id - first_site_id;
        if (slot < 0 || slot >= n_sites || links[static_cast<std::size_t>(slot)] != nullptr)
            throw ProtocolViolation("unexpected hello from site " +
                                    std::to_string(ack.site_id));
        links[static_cast<std::size_t>(slot)] = std::move(link);
    }
    return links;
}

inline void send_hello(Transport& link, int site_id, TranscriptRecorder* recorder) {
    const std::string hello = serialize(AckMsg{site_id, 0});
    link.send(hello);
    if (recorder != nullptr) recorder->record("to_aggregator", -1, hello);
}

struct CommonArgs {
    std::string config_path;
    std::string labels_path;
    std::string out_path;
    std::string report_path;
    std::string transcript_path;
    std::optional<long long> seed;
    std::optional<int> workers;
    bool freeze_alpha = false;
};

inline KeyValueConfig load_config(const CommonArgs& args) {
    return args.config_path.empty() ? KeyValueConfig{}
                                    : KeyValueConfig::from_file(args.config_path);
}

inline FitConfig resolved_fit_config(const KeyValueConfig& cfg, const CommonArgs& args) {
    FitConfig fit = fit_config_from(cfg);
    if (args.seed.has_value()) fit.rng_seed = static_cast<std::uint64_t>(*args.seed);
    if (args.workers.has_value()) fit.workers = *args.workers;
    if (args.freeze_alpha) fit.freeze_alpha = true;
    return fit;
}

inline void check_mode(const KeyValueConfig& cfg, const std::string& expected) {
    const std::string mode = cfg.get_string("mode");
    if (!mode.empty() && mode != expected)
        throw ValidationError("config mode is \"" + mode + "\" but the \"" + expected +
                              "\" command was invoked");
}

inline SessionOptions session_options(const KeyValueConfig& cfg, const CommonArgs& args,
                                      const FitConfig& fit, TranscriptRecorder* recorder) {
    SessionOptions opt;
    opt.fit = fit;
    opt.shape.n_classes = static_cast<std::size_t>(cfg.get_int("n_classes", 0));
    for (const auto& item : cfg.get_list("clusters_per_clustering"))
        opt.shape.clusters_per_clustering.push_back(
            static_cast<std::size_t>(std::strtol(item.c_str(), nullptr, 10)));
    opt.shape.n_clusterings = opt.shape.clusters_per_clustering.size();
    opt.round_timeout =
        std::chrono::milliseconds(cfg.get_int("round_timeout_ms", 15000));
    opt.ring = cfg.get_bool("ring", false);
    opt.checkpoint_path = cfg.get_string("checkpoint");
    opt.recorder = recorder;
    (void)args;
    return opt;
}

inline int run_fit(const CommonArgs& args) {
    const KeyValueConfig cfg = load_config(args);
    check_mode(cfg, "centralized");
    LabelTable table = read_label_table(args.labels_path);
    const ProblemShape shape =
        shape_from_config(cfg, table.n_instances(), table.class_labels.cols());
    shape.validate();
    const ValidationReport validation = validate_table(table, shape);
    if (!validation.ok()) throw ValidationError(validation.to_string());
    const FitConfig fit_cfg = resolved_fit_config(cfg, args);
    const FitReport report = fit(table, shape, fit_cfg);
    write_posteriors(args.out_path, table.instance_ids, report.posteriors,
                     report.predicted_class);
    const std::string report_path =
        args.report_path.empty() ? args.out_path + ".report" : args.report_path;
    write_fit_report(report_path, report);
    std::cout << "fit: " << (report.converged ? "converged" : "max iterations") << " after "
              << report.outer_iterations << " iterations, final ELBO "
              << format_double(report.elbo_trace.back()) << "\n";
    return kExitOk;
}

inline int run_sample(const CommonArgs& args, const std::string& truth_path) {
    const KeyValueConfig cfg = KeyValueConfig::from_file(args.config_path);
    GenerativeSpec spec = generative_spec_from(cfg);
    if (args.seed.has_value()) spec.rng_seed = static_cast<std::uint64_t>(*args.seed);
    const SampleResult result = sample_dataset(spec);
    write_label_table(args.out_path, result.table);
    if (!truth_path.empty())
        write_truth(truth_path, result.table.instance_ids, result.theta, result.true_class);
    std::cout << "sample: wrote " << result.table.n_instances() << " instances\n";
    return kExitOk;
}

inline int run_evaluate(const CommonArgs& args, const std::string& posteriors_path,
                        const std::string& truth_path) {
    const PosteriorFile posteriors = read_posteriors(posteriors_path);
    const TruthFile truth = read_truth(truth_path);
    if (posteriors.ids != truth.ids)
        throw ValidationError("posterior and truth files list different instances");
    AccuracyReport report;
    if (!args.labels_path.empty()) {
        const LabelTable table = read_label_table(args.labels_path);
        if (table.instance_ids != truth.ids)
            throw ValidationError("labels file lists different instances");
        report = evaluate_accuracy(posteriors.predicted, truth.true_class,
                                   &table.class_labels, posteriors.posteriors.cols());
    } else {
        report = evaluate_accuracy(posteriors.predicted, truth.true_class);
    }
    if (args.out_path.empty()) {
        write_metrics_report(std::cout, report);
    } else {
        std::ofstream out(args.out_path);
        if (!out) throw ValidationError("cannot write metrics file: " + args.out_path);
        write_metrics_report(out, report);
    }
    return kExitOk;
}

inline int run_serve(const CommonArgs& args, bool resume) {
    const KeyValueConfig cfg = load_config(args);
    check_mode(cfg, "aggregator");
    const int n_sites = static_cast<int>(cfg.get_int("n_sites", 0));
    if (n_sites < 1) throw ValidationError("config: n_sites must be >= 1");
    const Endpoint listen = parse_endpoint(cfg.get_string("listen", "127.0.0.1:0"));
    const FitConfig fit_cfg = resolved_fit_config(cfg, args);
    TranscriptRecorder recorder;
    TranscriptRecorder* rec = args.transcript_path.empty() ? nullptr : &recorder;
    SessionOptions opt = session_options(cfg, args, fit_cfg, rec);

    SocketListener listener(listen.port);
    std::cout << "serve: listening on 127.0.0.1:" << listener.port() << " for " << n_sites
              << " site(s)\n";
    auto links = accept_site_links(listener, n_sites, opt.round_timeout, rec, 0);
    std::optional<Checkpoint> from;
    if (resume) from = load_checkpoint(opt.checkpoint_path);
    AggregatorSession session(std::move(links), opt, from);
    FitReport report;
    try {
        report = session.run();
    } catch (...) {
        if (rec != nullptr) recorder.write(args.transcript_path);
        throw;
    }
    if (rec != nullptr) recorder.write(args.transcript_path);
    const std::string report_path =
        args.report_path.empty() ? args.out_path : args.report_path;
    if (!report_path.empty()) write_fit_report(report_path, report);
    std::cout << "serve: " << (report.converged ? "converged" : "max iterations") << " after "
              << report.outer_iterations << " rounds, final ELBO "
              << format_double(report.elbo_trace.back()) << "\n";
    return kExitOk;
}

inline int run_site_with_config(const CommonArgs& args, const KeyValueConfig& cfg,
                                int site_index) {
    const int n_sites = static_cast<int>(cfg.get_int("n_sites", 0));
    const Endpoint aggregator = parse_endpoint(cfg.get_string("aggregator"));
    LabelTable table = read_label_table(args.labels_path);
    const FitConfig fit_cfg = resolved_fit_config(cfg, args);
    TranscriptRecorder recorder;
    TranscriptRecorder* rec = args.transcript_path.empty() ? nullptr : &recorder;
    const SessionOptions opt = session_options(cfg, args, fit_cfg, rec);

    SiteWorker worker(std::move(table), opt.shape.n_classes,
                      opt.shape.clusters_per_clustering, fit_cfg.estep, site_index,
                      fit_cfg.workers);

    std::unique_ptr<SocketListener> ring_listener;
    if (opt.ring && site_index > 0)
        ring_listener = std::make_unique<SocketListener>(
            parse_endpoint(cfg.get_string("ring_listen")).port);
    auto link = connect_socket(aggregator.host, aggregator.port, opt.round_timeout);
    send_hello(*link, site_index, rec);
    std::unique_ptr<Transport> ring_out;
    std::unique_ptr<Transport> ring_in;
    const bool last_in_ring = opt.ring && n_sites > 0 && site_index == n_sites - 1;
    if (opt.ring && !last_in_ring) {
        const Endpoint next = parse_endpoint(cfg.get_string("ring_next"));
        ring_out = connect_socket(next.host, next.port, opt.round_timeout);
    }
    if (ring_listener != nullptr) ring_in = ring_listener->accept(opt.round_timeout);

    SiteSession session(std::move(link), std::move(worker), opt, std::move(ring_in),
                        std::move(ring_out), last_in_ring);
    SiteSessionResult result;
    try {
        result = session.run();
    } catch (...) {
        if (rec != nullptr) recorder.write(args.transcript_path);
        throw;
    }
    if (rec != nullptr) recorder.write(args.transcript_path);
    if (!args.out_path.empty())
        write_posteriors(args.out_path, result.instance_ids, result.posteriors,
                         argmax_rows(result.posteriors));
    std::cout << "site " << site_index << ": session "
              << (result.converged ? "converged" : "ended") << " after " << result.rounds
              << " rounds\n";
    return kExitOk;
}

inline int run_site(const CommonArgs& args, int site_index_flag) {
    const KeyValueConfig cfg = load_config(args);
    check_mode(cfg, "site");
    const int site_index = site_index_flag >= 0
                               ? site_index_flag
                               : static_cast<int>(cfg.get_int("site_index", -1));
    if (site_index < 0) throw ValidationError("site_index is required");
    return run_site_with_config(args, cfg, site_index);
}

inline int run_peer(const CommonArgs& args, int peer_index_flag, bool resume) {
    const KeyValueConfig cfg = load_config(args);
    check_mode(cfg, "peer");
    const int peer_index = peer_index_flag >= 0
                               ? peer_index_flag
                               : static_cast<int>(cfg.get_int("peer_index", -1));
    if (peer_index < 0) throw ValidationError("peer_index is required");
    if (peer_index > 0) return run_site_with_config(args, cfg, peer_index);
    const int n_peers = static_cast<int>(cfg.get_int("n_peers", 0));
    if (n_peers < 2) throw ValidationError("config: n_peers must be >= 2");
    const Endpoint listen = parse_endpoint(cfg.get_string("listen", "127.0.0.1:0"));
    LabelTable table = read_label_table(args.labels_path);
    const FitConfig fit_cfg = resolved_fit_config(cfg, args);
    TranscriptRecorder recorder;
    TranscriptRecorder* rec = args.transcript_path.empty() ? nullptr : &recorder;
    const SessionOptions opt = session_options(cfg, args, fit_cfg, rec);

    SiteWorker local(std::move(table), opt.shape.n_classes, opt.shape.clusters_per_clustering,
                     fit_cfg.estep, 0, fit_cfg.workers);
    SocketListener listener(listen.port);
    std::cout << "peer 0: listening on 127.0.0.1:" << listener.port() << " for "
              << n_peers - 1 << " peer(s)\n";
    auto links = accept_site_links(listener, n_peers - 1, opt.round_timeout, rec, 1);
    std::optional<Checkpoint> from;
    if (resume) from = load_checkpoint(opt.checkpoint_path);
    AggregatorSession session(std::move(links), opt, from, &local);
    FitReport report;
    try {
        report = session.run();
    } catch (...) {
        if (rec != nullptr) recorder.write(args.transcript_path);
        throw;
    }
    if (rec != nullptr) recorder.write(args.transcript_path);
    if (!args.report_path.empty()) write_fit_report(args.report_path, report);
    if (!args.out_path.empty())
        write_posteriors(args.out_path, local.shard().instance_ids, local.posteriors(),
                         argmax_rows(local.posteriors()));
    std::cout << "peer 0: " << (report.converged ? "converged" : "max iterations")
              << " after " << report.outer_iterations << " rounds\n";
    return kExitOk;
}

inline int run_audit(const std::string& transcript_path, const std::string& out_path) {
    const auto entries = load_transcript(transcript_path);
    const AuditReport report = audit_privacy(entries);
    if (out_path.empty()) {
        std::cout << report.to_string();
    } else {
        std::ofstream out(out_path);
        if (!out) throw ValidationError("cannot write audit report: " + out_path);
        out << report.to_string();
    }
    return report.all_pass() ? kExitOk : kExitValidation;
}

}  // namespace cli_detail

inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Consensus refinement of classifier/cluster ensemble labels"};
    app.require_subcommand(1);

    cli_detail::CommonArgs args;
    std::string truth_path;
    std::string posteriors_path;
    std::string transcript_in;
    int site_index = -1;
    int peer_index = -1;
    bool resume = false;

    auto add_common = [&](CLI::App* cmd, bool with_fit_flags) {
        cmd->add_option("--config", args.config_path, "flat key = value config file");
        cmd->add_option("--out", args.out_path, "output path");
        cmd->add_option("--seed", args.seed, "override the config seed");
        if (with_fit_flags) {
            cmd->add_option("--workers", args.workers,
                            "worker threads (never changes results)");
            cmd->add_flag("--freeze-alpha", args.freeze_alpha,
                          "keep alpha at its initial value");
        }
        return cmd;
    };

    CLI::App* fit_cmd = add_common(app.add_subcommand("fit", "centralized run"), true);
    fit_cmd->add_option("--labels", args.labels_path, "label table CSV")->required();
    fit_cmd->add_option("--report", args.report_path, "fit report path");

    CLI::App* serve_cmd =
        add_common(app.add_subcommand("serve", "run the aggregator"), true);
    serve_cmd->add_option("--report", args.report_path, "fit report path");
    serve_cmd->add_option("--transcript", args.transcript_path, "record wire transcript");
    serve_cmd->add_flag("--resume", resume, "resume from the configured checkpoint");

    CLI::App* site_cmd = add_common(app.add_subcommand("site", "run a data site"), true);
    site_cmd->add_option("--labels", args.labels_path, "local shard CSV")->required();
    site_cmd->add_option("--site-index", site_index, "this site's id");
    site_cmd->add_option("--transcript", args.transcript_path, "record wire transcript");

    CLI::App* peer_cmd =
        add_common(app.add_subcommand("peer", "serverless peer round-robin"), true);
    peer_cmd->add_option("--labels", args.labels_path, "local shard CSV")->required();
    peer_cmd->add_option("--peer-index", peer_index, "this peer's id");
    peer_cmd->add_option("--report", args.report_path, "fit report path (peer 0)");
    peer_cmd->add_option("--transcript", args.transcript_path, "record wire transcript");
    peer_cmd->add_flag("--resume", resume, "resume from the configured checkpoint");

    CLI::App* sample_cmd =
        add_common(app.add_subcommand("sample", "draw a synthetic label table"), false);
    sample_cmd->add_option("--truth-out", truth_path, "ground-truth CSV path");

    CLI::App* eval_cmd =
        add_common(app.add_subcommand("evaluate", "score predictions"), false);
    eval_cmd->add_option("--posteriors", posteriors_path, "posterior CSV")->required();
    eval_cmd->add_option("--truth", truth_path, "truth CSV")->required();
    eval_cmd->add_option("--labels", args.labels_path, "label CSV for component accuracy");

    CLI::App* audit_cmd = app.add_subcommand("audit", "privacy-audit a transcript");
    audit_cmd->add_option("--transcript", transcript_in, "transcript JSONL")->required();
    audit_cmd->add_option("--out", args.out_path, "audit report path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (fit_cmd->parsed()) return cli_detail::run_fit(args);
        if (serve_cmd->parsed()) return cli_detail::run_serve(args, resume);
        if (site_cmd->parsed()) return cli_detail::run_site(args, site_index);
        if (peer_cmd->parsed()) return cli_detail::run_peer(args, peer_index, resume);
        if (sample_cmd->parsed()) return cli_detail::run_sample(args, truth_path);
        if (eval_cmd->parsed()) return cli_detail::run_evaluate(args, posteriors_path, truth_path);
        if (audit_cmd->parsed()) return cli_detail::run_audit(transcript_in, args.out_path);
        return kExitValidation;
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const DomainError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const Error& e) {
        std::cerr << "protocol/transport error: " << e.what() << "\n";
        return kExitProtocol;
    }
}

}  // namespace bc3e
