#include <doctest.h>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <thread>
#include <vector>

#include "bc3e/audit.hpp"
#include "bc3e/estimation.hpp"
#include "bc3e/sampler.hpp"
#include "bc3e/session.hpp"
#include "bc3e/transport.hpp"
#include "fixtures.hpp"

using namespace bc3e;
using namespace std::chrono_literals;

namespace {

struct DirectRun {
    FitReport report;
    std::vector<MatrixD> site_posteriors;
};

// Drives Coordinator and SiteWorkers directly (no transport); the reference
// path for equivalence checks at any D.
DirectRun run_direct(const LabelTable& table, const ProblemShape& shape,
                     const FitConfig& cfg, const SiteAssignment& assignment) {
    const auto shards = split_table(table, assignment);
    std::vector<SiteWorker> workers;
    std::set<int> expected;
    for (std::size_t d = 0; d < shards.size(); ++d) {
        workers.emplace_back(shards[d], shape.n_classes, shape.clusters_per_clustering,
                             cfg.estep, static_cast<int>(d), cfg.workers);
        expected.insert(static_cast<int>(d));
    }
    Coordinator coordinator(shape, cfg, expected);
    for (;;) {
        const ParamsBroadcast broadcast = coordinator.make_broadcast();
        std::vector<PartialStatsMsg> partials;
        for (auto& w : workers) partials.push_back(w.site_e_step(broadcast));
        const auto outcome = coordinator.aggregate_and_m_step(std::move(partials));
        if (outcome.terminated) {
            DirectRun run;
            run.report = coordinator.report(outcome.converged);
            for (auto& w : workers) run.site_posteriors.push_back(w.posteriors());
            return run;
        }
    }
}

void check_matches_fit(const DirectRun& run, const FitReport& reference,
                       const SiteAssignment& assignment) {
    CHECK(run.report.elbo_trace == reference.elbo_trace);
    CHECK(run.report.converged == reference.converged);
    CHECK(run.report.params.alpha == reference.params.alpha);
    REQUIRE(run.report.params.beta.size() == reference.params.beta.size());
    for (std::size_t m = 0; m < reference.params.beta.size(); ++m)
        CHECK(run.report.params.beta[m].data() == reference.params.beta[m].data());
    // shard posteriors, reassembled, equal the centralized posteriors
    std::vector<std::size_t> cursor(run.site_posteriors.size(), 0);
    for (std::size_t n = 0; n < assignment.site_of_instance.size(); ++n) {
        const auto d = static_cast<std::size_t>(assignment.site_of_instance[n]);
        for (std::size_t i = 0; i < reference.posteriors.cols(); ++i)
            CHECK(run.site_posteriors[d](cursor[d], i) == reference.posteriors(n, i));
        ++cursor[d];
    }
}

}  // namespace

TEST_CASE("split_table partitions and validates") {
    const auto spec = fixtures::noisy_vote_spec(20, 3);
    const auto sample = sample_dataset(spec);
    const auto assignment = contiguous_assignment(20, 3);
    const auto shards = split_table(sample.table, assignment);
    REQUIRE(shards.size() == 3);
    std::size_t total = 0;
    for (const auto& s : shards) total += s.n_instances();
    CHECK(total == 20);

    SiteAssignment empty_site;
    empty_site.n_sites = 3;
    empty_site.site_of_instance.assign(20, 0);
    empty_site.site_of_instance[5] = 1;  // site 2 stays empty
    CHECK_THROWS_AS(split_table(sample.table, empty_site), ValidationError);
}

TEST_CASE("single-instance site ships its phi in the observed cluster column") {
    const auto spec = fixtures::noisy_vote_spec(5, 21);
    const auto sample = sample_dataset(spec);
    FitConfig cfg;
    const ModelParams params = init_params(spec.shape, cfg);

    LabelTable one;
    one.class_labels = MatrixI(1, 3);
    one.cluster_labels = MatrixI(1, 2);
    one.instance_ids = {sample.table.instance_ids[2]};
    for (std::size_t l = 0; l < 3; ++l) one.class_labels(0, l) = sample.table.class_labels(2, l);
    for (std::size_t m = 0; m < 2; ++m)
        one.cluster_labels(0, m) = sample.table.cluster_labels(2, m);

    SiteWorker worker(one, 3, {3, 3}, cfg.estep, 0);
    const auto partial =
        worker.site_e_step({1, params.alpha, params.beta, cfg.eps_beta, false});
    CHECK(partial.stats.count == 1);
    const auto estep = e_step_instance(2, params, sample.table, cfg.estep);
    for (std::size_t m = 0; m < 2; ++m) {
        const auto j_obs = static_cast<std::size_t>(one.cluster_labels(0, m));
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) {
                ExactSum expected;
                if (j == j_obs) expected.add(estep.phi(m, i));
                CHECK(partial.stats.beta_numerators[m](i, j) == expected);
            }
    }
}

TEST_CASE("partial statistics decompose exactly over any partition") {
    const auto spec = fixtures::noisy_vote_spec(60, 42);
    const auto sample = sample_dataset(spec);
    FitConfig cfg;
    const ModelParams params = init_params(spec.shape, cfg);
    const ParamsBroadcast broadcast{1, params.alpha, params.beta, cfg.eps_beta, false};

    SiteWorker whole(sample.table, 3, {3, 3}, cfg.estep, 0);
    const SuffStats reference = whole.site_e_step(broadcast).stats;

    SplitMix64 rng(77);
    for (int trial = 0; trial < 100; ++trial) {
        const int d = 2 + static_cast<int>(rng.next_below(5));
        SiteAssignment assignment;
        assignment.n_sites = d;
        assignment.site_of_instance.resize(60);
        for (auto& s : assignment.site_of_instance)
            s = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(d)));
        bool all_nonempty = true;
        for (int s = 0; s < d; ++s)
            if (std::count(assignment.site_of_instance.begin(),
                           assignment.site_of_instance.end(), s) == 0)
                all_nonempty = false;
        if (!all_nonempty) continue;
        const auto shards = split_table(sample.table, assignment);
        SuffStats merged = SuffStats::zero(3, std::vector<std::size_t>{3, 3});
        for (std::size_t s = 0; s < shards.size(); ++s) {
            SiteWorker worker(shards[s], 3, {3, 3}, cfg.estep, static_cast<int>(s));
            merged.merge(worker.site_e_step(broadcast).stats);
        }
        CHECK(merged == reference);
    }
}

TEST_CASE("partial statistics carry one unit of mass per instance and clustering") {
    const auto spec = fixtures::noisy_vote_spec(37, 29);
    const auto sample = sample_dataset(spec);
    FitConfig cfg;
    const ModelParams params = init_params(spec.shape, cfg);
    SiteWorker worker(sample.table, 3, {3, 3}, cfg.estep, 0);
    const auto partial =
        worker.site_e_step({1, params.alpha, params.beta, cfg.eps_beta, false});
    CHECK(partial.stats.count == 37);
    for (const auto& numerators : partial.stats.beta_numerators) {
        double mass = 0.0;
        for (const auto& cell : numerators.data()) mass += cell.value();
        CHECK(std::fabs(mass - 37.0) <= 1e-9);
    }
}

TEST_CASE("audit direction rule rejects model pushes addressed to the aggregator") {
    std::vector<TranscriptEntry> transcript;
    ParamsBroadcast bc;
    bc.round = 1;
    bc.alpha = {1.0, 1.0};
    bc.beta = {MatrixD(2, 2, 0.5)};
    transcript.push_back({0, "from_aggregator", 0, serialize(bc)});
    transcript.push_back({1, "to_aggregator", 0, serialize(bc)});  // wrong direction
    const AuditReport report = audit_privacy(transcript);
    CHECK_FALSE(report.all_pass());
    CHECK_FALSE(report.rules[1].pass);
    CHECK(report.rules[1].offending_seqs == std::vector<std::uint64_t>{1});
}

TEST_CASE("coordinator validates rounds and site sets") {
    const auto spec = fixtures::noisy_vote_spec(10, 23);
    const auto sample = sample_dataset(spec);
    FitConfig cfg;
    Coordinator coordinator(spec.shape, cfg, {0, 1});
    const auto shards = split_table(sample.table, contiguous_assignment(10, 2));
    SiteWorker w0(shards[0], 3, {3, 3}, cfg.estep, 0);
    SiteWorker w1(shards[1], 3, {3, 3}, cfg.estep, 1);
    const auto broadcast = coordinator.make_broadcast();
    auto p0 = w0.site_e_step(broadcast);
    auto p1 = w1.site_e_step(broadcast);

    {
        auto stale = p0;
        stale.round = 99;
        CHECK_THROWS_AS(coordinator.aggregate_and_m_step({stale, p1}), StaleRound);
    }
    CHECK_THROWS_AS(coordinator.aggregate_and_m_step({p0}), MissingSite);
    CHECK_THROWS_AS(coordinator.aggregate_and_m_step({p0, p0}), DuplicateSite);
    {
        auto unknown = p0;
        unknown.site_id = 5;
        CHECK_THROWS_AS(coordinator.aggregate_and_m_step({unknown, p1}), ProtocolViolation);
    }
    {
        auto misshaped = p0;
        misshaped.stats.gamma_stats.resize(2);
        CHECK_THROWS_AS(coordinator.aggregate_and_m_step({misshaped, p1}), ProtocolViolation);
    }
    {
        // broadcast with beta dimensions the site cannot index
        ParamsBroadcast bad = broadcast;
        bad.round = w0.expected_round();
        bad.beta = {MatrixD(3, 2, 0.5), MatrixD(3, 3, 1.0 / 3)};
        CHECK_THROWS_AS(w0.site_e_step(bad), ProtocolViolation);
    }
    // after all the rejections, the round is still appliable
    const auto outcome = coordinator.aggregate_and_m_step({p0, p1});
    CHECK_FALSE(outcome.terminated);
    CHECK(coordinator.round() == 2);
}

TEST_CASE("direct sessions match the centralized fit bit for bit") {
    const auto spec = fixtures::noisy_vote_spec(40, 42);
    const auto sample = sample_dataset(spec);
    FitConfig cfg;
    cfg.max_outer_iters = 30;
    const FitReport reference = fit(sample.table, spec.shape, cfg);
    for (int d : {1, 2, 5, 40}) {
        const auto assignment = contiguous_assignment(40, d);
        const DirectRun run = run_direct(sample.table, spec.shape, cfg, assignment);
        check_matches_fit(run, reference, assignment);
    }
}

TEST_CASE("channel-transport session matches the centralized fit") {
    const auto spec = fixtures::noisy_vote_spec(36, 42);
    const auto sample = sample_dataset(spec);
    FitConfig cfg;
    cfg.max_outer_iters = 25;
    const FitReport reference = fit(sample.table, spec.shape, cfg);
    const auto assignment = contiguous_assignment(36, 2);
    const auto shards = split_table(sample.table, assignment);

    auto [agg_link0, site_link0] = make_channel_pair();
    auto [agg_link1, site_link1] = make_channel_pair();
    SessionOptions opt;
    opt.fit = cfg;
    opt.shape = spec.shape;
    opt.round_timeout = 10s;

    std::vector<SiteSessionResult> site_results(2);
    std::thread site0([&, link = std::move(site_link0)]() mutable {
        SiteWorker worker(shards[0], 3, {3, 3}, cfg.estep, 0);
        site_results[0] = SiteSession(std::move(link), std::move(worker), opt).run();
    });
    std::thread site1([&, link = std::move(site_link1)]() mutable {
        SiteWorker worker(shards[1], 3, {3, 3}, cfg.estep, 1);
        site_results[1] = SiteSession(std::move(link), std::move(worker), opt).run();
    });

    std::vector<std::unique_ptr<Transport>> links;
    links.push_back(std::move(agg_link0));
    links.push_back(std::move(agg_link1));
    AggregatorSession aggregator(std::move(links), opt);
    const FitReport report = aggregator.run();
    site0.join();
    site1.join();

    CHECK(report.elbo_trace == reference.elbo_trace);
    CHECK(report.params.alpha == reference.params.alpha);
    for (std::size_t m = 0; m < 2; ++m)
        CHECK(report.params.beta[m].data() == reference.params.beta[m].data());
    CHECK(report.posteriors.rows() == 0);  // posteriors stay at the sites
    std::size_t row = 0;
    for (std::size_t d = 0; d < 2; ++d)
        for (std::size_t r = 0; r < site_results[d].posteriors.rows(); ++r, ++row)
            for (std::size_t i = 0; i < 3; ++i)
                CHECK(site_results[d].posteriors(r, i) == reference.posteriors(row, i));
}

TEST_CASE("ring aggregation ships only totals and matches the star run") {
    const auto spec = fixtures::noisy_vote_spec(30, 42);
    const auto sample = sample_dataset(spec);
    FitConfig cfg;
    cfg.max_outer_iters = 15;
    const FitReport reference = fit(sample.table, spec.shape, cfg);
    const auto shards = split_table(sample.table, contiguous_assignment(30, 3));

    auto [agg0, site0_link] = make_channel_pair();
    auto [agg1, site1_link] = make_channel_pair();
    auto [agg2, site2_link] = make_channel_pair();
    auto [ring01_out, ring01_in] = make_channel_pair();
    auto [ring12_out, ring12_in] = make_channel_pair();

    SessionOptions opt;
    opt.fit = cfg;
    opt.shape = spec.shape;
    opt.ring = true;
    opt.round_timeout = 10s;

    TranscriptRecorder recorder;
    SessionOptions agg_opt = opt;
    agg_opt.recorder = &recorder;

    std::thread s0([&, link = std::move(site0_link), out = std::move(ring01_out)]() mutable {
        SiteWorker worker(shards[0], 3, {3, 3}, cfg.estep, 0);
        SiteSession(std::move(link), std::move(worker), opt, nullptr, std::move(out), false)
            .run();
    });
    std::thread s1([&, link = std::move(site1_link), in = std::move(ring01_in),
                    out = std::move(ring12_out)]() mutable {
        SiteWorker worker(shards[1], 3, {3, 3}, cfg.estep, 1);
        SiteSession(std::move(link), std::move(worker), opt, std::move(in), std::move(out),
                    false)
            .run();
    });
    std::thread s2([&, link = std::move(site2_link), in = std::move(ring12_in)]() mutable {
        SiteWorker worker(shards[2], 3, {3, 3}, cfg.estep, 2);
        SiteSession(std::move(link), std::move(worker), opt, std::move(in), nullptr, true)
            .run();
    });

    std::vector<std::unique_ptr<Transport>> links;
    links.push_back(std::move(agg0));
    links.push_back(std::move(agg1));
    links.push_back(std::move(agg2));
    AggregatorSession aggregator(std::move(links), agg_opt);
    const FitReport report = aggregator.run();
    s0.join();
    s1.join();
    s2.join();

    CHECK(report.elbo_trace == reference.elbo_trace);
    CHECK(report.params.alpha == reference.params.alpha);

    // every aggregator-bound partial carries the ring sentinel, not a site id
    for (const auto& entry : recorder.entries()) {
        if (entry.direction != "to_aggregator") continue;
        const auto msg = parse_message(entry.payload);
        if (msg.type == MessageType::PartialStats)
            CHECK(decode_partial_stats(msg).site_id == kRingSiteId);
    }
}

TEST_CASE("socket-transport session matches the centralized fit") {
    const auto spec = fixtures::noisy_vote_spec(24, 42);
    const auto sample = sample_dataset(spec);
    FitConfig cfg;
    cfg.max_outer_iters = 12;
    const FitReport reference = fit(sample.table, spec.shape, cfg);
    const auto shards = split_table(sample.table, contiguous_assignment(24, 2));

    SessionOptions opt;
    opt.fit = cfg;
    opt.shape = spec.shape;
    opt.round_timeout = 10s;

    SocketListener listener(0);
    const std::uint16_t port = listener.port();
    std::vector<SiteSessionResult> site_results(2);
    std::thread site0([&] {
        auto link = connect_socket("127.0.0.1", port, 5s);
        link->send(serialize(AckMsg{0, 0}));
        SiteWorker worker(shards[0], 3, {3, 3}, cfg.estep, 0);
        site_results[0] = SiteSession(std::move(link), std::move(worker), opt).run();
    });
    std::thread site1([&] {
        auto link = connect_socket("127.0.0.1", port, 5s);
        link->send(serialize(AckMsg{1, 0}));
        SiteWorker worker(shards[1], 3, {3, 3}, cfg.estep, 1);
        site_results[1] = SiteSession(std::move(link), std::move(worker), opt).run();
    });

    std::vector<std::unique_ptr<Transport>> links(2);
    for (int i = 0; i < 2; ++i) {
        auto link = listener.accept(5s);
        const AckMsg hello = decode_ack(parse_message(link->recv(5s)));
        links[static_cast<std::size_t>(hello.site_id)] = std::move(link);
    }
    AggregatorSession aggregator(std::move(links), opt);
    const FitReport report = aggregator.run();
    site0.join();
    site1.join();

    CHECK(report.elbo_trace == reference.elbo_trace);
    CHECK(report.params.alpha == reference.params.alpha);
    for (std::size_t m = 0; m < 2; ++m)
        CHECK(report.params.beta[m].data() == reference.params.beta[m].data());
}

TEST_CASE("peer mode matches the aggregator mode") {
    const auto spec = fixtures::noisy_vote_spec(30, 42);
    const auto sample = sample_dataset(spec);
    FitConfig cfg;
    cfg.max_outer_iters = 15;
    const FitReport reference = fit(sample.table, spec.shape, cfg);
    const auto shards = split_table(sample.table, contiguous_assignment(30, 3));

    SessionOptions opt;
    opt.fit = cfg;
    opt.shape = spec.shape;
    opt.round_timeout = 10s;

    auto [agg1, peer1_link] = make_channel_pair();
    auto [agg2, peer2_link] = make_channel_pair();
    std::thread p1([&, link = std::move(peer1_link)]() mutable {
        SiteWorker worker(shards[1], 3, {3, 3}, cfg.estep, 1);
        SiteSession(std::move(link), std::move(worker), opt).run();
    });
    std::thread p2([&, link = std::move(peer2_link)]() mutable {
        SiteWorker worker(shards[2], 3, {3, 3}, cfg.estep, 2);
        SiteSession(std::move(link), std::move(worker), opt).run();
    });

    SiteWorker local(shards[0], 3, {3, 3}, cfg.estep, 0);
    std::vector<std::unique_ptr<Transport>> links;
    links.push_back(std::move(agg1));
    links.push_back(std::move(agg2));
    AggregatorSession peer0(std::move(links), opt, std::nullopt, &local);
    const FitReport report = peer0.run();
    p1.join();
    p2.join();

    CHECK(report.elbo_trace == reference.elbo_trace);
    CHECK(report.params.alpha == reference.params.alpha);
    const MatrixD local_post = local.posteriors();
    for (std::size_t r = 0; r < local_post.rows(); ++r)
        for (std::size_t i = 0; i < 3; ++i)
            CHECK(local_post(r, i) == reference.posteriors(r, i));
}

TEST_CASE("stale broadcasts trigger replay or resync") {
    const auto spec = fixtures::noisy_vote_spec(8, 25);
    const auto sample = sample_dataset(spec);
    FitConfig cfg;
    SessionOptions opt;
    opt.fit = cfg;
    opt.shape = spec.shape;
    opt.round_timeout = 2s;

    auto [agg_end, site_end] = make_channel_pair();
    std::thread site([&, link = std::move(site_end)]() mutable {
        SiteWorker worker(sample.table, 3, {3, 3}, cfg.estep, 0);
        try {
            SiteSession(std::move(link), std::move(worker), opt).run();
        } catch (const Error&) {
            // the fake aggregator hangs up mid-session
        }
    });

    Coordinator coordinator(spec.shape, cfg, {0});
    const auto bc1 = serialize(coordinator.make_broadcast());
    agg_end->send(bc1);
    const auto partial1 = decode_partial_stats(parse_message(agg_end->recv(5s)));
    CHECK(partial1.round == 1);

    // duplicate of the same round: the site replays its partial
    agg_end->send(bc1);
    const auto replay = decode_partial_stats(parse_message(agg_end->recv(5s)));
    CHECK(replay.round == 1);
    CHECK(replay.stats == partial1.stats);

    // advance the session, then send an outdated round: resync request
    (void)coordinator.aggregate_and_m_step({partial1});
    const auto bc2 = serialize(coordinator.make_broadcast());
    agg_end->send(bc2);
    (void)agg_end->recv(5s);  // partial for round 2
    agg_end->send(bc1);       // round 1 again, two rounds stale
    const auto parsed = parse_message(agg_end->recv(5s));
    CHECK(parsed.type == MessageType::ResyncRequest);
    CHECK(decode_resync_request(parsed).expected_round == 3);

    agg_end->close();
    site.join();
}

TEST_CASE("site rejects a wrong protocol version with ProtocolViolation") {
    const auto spec = fixtures::noisy_vote_spec(5, 26);
    const auto sample = sample_dataset(spec);
    FitConfig cfg;
    SessionOptions opt;
    opt.fit = cfg;
    opt.shape = spec.shape;
    opt.round_timeout = 2s;

    auto [agg_end, site_end] = make_channel_pair();
    std::string bad = serialize(ParamsBroadcast{1, {1.0, 1.0, 1.0},
                                                {MatrixD(3, 3, 1.0 / 3), MatrixD(3, 3, 1.0 / 3)},
                                                1e-10, false});
    bad.replace(bad.find("\"version\":1"), 11, "\"version\":7");
    SiteWorker worker(sample.table, 3, {3, 3}, cfg.estep, 0);
    SiteSession session(std::move(site_end), std::move(worker), opt);
    agg_end->send(bad);
    CHECK_THROWS_AS(session.run(), ProtocolViolation);
}

TEST_CASE("kill and resume reaches the uninterrupted result") {
    const auto spec = fixtures::noisy_vote_spec(30, 42);
    const auto sample = sample_dataset(spec);
    FitConfig cfg;
    cfg.max_outer_iters = 14;
    const auto shards = split_table(sample.table, contiguous_assignment(30, 2));

    const std::string checkpoint_path =
        (std::filesystem::temp_directory_path() / "bc3e_resume_test.ckpt").string();
    std::filesystem::remove(checkpoint_path);

    // uninterrupted reference
    const DirectRun reference =
        run_direct(sample.table, spec.shape, cfg, contiguous_assignment(30, 2));

    SessionOptions opt;
    opt.fit = cfg;
    opt.shape = spec.shape;
    opt.round_timeout = 500ms;
    opt.checkpoint_path = checkpoint_path;

    // site 1 dies mid-session: it stops answering after 3 rounds
    auto [agg0, site0_link] = make_channel_pair();
    auto [agg1, site1_link] = make_channel_pair();
    std::thread healthy([&, link = std::move(site0_link)]() mutable {
        SiteWorker worker(shards[0], 3, {3, 3}, cfg.estep, 0);
        try {
            SiteSession(std::move(link), std::move(worker), opt).run();
        } catch (const Error&) {
        }
    });
    std::thread flaky([&, link = std::move(site1_link)]() mutable {
        SiteWorker worker(shards[1], 3, {3, 3}, cfg.estep, 1);
        for (int round = 1; round <= 3; ++round) {
            const auto broadcast =
                decode_params_broadcast(parse_message(link->recv(5s)));
            link->send(serialize(worker.site_e_step(broadcast)));
        }
        // receives round 4 and never answers
        (void)link->recv(5s);
    });

    std::vector<std::unique_ptr<Transport>> links;
    links.push_back(std::move(agg0));
    links.push_back(std::move(agg1));
    AggregatorSession broken(std::move(links), opt);
    CHECK_THROWS_AS(broken.run(), TransportTimeout);
    flaky.join();
    healthy.join();
    REQUIRE(std::filesystem::exists(checkpoint_path));
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    CHECK(ck.round == 4);
    CHECK(ck.elbo_trace.size() == 3);

    // resume with healthy sites
    auto [ragg0, rsite0] = make_channel_pair();
    auto [ragg1, rsite1] = make_channel_pair();
    SessionOptions resume_opt = opt;
    resume_opt.round_timeout = 10s;
    std::vector<SiteSessionResult> site_results(2);
    std::thread r0([&, link = std::move(rsite0)]() mutable {
        SiteWorker worker(shards[0], 3, {3, 3}, cfg.estep, 0);
        site_results[0] = SiteSession(std::move(link), std::move(worker), resume_opt).run();
    });
    std::thread r1([&, link = std::move(rsite1)]() mutable {
        SiteWorker worker(shards[1], 3, {3, 3}, cfg.estep, 1);
        site_results[1] = SiteSession(std::move(link), std::move(worker), resume_opt).run();
    });
    std::vector<std::unique_ptr<Transport>> rlinks;
    rlinks.push_back(std::move(ragg0));
    rlinks.push_back(std::move(ragg1));
    AggregatorSession resumed(std::move(rlinks), resume_opt, ck);
    const FitReport report = resumed.run();
    r0.join();
    r1.join();

    CHECK(report.elbo_trace == reference.report.elbo_trace);
    CHECK(report.params.alpha == reference.report.params.alpha);
    for (std::size_t m = 0; m < 2; ++m)
        CHECK(report.params.beta[m].data() == reference.report.params.beta[m].data());
    std::filesystem::remove(checkpoint_path);
}

TEST_CASE("audit passes compliant sessions and catches an injected field") {
    const auto spec = fixtures::noisy_vote_spec(16, 27);
    const auto sample = sample_dataset(spec);
    FitConfig cfg;
    cfg.max_outer_iters = 6;
    const auto shards = split_table(sample.table, contiguous_assignment(16, 2));

    TranscriptRecorder recorder;
    SessionOptions opt;
    opt.fit = cfg;
    opt.shape = spec.shape;
    opt.round_timeout = 10s;
    opt.recorder = &recorder;

    auto [agg0, site0_link] = make_channel_pair();
    auto [agg1, site1_link] = make_channel_pair();
    SessionOptions site_opt = opt;
    site_opt.recorder = nullptr;
    std::thread s0([&, link = std::move(site0_link)]() mutable {
        SiteWorker worker(shards[0], 3, {3, 3}, cfg.estep, 0);
        SiteSession(std::move(link), std::move(worker), site_opt).run();
    });
    std::thread s1([&, link = std::move(site1_link)]() mutable {
        SiteWorker worker(shards[1], 3, {3, 3}, cfg.estep, 1);
        SiteSession(std::move(link), std::move(worker), site_opt).run();
    });
    std::vector<std::unique_ptr<Transport>> links;
    links.push_back(std::move(agg0));
    links.push_back(std::move(agg1));
    AggregatorSession aggregator(std::move(links), opt);
    (void)aggregator.run();
    s0.join();
    s1.join();

    const AuditReport clean = audit_privacy(recorder.entries());
    CHECK(clean.all_pass());

    // negative control: a partial with an injected per-instance field
    auto tampered = recorder.entries();
    for (auto& entry : tampered) {
        if (entry.direction != "to_aggregator") continue;
        const auto pos = entry.payload.find("\"site_id\"");
        if (pos == std::string::npos) continue;
        entry.payload.insert(pos, "\"instance_labels\":[1,2,1,3],");
        break;
    }
    const AuditReport dirty = audit_privacy(tampered);
    CHECK_FALSE(dirty.all_pass());
    CHECK_FALSE(dirty.rules[0].pass);  // schema rule
    CHECK_FALSE(dirty.rules[0].offending_seqs.empty());
}

TEST_CASE("payload sizes are identical for very different site loads") {
    FitConfig cfg;
    auto run_one_round = [&](std::size_t n_instances) {
        auto spec = fixtures::noisy_vote_spec(n_instances, 28);
        const auto sample = sample_dataset(spec);
        SiteWorker worker(sample.table, 3, {3, 3}, cfg.estep, 0);
        const ModelParams params = init_params(spec.shape, cfg);
        const auto partial =
            worker.site_e_step({1, params.alpha, params.beta, cfg.eps_beta, false});
        return serialize(partial).size();
    };
    CHECK(run_one_round(10) == run_one_round(1000));
}
