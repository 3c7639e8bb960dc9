#include <filesystem>
#include <unistd.h>

#include "batch_oracle.hpp"
#include "doctest.h"
#include "histune/error.hpp"
#include "histune/history_model.hpp"

using namespace histune;
using namespace histune::graph;

namespace {

cep::ComplexEvent episode_avg(std::uint64_t episode, double value, double gamma = 0.5) {
    cep::ComplexEvent e;
    e.kind = cep::ComplexKind::EpisodeAvg;
    e.episode = episode;
    e.value = value;
    e.gamma = gamma;
    return e;
}

cep::ComplexEvent stable(std::uint64_t window, std::vector<double> members, double gamma = 0.5) {
    cep::ComplexEvent e;
    e.kind = cep::ComplexKind::StableWindow;
    e.episode = window * members.size();
    e.window_index = window;
    double s = 0;
    for (double m : members) s += m;
    e.value = s / static_cast<double>(members.size());
    e.members = std::move(members);
    e.gamma = gamma;
    return e;
}

template <class T>
T prop(const NodeState& s, const std::string& key) {
    return std::get<T>(s.snapshot.properties.at(key));
}

tuner::TunerConfig tuner_config(double epsilon) {
    tuner::TunerConfig c;
    c.th_stable = 2.0;
    c.epsilon = epsilon;
    return c;
}

struct Rig {
    TemporalGraph graph;
    HistoryModel model;
    std::vector<bus::Payload> sent;
    bool fail = false;
    TunerListener listener;

    explicit Rig(double epsilon, HistoryModelOptions options = {})
        : model(graph, options),
          listener(model, tuner_config(epsilon), 1, [this](const bus::Payload& p) -> std::uint64_t {
              if (fail) throw Error(ErrorCode::BusClosed, "bus closed");
              sent.push_back(p);
              return sent.size() - 1;
          }) {}
};

}  // namespace

TEST_CASE("bootstrap commit holds the metamodel roots") {
    TemporalGraph g;
    HistoryModel m(g, {"swarm", 0.5, TraceRecording::Summary});
    CHECK(g.commit_timepoints() == std::vector<Timepoint>{0});
    CHECK(g.nodes_of_kind(NodeKind::Log).size() == 1);
    CHECK(g.nodes_of_kind(NodeKind::Measure).size() == 3);
    CHECK(prop<double>(g.node_at(m.agent_id(), 0), "gamma") == 0.5);
    CHECK(prop<std::string>(g.node_at(m.measure_id(cep::ComplexKind::EpisodeAvg), 0), "name") ==
          "mean episode reward");
    CHECK(prop<std::string>(g.node_at(m.measure_id(cep::ComplexKind::WindowAvg), 0), "name") == "mean window reward");
}

TEST_CASE("episode averages map to Measurements") {
    TemporalGraph g;
    HistoryModel m(g, {"swarm", 0.5, TraceRecording::None});
    const auto info = m.ingest_complex_event(episode_avg(7, 3.25), 4, 1234);
    CHECK(info.timepoint == ingest_timepoint(4));
    REQUIRE(info.changed.size() == 1);
    const auto s = g.node_at(info.changed[0].id, info.timepoint);
    CHECK(s.kind == NodeKind::Measurement);
    CHECK(prop<std::int64_t>(s, "episode") == 7);
    CHECK(prop<double>(s, "value") == 3.25);
    CHECK(prop<std::string>(s, "kind") == "episode_avg");
    CHECK(prop<std::int64_t>(s, "ts") == 1234);
    CHECK(s.snapshot.edges.at("measure") == std::vector<NodeId>{m.measure_id(cep::ComplexKind::EpisodeAvg)});
}

TEST_CASE("malformed complex events are schema violations") {
    TemporalGraph g;
    HistoryModel m(g, {});
    auto w = stable(0, {1, 2, 3});
    w.window_index.reset();
    CHECK_THROWS_AS(m.ingest_complex_event(w, 0, 0), Error);
    auto empty = stable(0, {1, 2, 3});
    empty.members.clear();
    CHECK_THROWS_AS(m.ingest_complex_event(empty, 0, 0), Error);
}

TEST_CASE("first stable window records a new max and publishes it") {
    Rig rig(0.3);
    int fired = 0;
    rig.graph.add_listener({NodeKind::Measurement}, [&](const CommitInfo&) { ++fired; });
    rig.model.ingest_complex_event(stable(0, {1, 2, 3}), 0, 0);
    CHECK(fired == 1);
    REQUIRE(rig.sent.size() == 1);
    CHECK(rig.sent[0]["decision"] == "new_max");
    CHECK(rig.sent[0]["value"] == 0.5);
    CHECK(rig.sent[0]["effective_episode"] == 4);
    const auto rows = tuning_trajectory(rig.graph);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].timepoint == ingest_timepoint(0) + 1);
    CHECK(rows[0].kind == "new_max");
    CHECK(rows[0].max_r == 2.0);
    CHECK(rows[0].r_win == 2.0);
    CHECK(rows[0].delivered);
}

TEST_CASE("greedy tuner returns to the max gamma") {
    Rig rig(0.0);
    rig.model.ingest_complex_event(stable(0, {5, 5, 5}), 0, 0);
    rig.model.ingest_complex_event(stable(1, {2, 2, 2}), 1, 0);
    // Back at max already: nothing changes, nothing is published.
    CHECK(rig.sent.size() == 1);
    const auto rows = tuning_trajectory(rig.graph);
    REQUIRE(rows.size() == 2);
    CHECK(rows[1].decision == "return_to_max");
    CHECK_FALSE(rows[1].published);
}

TEST_CASE("exploration changes gamma, updates the agent node and is audited") {
    Rig rig(1.0);
    rig.model.ingest_complex_event(stable(0, {5, 5, 5}), 0, 0);
    for (std::uint64_t w = 1; w <= 6; ++w) rig.model.ingest_complex_event(stable(w, {1, 1, 1}), w, 0);
    const auto rows = tuning_trajectory(rig.graph);
    REQUIRE(rows.size() == 7);
    std::size_t published = 0;
    for (const auto& r : rows) {
        if (!r.published) continue;
        // Exactly one TuningRecord per feedback, with matching values.
        REQUIRE(published < rig.sent.size());
        const auto& p = rig.sent[published++];
        CHECK(p["value"].get<double>() == r.new_gamma);
        CHECK(p["decision"].get<std::string>() == r.decision);
        CHECK(p["effective_episode"].get<std::uint64_t>() == r.effective_episode);
    }
    CHECK(published == rig.sent.size());
    const double last = rows.back().new_gamma;
    CHECK(prop<double>(rig.graph.node_at(rig.model.agent_id(), *rig.graph.last_timepoint()), "gamma") == last);
    CHECK(rig.listener.state().max_r == 5.0);
}

TEST_CASE("failed delivery is recorded and the tuner still advances") {
    Rig rig(0.3);
    rig.fail = true;
    rig.model.ingest_complex_event(stable(0, {1, 2, 3}), 0, 0);
    const auto rows = tuning_trajectory(rig.graph);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].published);
    CHECK_FALSE(rows[0].delivered);
    CHECK(rig.listener.state().max_r == 2.0);
    CHECK(rig.listener.feedback_attempted() == 1);
}

TEST_CASE("wrong member count is a schema violation") {
    Rig rig(0.3);
    CHECK_THROWS_AS(rig.model.ingest_complex_event(stable(0, {1, 2}), 0, 0), Error);
}

TEST_CASE("synthetic run: counting oracle and trace recording modes") {
    Rng rng(4);
    const auto trace = testgen::random_trace(rng, 100, 6, 4.0);
    for (auto mode : {TraceRecording::None, TraceRecording::Summary, TraceRecording::Full}) {
        TemporalGraph g;
        HistoryModel m(g, {"a", 0.5, mode});
        cep::StreamEngine engine(cep::build_listing1_pattern(3, 0.5));
        std::uint64_t seq = 0;
        std::size_t stable_count = 0;
        std::vector<cep::TraceEvent> buffer;
        auto ingest = [&](const std::vector<cep::ComplexEvent>& events) {
            for (const auto& e : events) {
                stable_count += e.kind == cep::ComplexKind::StableWindow;
                m.ingest_complex_event(e, seq++, 0, buffer);
            }
        };
        for (const auto& t : trace) {
            auto out = engine.on_trace(t);
            ingest(out);
            if (!out.empty()) std::erase_if(buffer, [&](const cep::TraceEvent& b) { return b.episode < t.episode; });
            buffer.push_back(t);
        }
        ingest(engine.flush_end_of_run());

        std::size_t episodes = 0, windows = 0, stables = 0;
        for (NodeId id : g.nodes_of_kind(NodeKind::Measurement)) {
            const auto kind = prop<std::string>(g.node_at(id, *g.last_timepoint()), "kind");
            episodes += kind == "episode_avg";
            windows += kind == "window_avg";
            stables += kind == "stable_window";
        }
        CHECK(episodes == 100);
        CHECK(windows == 33);
        CHECK(stables == stable_count);
        const std::size_t decisions = g.nodes_of_kind(NodeKind::RLDecision).size();
        const std::size_t expected = mode == TraceRecording::None ? 0 : mode == TraceRecording::Summary ? 100 : trace.size();
        CHECK(decisions == expected);
        CHECK(g.nodes_of_kind(NodeKind::RLObservation).size() == expected);
        CHECK(g.nodes_of_kind(NodeKind::Reward).size() == expected);
    }
}

TEST_CASE("reopening a log restores the model and its trajectory") {
    const auto path = std::filesystem::temp_directory_path() / ("histune-model-" + std::to_string(::getpid()) + ".log");
    std::filesystem::remove(path);
    std::vector<TuningRow> before;
    std::vector<double> gamma_before;
    {
        TemporalGraph g(path);
        HistoryModel m(g, {"swarm", 0.4, TraceRecording::Summary});
        TunerListener l(m, tuner_config(1.0), 3, [](const bus::Payload&) { return std::uint64_t{0}; });
        m.ingest_complex_event(stable(0, {5, 5, 5}), 0, 0);
        for (std::uint64_t w = 1; w <= 4; ++w) m.ingest_complex_event(stable(w, {1, 1, 1}), w, 0);
        before = tuning_trajectory(g);
        gamma_before = reconstruct_gamma(g, 20);
    }
    TemporalGraph g(path, LogMode::ReadOnly);
    HistoryModel m(g, {});
    CHECK(m.agent_id() != 0);
    CHECK(m.measure_id(cep::ComplexKind::StableWindow) != 0);
    const auto after = tuning_trajectory(g);
    REQUIRE(after.size() == before.size());
    for (std::size_t i = 0; i < after.size(); ++i) {
        CHECK(after[i].timepoint == before[i].timepoint);
        CHECK(after[i].new_gamma == before[i].new_gamma);
    }
    CHECK(reconstruct_gamma(g, 20) == gamma_before);
    CHECK(gamma_before[0] == 0.4);
    std::filesystem::remove(path);
}

TEST_CASE("reconstruct_gamma applies delivered feedback from its effective episode") {
    Rig rig(1.0);
    rig.model.ingest_complex_event(stable(0, {5, 5, 5}), 0, 0);
    rig.model.ingest_complex_event(stable(1, {1, 1, 1}), 1, 0);
    const auto rows = tuning_trajectory(rig.graph);
    const auto gamma = reconstruct_gamma(rig.graph, 12);
    CHECK(gamma[0] == 0.5);
    CHECK(gamma[6] == 0.5);
    CHECK(gamma[7] == rows[1].new_gamma);
    CHECK(gamma[11] == rows[1].new_gamma);
    CHECK(to_string(trace_recording_from_string("full")) == std::string("full"));
    CHECK_THROWS_AS(trace_recording_from_string("some"), Error);
}
