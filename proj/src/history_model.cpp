#include "histune/history_model.hpp"

#include <algorithm>

#include "histune/error.hpp"

namespace histune::graph {

namespace {

constexpr const char* kEpisodeMeasure = "mean episode reward";
constexpr const char* kWindowMeasure = "mean window reward";
constexpr const char* kStableMeasure = "stable window reward";

template <typename T>
T prop(const NodeState& s, const std::string& name) {
    auto it = s.snapshot.properties.find(name);
    if (it == s.snapshot.properties.end())
        throw Error(ErrorCode::SchemaViolation, "schema violation: node " + std::to_string(s.id) + " lacks '" + name + "'");
    if (const T* v = std::get_if<T>(&it->second)) return *v;
    throw Error(ErrorCode::SchemaViolation, "schema violation: node " + std::to_string(s.id) + " property '" + name +
                                                "' has the wrong type");
}

std::string prop_or(const NodeState& s, const std::string& name, const std::string& fallback) {
    auto it = s.snapshot.properties.find(name);
    if (it == s.snapshot.properties.end()) return fallback;
    if (const auto* v = std::get_if<std::string>(&it->second)) return *v;
    return fallback;
}

}  // namespace

const char* to_string(TraceRecording r) {
    switch (r) {
    case TraceRecording::None: return "none";
    case TraceRecording::Summary: return "summary";
    case TraceRecording::Full: return "full";
    }
    return "?";
}

TraceRecording trace_recording_from_string(const std::string& text) {
    if (text == "none") return TraceRecording::None;
    if (text == "summary") return TraceRecording::Summary;
    if (text == "full") return TraceRecording::Full;
    throw Error(ErrorCode::Config, "trace_recording must be none, summary or full; got '" + text + "'");
}

// ---------------------------------------------------------------- model

HistoryModel::HistoryModel(TemporalGraph& graph, HistoryModelOptions options)
    : graph_(graph), options_(std::move(options)) {
    auto logs = graph_.nodes_of_kind(NodeKind::Log);
    if (!logs.empty()) {
        // Reopened log: find the bootstrap nodes instead of creating them.
        log_ = logs.front();
        auto agents = graph_.nodes_of_kind(NodeKind::RLAgent);
        if (agents.empty()) throw Error(ErrorCode::CorruptLog, "corrupt log: no RLAgent node");
        agent_ = agents.front();
        for (NodeId id : graph_.nodes_of_kind(NodeKind::Measure)) {
            const auto s = graph_.node_at(id, graph_.version_timepoints(id).front());
            const auto name = prop_or(s, "name", "");
            if (name == kEpisodeMeasure) episode_measure_ = id;
            if (name == kWindowMeasure) window_measure_ = id;
            if (name == kStableMeasure) stable_measure_ = id;
        }
        return;
    }

    log_ = graph_.reserve_id();
    agent_ = graph_.reserve_id();
    episode_measure_ = graph_.reserve_id();
    window_measure_ = graph_.reserve_id();
    stable_measure_ = graph_.reserve_id();

    auto measure = [&](NodeId id, const char* name) {
        PropertySnapshot s;
        s.properties["name"] = std::string(name);
        s.edges["log"] = {log_};
        return NodeChange::create_node(id, NodeKind::Measure, std::move(s));
    };
    PropertySnapshot log_props;
    log_props.properties["name"] = std::string("rl-history");
    PropertySnapshot agent_props;
    agent_props.properties["name"] = options_.agent_name;
    agent_props.properties["gamma"] = options_.initial_gamma;
    agent_props.edges["log"] = {log_};

    graph_.commit(0, {NodeChange::create_node(log_, NodeKind::Log, std::move(log_props)),
                      NodeChange::create_node(agent_, NodeKind::RLAgent, std::move(agent_props)),
                      measure(episode_measure_, kEpisodeMeasure), measure(window_measure_, kWindowMeasure),
                      measure(stable_measure_, kStableMeasure)});
}

NodeId HistoryModel::measure_id(cep::ComplexKind kind) const {
    switch (kind) {
    case cep::ComplexKind::EpisodeAvg: return episode_measure_;
    case cep::ComplexKind::WindowAvg: return window_measure_;
    case cep::ComplexKind::StableWindow: return stable_measure_;
    }
    return 0;
}

void HistoryModel::record_decision(std::vector<NodeChange>& changes, const cep::TraceEvent& trace) {
    const NodeId state = graph_.reserve_id();
    PropertySnapshot state_props;
    state_props.properties["encoding"] = trace.state;
    changes.push_back(NodeChange::create_node(state, NodeKind::RLState, std::move(state_props)));

    const NodeId reward = graph_.reserve_id();
    PropertySnapshot reward_props;
    reward_props.properties["value"] = trace.reward;
    changes.push_back(NodeChange::create_node(reward, NodeKind::Reward, std::move(reward_props)));

    const NodeId observation = graph_.reserve_id();
    PropertySnapshot obs_props;
    obs_props.properties["episode"] = static_cast<std::int64_t>(trace.episode);
    obs_props.properties["step"] = static_cast<std::int64_t>(trace.step);
    obs_props.edges["reward"] = {reward};
    obs_props.edges["state"] = {state};
    changes.push_back(NodeChange::create_node(observation, NodeKind::RLObservation, std::move(obs_props)));

    std::vector<NodeId> qvalues;
    for (std::size_t i = 0; i < trace.qvalues.size(); ++i) {
        const NodeId q = graph_.reserve_id();
        PropertySnapshot q_props;
        q_props.properties["index"] = static_cast<std::int64_t>(i);
        q_props.properties["value"] = trace.qvalues[i];
        changes.push_back(NodeChange::create_node(q, NodeKind::QValue, std::move(q_props)));
        qvalues.push_back(q);
    }

    PropertySnapshot decision;
    decision.properties["episode"] = static_cast<std::int64_t>(trace.episode);
    decision.properties["step"] = static_cast<std::int64_t>(trace.step);
    decision.properties["action"] = trace.action;
    decision.properties["gamma"] = trace.gamma;
    decision.edges["agent"] = {agent_};
    decision.edges["observation"] = {observation};
    decision.edges["qvalues"] = std::move(qvalues);
    changes.push_back(NodeChange::create_node(graph_.reserve_id(), NodeKind::RLDecision, std::move(decision)));
}

CommitInfo HistoryModel::ingest_complex_event(const cep::ComplexEvent& event, std::uint64_t seq, std::int64_t ts,
                                              std::span<const cep::TraceEvent> episode_traces) {
    if (event.kind != cep::ComplexKind::EpisodeAvg && !event.window_index)
        throw Error(ErrorCode::SchemaViolation, "schema violation: window event without window_index");
    if (event.kind == cep::ComplexKind::StableWindow && event.members.empty())
        throw Error(ErrorCode::SchemaViolation, "schema violation: stable window without members");

    PropertySnapshot m;
    m.properties["kind"] = std::string(cep::to_string(event.kind));
    m.properties["value"] = event.value;
    m.properties["gamma"] = event.gamma;
    m.properties["episode"] = static_cast<std::int64_t>(event.episode);
    if (event.window_index) m.properties["window_index"] = static_cast<std::int64_t>(*event.window_index);
    if (event.kind == cep::ComplexKind::StableWindow) m.properties["members"] = event.members;
    m.properties["seq"] = static_cast<std::int64_t>(seq);
    m.properties["ts"] = ts;
    m.edges["measure"] = {measure_id(event.kind)};
    m.edges["agent"] = {agent_};

    std::vector<NodeChange> changes;
    changes.push_back(NodeChange::create_node(graph_.reserve_id(), NodeKind::Measurement, std::move(m)));

    if (event.kind == cep::ComplexKind::EpisodeAvg && options_.recording != TraceRecording::None) {
        std::vector<const cep::TraceEvent*> mine;
        for (const auto& t : episode_traces)
            if (t.episode == event.episode) mine.push_back(&t);
        if (options_.recording == TraceRecording::Summary && !mine.empty()) mine.erase(mine.begin(), mine.end() - 1);
        for (const auto* t : mine) record_decision(changes, *t);
    }
    return graph_.commit(ingest_timepoint(seq), std::move(changes));
}

// ---------------------------------------------------------------- listener

TunerListener::TunerListener(HistoryModel& model, tuner::TunerConfig config, std::uint64_t seed, FeedbackSink sink)
    : model_(model), tuner_(config, tuner::HyperparameterVector{model.options().initial_gamma, {}}, seed),
      sink_(std::move(sink)) {
    model_.graph().add_listener({NodeKind::Measurement}, [this](const CommitInfo& info) { on_commit(info); });
}

std::optional<bus::Payload> TunerListener::on_commit(const CommitInfo& info) {
    TemporalGraph& graph = model_.graph();
    std::optional<bus::Payload> published;
    for (const auto& changed : info.changed) {
        if (changed.kind != NodeKind::Measurement) continue;
        const NodeState node = graph.node_at(changed.id, info.timepoint);
        if (prop<std::string>(node, "kind") != "stable_window") continue;

        const auto members = prop<std::vector<double>>(node, "members");
        const auto first = static_cast<std::uint64_t>(prop<std::int64_t>(node, "episode"));
        const auto window_index = static_cast<std::uint64_t>(prop<std::int64_t>(node, "window_index"));
        const std::size_t x = tuner_.config().window_length;
        if (members.size() != x)
            throw Error(ErrorCode::SchemaViolation, "schema violation: stable window has " +
                                                        std::to_string(members.size()) + " members, expected " +
                                                        std::to_string(x));
        std::vector<tuner::EpisodeAverage> avgs;
        for (std::size_t i = 0; i < members.size(); ++i) avgs.push_back({first + i, members[i], 0});
        const auto window = tuner::reward_by_window(avgs, x, window_index, tuner_.state().current_lambda);

        const double old_gamma = tuner_.state().current_lambda.gamma;
        auto decision = tuner_.observe(window);
        if (!decision) continue;

        const bool new_max = decision->kind == tuner::DecisionKind::NewMaxRecorded;
        const bool changes_gamma = decision->new_lambda.gamma != old_gamma;
        const std::string decision_name =
            new_max ? "new_max" : tuner::to_string(decision->exploration_move.value_or(tuner::ExplorationMove::ReturnToMax));
        const std::uint64_t last_episode = first + x - 1;
        // Episode last+1 is already running when the window closes.
        const std::uint64_t effective = last_episode + 2;

        bool publish = new_max || changes_gamma;
        bool delivered = false;
        std::int64_t feedback_seq = -1;
        if (publish) {
            bus::Payload p = bus::Payload::object();
            p["kind"] = "set_hyperparameter";
            p["name"] = "gamma";
            p["value"] = decision->new_lambda.gamma;
            p["effective_episode"] = effective;
            p["decision"] = decision_name;
            ++attempted_;
            try {
                feedback_seq = static_cast<std::int64_t>(sink_(p));
                delivered = true;
            } catch (const Error&) {
                delivered = false;
            }
            published = std::move(p);
        }

        PropertySnapshot rec;
        rec.properties["decision"] = decision_name;
        rec.properties["kind"] = std::string(tuner::to_string(decision->kind));
        rec.properties["old_gamma"] = old_gamma;
        rec.properties["new_gamma"] = decision->new_lambda.gamma;
        rec.properties["max_r"] = tuner_.state().max_r;
        rec.properties["max_gamma"] = tuner_.state().max_lambda.gamma;
        rec.properties["r_win"] = window.r_win;
        rec.properties["window_index"] = static_cast<std::int64_t>(window_index);
        rec.properties["first_episode"] = static_cast<std::int64_t>(first);
        rec.properties["last_episode"] = static_cast<std::int64_t>(last_episode);
        rec.properties["effective_episode"] = static_cast<std::int64_t>(effective);
        rec.properties["published"] = publish;
        rec.properties["delivered"] = delivered;
        rec.properties["feedback_seq"] = feedback_seq;
        rec.edges["window"] = {changed.id};
        rec.edges["agent"] = {model_.agent_id()};

        std::vector<NodeChange> follow_up;
        follow_up.push_back(NodeChange::create_node(graph.reserve_id(), NodeKind::TuningRecord, std::move(rec)));
        if (publish && delivered && changes_gamma) {
            PropertySnapshot agent;
            agent.properties["gamma"] = decision->new_lambda.gamma;
            follow_up.push_back(NodeChange::update(model_.agent_id(), std::move(agent)));
        }
        graph.defer_commit(info.timepoint + 1, std::move(follow_up));
        ++records_;
    }
    return published;
}

// ---------------------------------------------------------------- readers

std::vector<TuningRow> tuning_trajectory(const TemporalGraph& graph) {
    std::vector<TuningRow> rows;
    for (NodeId id : graph.nodes_of_kind(NodeKind::TuningRecord)) {
        const auto created = graph.version_timepoints(id).front();
        const NodeState s = graph.node_at(id, created);
        TuningRow r;
        r.timepoint = created;
        r.decision = prop<std::string>(s, "decision");
        r.kind = prop<std::string>(s, "kind");
        r.old_gamma = prop<double>(s, "old_gamma");
        r.new_gamma = prop<double>(s, "new_gamma");
        r.max_r = prop<double>(s, "max_r");
        r.max_gamma = prop<double>(s, "max_gamma");
        r.r_win = prop<double>(s, "r_win");
        r.window_index = static_cast<std::uint64_t>(prop<std::int64_t>(s, "window_index"));
        r.first_episode = static_cast<std::uint64_t>(prop<std::int64_t>(s, "first_episode"));
        r.last_episode = static_cast<std::uint64_t>(prop<std::int64_t>(s, "last_episode"));
        r.effective_episode = static_cast<std::uint64_t>(prop<std::int64_t>(s, "effective_episode"));
        r.published = prop<bool>(s, "published");
        r.delivered = prop<bool>(s, "delivered");
        rows.push_back(std::move(r));
    }
    std::sort(rows.begin(), rows.end(), [](const TuningRow& a, const TuningRow& b) { return a.timepoint < b.timepoint; });
    return rows;
}

std::vector<double> reconstruct_gamma(const TemporalGraph& graph, std::uint64_t episodes) {
    auto agents = graph.nodes_of_kind(NodeKind::RLAgent);
    if (agents.empty()) throw Error(ErrorCode::UnknownNode, "graph has no RLAgent node");
    const auto created = graph.version_timepoints(agents.front()).front();
    const double initial = prop<double>(graph.node_at(agents.front(), created), "gamma");

    std::vector<double> gamma(episodes, initial);
    for (const auto& row : tuning_trajectory(graph)) {
        if (!row.published || !row.delivered) continue;
        for (std::uint64_t e = row.effective_episode; e < episodes; ++e) gamma[e] = row.new_gamma;
    }
    return gamma;
}

}  // namespace histune::graph
