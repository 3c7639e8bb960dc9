#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "histune/stream_engine.hpp"
#include "histune/temporal_graph.hpp"
#include "histune/tuner.hpp"
#include "histune/wire.hpp"

namespace histune::graph {

/// How much of the raw trace stream becomes RLDecision nodes.
enum class TraceRecording { None, Summary, Full };

const char* to_string(TraceRecording r);
/// Throws Error(Config).
TraceRecording trace_recording_from_string(const std::string& text);

/// Timepoints derive from history-awareness sequence numbers: ingest commits
/// land on even timepoints, listener follow-ups on the odd one after, and the
/// bootstrap commit on 0.
inline Timepoint ingest_timepoint(std::uint64_t seq) { return 2 * static_cast<Timepoint>(seq + 1); }

struct HistoryModelOptions {
    std::string agent_name = "swarm";
    double initial_gamma = 0.5;
    TraceRecording recording = TraceRecording::Summary;
};

/// Maps complex events (and optionally per-episode traces) onto the RL
/// metamodel: Log, RLAgent, Measure, Measurement, RLDecision, RLState,
/// RLObservation, Reward, QValue.
class HistoryModel {
public:
    HistoryModel(TemporalGraph& graph, HistoryModelOptions options);

    /// Commits the event at ingest_timepoint(seq). EpisodeAvg also records
    /// the episode's decisions per the recording mode. Throws
    /// Error(SchemaViolation) for inconsistent events.
    CommitInfo ingest_complex_event(const cep::ComplexEvent& event, std::uint64_t seq, std::int64_t ts,
                                    std::span<const cep::TraceEvent> episode_traces = {});

    TemporalGraph& graph() { return graph_; }
    const HistoryModelOptions& options() const { return options_; }
    NodeId log_id() const { return log_; }
    NodeId agent_id() const { return agent_; }
    NodeId measure_id(cep::ComplexKind kind) const;

private:
    void record_decision(std::vector<NodeChange>& changes, const cep::TraceEvent& trace);

    TemporalGraph& graph_;
    HistoryModelOptions options_;
    NodeId log_ = 0;
    NodeId agent_ = 0;
    NodeId episode_measure_ = 0;
    NodeId window_measure_ = 0;
    NodeId stable_measure_ = 0;
};

/// Graph listener that runs the tuner on every committed stable-window
/// Measurement, records a TuningRecord at the following timepoint and
/// publishes feedback when gamma changes or a new maximum is recorded.
class TunerListener {
public:
    /// Publishes a feedback payload and returns its sequence number; throws
    /// when delivery fails.
    using FeedbackSink = std::function<std::uint64_t(const bus::Payload&)>;

    TunerListener(HistoryModel& model, tuner::TunerConfig config, std::uint64_t seed, FeedbackSink sink);

    /// Listener body; returns the feedback payload when one was published
    /// (or attempted).
    std::optional<bus::Payload> on_commit(const CommitInfo& info);

    const tuner::TunerState& state() const { return tuner_.state(); }
    std::uint64_t feedback_attempted() const { return attempted_; }
    std::uint64_t tuning_records() const { return records_; }

private:
    HistoryModel& model_;
    tuner::Tuner tuner_;
    FeedbackSink sink_;
    std::uint64_t attempted_ = 0;
    std::uint64_t records_ = 0;
};

/// One row of the tuning trajectory read back from a graph.
struct TuningRow {
    Timepoint timepoint = 0;
    std::string decision;
    std::string kind;
    double old_gamma = 0.0;
    double new_gamma = 0.0;
    double max_r = 0.0;
    double max_gamma = 0.0;
    double r_win = 0.0;
    std::uint64_t window_index = 0;
    std::uint64_t first_episode = 0;
    std::uint64_t last_episode = 0;
    std::uint64_t effective_episode = 0;
    bool published = false;
    bool delivered = false;
};

std::vector<TuningRow> tuning_trajectory(const TemporalGraph& graph);

/// Per-episode gamma implied by the initial RLAgent gamma and every
/// delivered feedback in the TuningRecord history.
std::vector<double> reconstruct_gamma(const TemporalGraph& graph, std::uint64_t episodes);

}  // namespace histune::graph
