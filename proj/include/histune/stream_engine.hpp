#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "histune/tuner.hpp"
#include "histune/wire.hpp"

namespace histune::cep {

/// One simple event: a single agent step.
struct TraceEvent {
    std::string agent;
    std::uint64_t episode = 0;
    std::uint64_t step = 0;
    double reward = 0.0;
    std::string action;
    std::string state;
    std::vector<double> qvalues;
    double gamma = 0.0;

    bus::Payload to_payload() const;
    /// Expects a payload already validated against the trace schema.
    static TraceEvent from_payload(const bus::Payload& payload);
};

enum class ComplexKind { EpisodeAvg, WindowAvg, StableWindow };

const char* to_string(ComplexKind k);

struct ComplexEvent {
    ComplexKind kind = ComplexKind::EpisodeAvg;
    /// EpisodeAvg: the episode. Window events: the window's first episode.
    std::uint64_t episode = 0;
    /// Window events only.
    std::optional<std::uint64_t> window_index;
    double value = 0.0;
    /// StableWindow only: the x episode averages.
    std::vector<double> members;
    /// Gamma reported by the last trace of the episode (or window).
    double gamma = 0.0;

    bool operator==(const ComplexEvent&) const = default;

    bus::Payload to_payload() const;
    static ComplexEvent from_payload(const bus::Payload& payload);
};

enum class PatternKind { EpisodeAggregate, WindowAggregate, StableGate };

/// A node of the pattern hierarchy. The engine walks the chain
/// EpisodeAggregate -> WindowAggregate -> StableGate; shorter chains emit
/// only the levels present.
struct PatternNode {
    PatternKind kind = PatternKind::EpisodeAggregate;
    std::size_t window_length = 0;  // WindowAggregate, StableGate
    double th_stable = 0.0;         // StableGate
    std::vector<PatternNode> downstream;
};

/// Episode averages chained into tumbling windows of `x` episodes and a
/// stability gate on each: every window of x consecutive episode averages
/// whose members all sit strictly within th_stable of the window mean.
/// Throws Error(Config) unless x >= 1 and th_stable > 0.
PatternNode build_listing1_pattern(std::size_t x, double th_stable);

/// Incremental evaluator for one agent stream. Single consumer.
class StreamEngine {
public:
    explicit StreamEngine(PatternNode pattern);

    /// Emission order within a call: EpisodeAvg, WindowAvg, StableWindow.
    /// An episode closes when the first event of a later episode arrives.
    /// Throws Error(OrderingViolation) when (episode, step) does not strictly
    /// increase.
    std::vector<ComplexEvent> on_trace(const TraceEvent& event);

    /// Closes the open episode. A trailing partial window is discarded.
    std::vector<ComplexEvent> flush_end_of_run();

    std::size_t window_length() const { return window_length_; }
    double th_stable() const { return th_stable_; }

private:
    void close_episode(std::vector<ComplexEvent>& out);

    bool windows_ = false;
    bool gate_ = false;
    std::size_t window_length_ = 0;
    double th_stable_ = 0.0;

    std::optional<std::pair<std::uint64_t, std::uint64_t>> last_position_;
    std::optional<std::uint64_t> open_episode_;
    tuner::CompensatedSum episode_sum_;
    double episode_gamma_ = 0.0;

    std::vector<tuner::EpisodeAverage> pending_;
    std::uint64_t next_window_index_ = 0;
};

}  // namespace histune::cep
