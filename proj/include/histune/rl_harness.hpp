#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "histune/event_bus.hpp"
#include "histune/random.hpp"

namespace histune::rl {

enum class Action { Up, Down, Left, Right, Stay };
inline constexpr std::size_t kActionCount = 5;

const char* to_string(Action a);

struct Position {
    int x = 0;
    int y = 0;
    bool operator==(const Position&) const = default;
};

struct EnvConfig {
    int width = 12;
    int height = 12;
    int users = 30;
    int agents = 2;
    int coverage_radius = 2;
    /// Side of the square block of cells an agent's position is discretised
    /// to in the Q-table state key.
    int state_bin = 3;
    /// 0 places users uniformly; otherwise users scatter around this many
    /// seeded hotspot centres.
    int hotspots = 3;
    /// Maximum offset (per axis, in cells) of a user from its hotspot.
    int hotspot_spread = 1;
};

struct StepResult {
    std::vector<Position> positions;
    int reward = 0;
};

/// Grid coverage task: agents move one cell per step (clamped at the
/// borders) and the reward is the number of distinct users within
/// Euclidean distance coverage_radius of at least one agent.
class CoverageEnv {
public:
    CoverageEnv(int width, int height, std::vector<Position> users, std::vector<Position> starts, int coverage_radius,
                int state_bin = 1);

    /// Seeded user placement and agent start cells.
    static CoverageEnv generate(const EnvConfig& config, Rng& rng);

    void reset();
    StepResult step(std::span<const Action> actions);

    int covered_users(std::span<const Position> agents) const;
    int width() const { return width_; }
    int height() const { return height_; }
    int max_reward() const { return static_cast<int>(users_.size()); }
    const std::vector<Position>& positions() const { return positions_; }
    const std::vector<Position>& users() const { return users_; }

    /// Joint discretised agent positions packed into one integer.
    std::uint64_t state_key() const;
    std::string state_string() const;

private:
    int width_;
    int height_;
    std::vector<Position> users_;
    std::vector<Position> starts_;
    std::vector<Position> positions_;
    int radius_;
    int bin_;
};

/// Tabular Q-learner over (joint state, own action).
class QAgent {
public:
    using Row = std::array<double, kActionCount>;

    QAgent(double alpha, double gamma, double epsilon, std::uint64_t seed);

    /// Epsilon-greedy; ties among greedy actions break uniformly at random.
    Action choose(std::uint64_t state);

    /// Q(s,a) += alpha * (r + gamma * max_a' Q(s',a') - Q(s,a)). Only (s,a)
    /// changes. Throws Error(NonFinite) rather than storing a non-finite
    /// value.
    double q_update(std::uint64_t s, Action a, double reward, std::uint64_t s_next);

    const Row& row(std::uint64_t state) const;
    double q(std::uint64_t state, Action a) const { return row(state)[static_cast<std::size_t>(a)]; }
    void set_q(std::uint64_t state, Action a, double value);

    double gamma() const { return gamma_; }
    void set_gamma(double gamma) { gamma_ = gamma; }
    double alpha() const { return alpha_; }
    std::size_t table_size() const { return table_.size(); }

    /// FNV-1a over the table in key order.
    std::uint64_t digest() const;

private:
    double alpha_;
    double gamma_;
    double epsilon_;
    Rng rng_;
    std::unordered_map<std::uint64_t, Row> table_;
};

enum class ScheduleKind { Static, GridDecay, RandomEvery };

/// Baseline gamma schedules applied at episode boundaries.
struct BaselineSchedule {
    ScheduleKind kind = ScheduleKind::Static;
    double initial_gamma = 0.9;
    double decay_rate = 0.1;
    std::uint64_t period = 10;
    double lambda_min = 0.01;
    double lambda_max = 0.99;
};

class ScheduleRunner {
public:
    ScheduleRunner(BaselineSchedule schedule, std::uint64_t seed);

    /// Gamma for episode 0.
    double initial();
    /// New gamma when the schedule changes it at `episode`, else nullopt.
    std::optional<double> update_at(std::uint64_t episode);

    /// Closed form of GridDecay: gamma0 - rate * floor(e / period), clamped.
    static double grid_gamma(const BaselineSchedule& s, std::uint64_t episode);

private:
    BaselineSchedule schedule_;
    Rng rng_;
    std::optional<double> initial_;
};

struct Feedback {
    std::string name;
    double value = 0.0;
    std::uint64_t effective_episode = 0;
    std::string decision;
};

/// Holds feedback until its episode boundary.
class FeedbackInbox {
public:
    FeedbackInbox(double lambda_min, double lambda_max) : lambda_min_(lambda_min), lambda_max_(lambda_max) {}

    /// Queues a feedback payload. Unknown hyperparameter names are dropped
    /// with a warning; out-of-bounds values are clamped with a warning.
    void receive(const bus::Payload& payload);

    /// Everything due at the start of `episode` (effective_episode <= episode),
    /// in arrival order. Never retroactive: a late message lands here.
    std::vector<Feedback> due(std::uint64_t episode);

    std::size_t received() const { return received_; }
    std::size_t pending() const { return pending_.size(); }
    const std::vector<std::string>& warnings() const { return warnings_; }

private:
    double lambda_min_;
    double lambda_max_;
    std::vector<Feedback> pending_;
    std::vector<std::string> warnings_;
    std::size_t received_ = 0;
};

struct EpisodeRecord {
    std::uint64_t episode = 0;
    double mean_reward = 0.0;
    double gamma = 0.0;
    /// ';'-joined decisions applied at the start of this episode.
    std::string decision_events;
};

struct RunLog {
    std::vector<EpisodeRecord> episodes;
    std::string q_digest;
    std::uint64_t traces_published = 0;
    std::vector<std::string> warnings;

    /// episode,mean_reward,gamma,decision_events
    void write_csv(std::ostream& out) const;
    std::string csv() const;
};

struct HarnessConfig {
    EnvConfig env;
    std::uint64_t episodes = 100;
    std::uint64_t steps_per_episode = 50;
    double alpha = 0.5;
    double agent_epsilon = 0.2;
    double initial_gamma = 0.5;
    double lambda_min = 0.01;
    double lambda_max = 0.99;
    std::string agent_name = "swarm";
    std::uint64_t seed = 1;
    /// Baseline schedule; nullopt means gamma follows bus feedback.
    std::optional<BaselineSchedule> schedule;
};

/// Called at each episode boundary with the number of traces published so
/// far; returns how many feedback messages the harness must have received
/// before it proceeds. Lets an orchestrator make feedback timing
/// deterministic. Without it feedback is polled without blocking.
using SyncHook = std::function<std::uint64_t(std::uint64_t traces_published)>;

/// Runs one training lifetime, publishing one trace per joint step on
/// rl-traces and applying feedback (or the baseline schedule) only at
/// episode boundaries. Throws Error(BusClosed) before episode 0 when the bus
/// is unreachable.
RunLog run_training(const HarnessConfig& config, bus::EventBus& bus, const SyncHook& sync = {});

/// Shortest round-trip decimal for CSV output.
std::string format_double(double v);

}  // namespace histune::rl
