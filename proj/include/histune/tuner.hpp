#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "histune/random.hpp"

namespace histune::tuner {

/// The tuned discount factor plus the hyperparameters held fixed for a run.
struct HyperparameterVector {
    double gamma = 0.5;
    std::map<std::string, double> kappa;

    bool operator==(const HyperparameterVector&) const = default;
};

struct TunerConfig {
    std::size_t window_length = 3;
    double th_stable = 30.0;
    double epsilon = 0.3;
    double step_c = 0.1;
    double lambda_min = 0.01;
    double lambda_max = 0.99;
    /// Share of exploratory moves that jump to a uniform random gamma
    /// instead of stepping by +/- step_c.
    double p_random = 0.2;

    /// Throws Error(Config) when any field is out of range.
    void validate() const;
    double clamp(double gamma) const;
};

enum class Direction { None, Up, Down, Random };

enum class DecisionKind { KeepCurrent, NewMaxRecorded, Explore };

enum class ExplorationMove { Random, Increment, Decrement, ReturnToMax };

const char* to_string(Direction d);
const char* to_string(DecisionKind k);
const char* to_string(ExplorationMove m);

struct TunerState {
    double max_r = 0.0;
    HyperparameterVector max_lambda;
    HyperparameterVector current_lambda;
    Direction last_direction = Direction::None;
    std::uint64_t windows_seen = 0;
    /// r_win of the most recent and the one before it; drives the
    /// direction heuristic.
    std::optional<double> last_r_win;
    std::optional<double> previous_r_win;

    static TunerState initial(const HyperparameterVector& lambda);
};

struct EpisodeAverage {
    std::uint64_t episode = 0;
    double r_e = 0.0;
    /// Steps aggregated; 0 when rebuilt from a complex event that does not
    /// carry the count.
    std::uint64_t step_count = 0;
};

struct WindowSummary {
    std::uint64_t window_index = 0;
    std::uint64_t first_episode = 0;
    std::vector<EpisodeAverage> episode_averages;
    double r_win = 0.0;
    HyperparameterVector lambda_at_window;
};

struct TuningDecision {
    DecisionKind kind = DecisionKind::KeepCurrent;
    HyperparameterVector new_lambda;
    std::optional<ExplorationMove> exploration_move;
};

/// Compensated (Neumaier) running sum.
class CompensatedSum {
public:
    void add(double v) {
        const double t = sum_ + v;
        if (std::abs(sum_) >= std::abs(v))
            comp_ += (sum_ - t) + v;
        else
            comp_ += (v - t) + sum_;
        sum_ = t;
        ++count_;
    }
    double value() const { return sum_ + comp_; }
    std::uint64_t count() const { return count_; }
    double mean() const { return value() / static_cast<double>(count_); }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
    std::uint64_t count_ = 0;
};

/// Mean per-step reward of one episode. Throws Error(EmptyEpisode).
EpisodeAverage reward_by_episode(std::span<const double> step_rewards, std::uint64_t episode = 0);

/// Mean of exactly `x` consecutive episode averages. Throws
/// Error(MalformedWindow) on a wrong count or an episode gap.
WindowSummary reward_by_window(std::span<const EpisodeAverage> episode_averages, std::size_t x,
                               std::uint64_t window_index = 0,
                               const HyperparameterVector& lambda = {});

/// Every |r_e - r_win| strictly below th_stable.
bool is_stable(const WindowSummary& window, double th_stable);

/// Epsilon-greedy choice of the next lambda once a stable window failed to
/// beat max_r. Greedy branch returns max_lambda; the exploratory branch picks
/// Random with probability p_random, otherwise steps by step_c along the
/// remembered direction while it keeps improving r_win and reverses it when
/// it stops. Without a usable direction a fair coin picks up or down.
struct Exploration {
    HyperparameterVector lambda;
    ExplorationMove move = ExplorationMove::ReturnToMax;
    /// Direction to remember for the next exploration.
    Direction direction = Direction::None;
};

Exploration xi_explore(const TunerState& state, const TunerConfig& config, Rng& rng);

/// One HPO evaluation on a stable window. `r_win > max_r` records a new
/// maximum and keeps lambda; anything else (ties included) explores.
std::pair<TunerState, TuningDecision> hpo_step(const TunerState& state,
                                               const WindowSummary& stable_window,
                                               const TunerConfig& config, Rng& rng);

inline HyperparameterVector optimal_lambda(const TunerState& state) { return state.max_lambda; }

/// Stateful convenience wrapper owning config, state and rng.
class Tuner {
public:
    Tuner(TunerConfig config, HyperparameterVector initial, std::uint64_t seed);

    /// Runs hpo_step when the window is stable; returns nullopt otherwise and
    /// leaves the state untouched.
    std::optional<TuningDecision> observe(const WindowSummary& window);
    TuningDecision step(const WindowSummary& stable_window);

    const TunerState& state() const { return state_; }
    const TunerConfig& config() const { return config_; }
    HyperparameterVector optimal() const { return optimal_lambda(state_); }

private:
    TunerConfig config_;
    TunerState state_;
    Rng rng_;
};

}  // namespace histune::tuner
