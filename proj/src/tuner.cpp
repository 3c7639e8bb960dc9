#include "histune/tuner.hpp"

#include <algorithm>
#include <string>

#include "histune/error.hpp"

namespace histune::tuner {

void TunerConfig::validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::Config, "tuner config: " + what); };
    if (window_length < 1) fail("window_length must be >= 1");
    if (!(th_stable > 0.0)) fail("th_stable must be > 0");
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) fail("epsilon must lie in [0, 1]");
    if (!(step_c > 0.0)) fail("step_c must be > 0");
    if (!(lambda_min < lambda_max)) fail("lambda_min must be < lambda_max");
    if (!(p_random >= 0.0 && p_random <= 1.0)) fail("p_random must lie in [0, 1]");
}

double TunerConfig::clamp(double gamma) const { return std::clamp(gamma, lambda_min, lambda_max); }

const char* to_string(Direction d) {
    switch (d) {
    case Direction::None: return "none";
    case Direction::Up: return "up";
    case Direction::Down: return "down";
    case Direction::Random: return "random";
    }
    return "?";
}

const char* to_string(DecisionKind k) {
    switch (k) {
    case DecisionKind::KeepCurrent: return "keep_current";
    case DecisionKind::NewMaxRecorded: return "new_max";
    case DecisionKind::Explore: return "explore";
    }
    return "?";
}

const char* to_string(ExplorationMove m) {
    switch (m) {
    case ExplorationMove::Random: return "random";
    case ExplorationMove::Increment: return "increment";
    case ExplorationMove::Decrement: return "decrement";
    case ExplorationMove::ReturnToMax: return "return_to_max";
    }
    return "?";
}

TunerState TunerState::initial(const HyperparameterVector& lambda) {
    TunerState s;
    s.max_lambda = lambda;
    s.current_lambda = lambda;
    return s;
}

EpisodeAverage reward_by_episode(std::span<const double> step_rewards, std::uint64_t episode) {
    if (step_rewards.empty()) throw Error(ErrorCode::EmptyEpisode, "empty episode");
    CompensatedSum sum;
    for (double r : step_rewards) sum.add(r);
    return {episode, sum.mean(), sum.count()};
}

WindowSummary reward_by_window(std::span<const EpisodeAverage> episode_averages, std::size_t x,
                               std::uint64_t window_index, const HyperparameterVector& lambda) {
    if (x == 0 || episode_averages.size() != x)
        throw Error(ErrorCode::MalformedWindow,
                    "malformed window: expected " + std::to_string(x) + " episodes, got " +
                        std::to_string(episode_averages.size()));
    for (std::size_t i = 1; i < episode_averages.size(); ++i) {
        if (episode_averages[i].episode != episode_averages[i - 1].episode + 1)
            throw Error(ErrorCode::MalformedWindow,
                        "malformed window: episode " + std::to_string(episode_averages[i].episode) +
                            " does not follow " + std::to_string(episode_averages[i - 1].episode));
    }
    CompensatedSum sum;
    for (const auto& e : episode_averages) sum.add(e.r_e);

    WindowSummary w;
    w.window_index = window_index;
    w.first_episode = episode_averages.front().episode;
    w.episode_averages.assign(episode_averages.begin(), episode_averages.end());
    w.r_win = sum.mean();
    w.lambda_at_window = lambda;
    return w;
}

bool is_stable(const WindowSummary& window, double th_stable) {
    return std::all_of(window.episode_averages.begin(), window.episode_averages.end(),
                       [&](const EpisodeAverage& e) { return std::abs(e.r_e - window.r_win) < th_stable; });
}

namespace {

Direction reverse(Direction d) {
    switch (d) {
    case Direction::Up: return Direction::Down;
    case Direction::Down: return Direction::Up;
    default: return d;
    }
}

}  // namespace

Exploration xi_explore(const TunerState& state, const TunerConfig& config, Rng& rng) {
    Exploration out;
    if (!(uniform01(rng) < config.epsilon)) {
        out.lambda = state.max_lambda;
        out.lambda.gamma = config.clamp(out.lambda.gamma);
        out.move = ExplorationMove::ReturnToMax;
        out.direction = Direction::None;
        return out;
    }

    out.lambda = state.current_lambda;
    if (uniform01(rng) < config.p_random) {
        out.lambda.gamma = config.clamp(uniform_in(rng, config.lambda_min, config.lambda_max));
        out.move = ExplorationMove::Random;
        out.direction = Direction::Random;
        return out;
    }

    Direction dir;
    const bool directed = state.last_direction == Direction::Up || state.last_direction == Direction::Down;
    if (directed && state.last_r_win && state.previous_r_win) {
        dir = *state.last_r_win > *state.previous_r_win ? state.last_direction : reverse(state.last_direction);
    } else {
        dir = uniform01(rng) < 0.5 ? Direction::Up : Direction::Down;
    }

    if (dir == Direction::Up) {
        out.lambda.gamma = config.clamp(state.current_lambda.gamma + config.step_c);
        out.move = ExplorationMove::Increment;
    } else {
        out.lambda.gamma = config.clamp(state.current_lambda.gamma - config.step_c);
        out.move = ExplorationMove::Decrement;
    }
    out.direction = dir;
    return out;
}

std::pair<TunerState, TuningDecision> hpo_step(const TunerState& state, const WindowSummary& stable_window,
                                               const TunerConfig& config, Rng& rng) {
    TunerState next = state;
    next.windows_seen += 1;
    next.previous_r_win = state.last_r_win;
    next.last_r_win = stable_window.r_win;

    TuningDecision decision;
    if (stable_window.r_win > state.max_r) {
        next.max_r = stable_window.r_win;
        next.max_lambda = state.current_lambda;
        decision.kind = DecisionKind::NewMaxRecorded;
        decision.new_lambda = state.current_lambda;
        return {std::move(next), std::move(decision)};
    }

    Exploration e = xi_explore(next, config, rng);
    next.current_lambda = e.lambda;
    next.last_direction = e.direction;
    decision.kind = DecisionKind::Explore;
    decision.new_lambda = e.lambda;
    decision.exploration_move = e.move;
    return {std::move(next), std::move(decision)};
}

Tuner::Tuner(TunerConfig config, HyperparameterVector initial, std::uint64_t seed)
    : config_(config), rng_(seed) {
    config_.validate();
    initial.gamma = config_.clamp(initial.gamma);
    state_ = TunerState::initial(initial);
}

std::optional<TuningDecision> Tuner::observe(const WindowSummary& window) {
    if (!is_stable(window, config_.th_stable)) return std::nullopt;
    return step(window);
}

TuningDecision Tuner::step(const WindowSummary& stable_window) {
    auto [next, decision] = hpo_step(state_, stable_window, config_, rng_);
    state_ = std::move(next);
    return decision;
}

}  // namespace histune::tuner
