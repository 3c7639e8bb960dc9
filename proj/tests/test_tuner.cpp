#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "histune/error.hpp"
#include "histune/tuner.hpp"

using namespace histune;
using namespace histune::tuner;

namespace {

std::vector<EpisodeAverage> averages(std::initializer_list<double> values, std::uint64_t first = 0) {
    std::vector<EpisodeAverage> out;
    for (double v : values) out.push_back({first++, v, 1});
    return out;
}

WindowSummary window_of(std::initializer_list<double> values, std::uint64_t first = 0) {
    auto a = averages(values, first);
    return reward_by_window(a, a.size(), first / a.size());
}

/// Plain two-pass mean used as an independent oracle.
double two_pass_mean(const std::vector<double>& v) {
    long double s = 0;
    for (double x : v) s += x;
    const long double m = s / v.size();
    long double corr = 0;
    for (double x : v) corr += x - m;
    return static_cast<double>(m + corr / v.size());
}

TunerConfig config_with(double epsilon, double th = 2.0) {
    TunerConfig c;
    c.th_stable = th;
    c.epsilon = epsilon;
    return c;
}

}  // namespace

TEST_CASE("reward_by_episode means and errors") {
    const std::vector<double> a{1, 2, 3};
    auto e = reward_by_episode(a, 4);
    CHECK(e.r_e == 2.0);
    CHECK(e.step_count == 3);
    CHECK(e.episode == 4);
    const std::vector<double> one{5};
    CHECK(reward_by_episode(one).r_e == 5.0);
    CHECK(reward_by_episode(one).step_count == 1);
    const std::vector<double> none;
    CHECK_THROWS_AS(reward_by_episode(none), Error);
    try {
        reward_by_episode(none);
    } catch (const Error& err) {
        CHECK(err.code() == ErrorCode::EmptyEpisode);
    }
}

TEST_CASE("reward_by_episode matches a two-pass mean") {
    Rng rng(42);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> v(1000);
        const double scale = std::pow(10.0, trial % 7);
        for (double& x : v) x = uniform_in(rng, -scale, scale);
        const double oracle = two_pass_mean(v);
        const double got = reward_by_episode(v).r_e;
        CHECK(std::abs(got - oracle) <= 1e-9 * std::max(1.0, std::abs(oracle)));
    }
}

TEST_CASE("reward_by_window worked values") {
    CHECK(window_of({1, 2, 3}).r_win == 2.0);
    CHECK(window_of({4, 5, 6}, 3).r_win == 5.0);
    CHECK(window_of({7}).r_win == 7.0);
    auto w = window_of({4, 5, 6}, 3);
    CHECK(w.first_episode == 3);
    CHECK(w.window_index == 1);
}

TEST_CASE("reward_by_window rejects malformed windows") {
    auto a = averages({1, 2});
    CHECK_THROWS_AS(reward_by_window(a, 3), Error);
    std::vector<EpisodeAverage> gap{{0, 1, 1}, {2, 2, 1}, {3, 3, 1}};
    try {
        reward_by_window(gap, 3);
        FAIL("expected MalformedWindow");
    } catch (const Error& err) {
        CHECK(err.code() == ErrorCode::MalformedWindow);
    }
}

TEST_CASE("is_stable strict conjunction") {
    CHECK(is_stable(window_of({1, 2, 3}), 2.0));
    CHECK_FALSE(is_stable(window_of({0, 0, 10}), 2.0));
    CHECK(is_stable(window_of({4.25, 4.25, 4.25}), 1e-12));
    // Deviation exactly equal to the threshold is not stable.
    CHECK_FALSE(is_stable(window_of({1, 2, 3}), 1.0));
    CHECK(is_stable(window_of({1, 2, 3}), 1.0000001));
    // A single-episode window is always stable.
    CHECK(is_stable(window_of({123.0}), 1e-9));
}

TEST_CASE("worked example: two stable windows, both new maxima") {
    Tuner t(config_with(0.3, 2.0), {0.5, {}}, 1);
    const std::vector<EpisodeAverage> all = averages({1, 2, 3, 4, 5, 6});
    std::vector<TuningDecision> decisions;
    std::vector<double> r_wins;
    for (std::size_t w = 0; w < 2; ++w) {
        auto win = reward_by_window(std::span(all).subspan(w * 3, 3), 3, w);
        r_wins.push_back(win.r_win);
        auto d = t.observe(win);
        REQUIRE(d.has_value());
        decisions.push_back(*d);
        if (w == 0) CHECK(t.state().max_r == 2.0);
    }
    CHECK(r_wins == std::vector<double>{2.0, 5.0});
    CHECK(decisions[0].kind == DecisionKind::NewMaxRecorded);
    CHECK(decisions[1].kind == DecisionKind::NewMaxRecorded);
    CHECK_FALSE(decisions[0].exploration_move.has_value());
    CHECK(t.state().max_r == 5.0);
    CHECK(t.state().current_lambda.gamma == 0.5);
    CHECK(t.optimal().gamma == 0.5);
}

TEST_CASE("hpo_step branches") {
    Rng rng(3);
    TunerConfig c = config_with(0.0);
    SUBCASE("new max keeps lambda") {
        auto s = TunerState::initial({0.5, {}});
        auto [next, d] = hpo_step(s, window_of({2, 2, 2}), c, rng);
        CHECK(d.kind == DecisionKind::NewMaxRecorded);
        CHECK(next.max_r == 2.0);
        CHECK(next.current_lambda.gamma == 0.5);
        CHECK(next.max_lambda.gamma == 0.5);
    }
    SUBCASE("epsilon zero returns to max") {
        auto s = TunerState::initial({0.7, {}});
        s.max_r = 5.0;
        s.max_lambda.gamma = 0.204;
        auto [next, d] = hpo_step(s, window_of({2, 2, 2}), c, rng);
        CHECK(d.kind == DecisionKind::Explore);
        REQUIRE(d.exploration_move.has_value());
        CHECK(*d.exploration_move == ExplorationMove::ReturnToMax);
        CHECK(next.current_lambda.gamma == 0.204);
        CHECK(next.max_r == 5.0);
    }
    SUBCASE("ties explore") {
        auto s = TunerState::initial({0.5, {}});
        s.max_r = 5.0;
        auto [next, d] = hpo_step(s, window_of({5, 5, 5}), c, rng);
        CHECK(d.kind == DecisionKind::Explore);
        CHECK(next.max_r == 5.0);
    }
}

TEST_CASE("xi_explore clamps at the bounds") {
    TunerConfig c = config_with(1.0);
    c.p_random = 0.0;
    auto s = TunerState::initial({0.98, {}});
    s.last_direction = Direction::Up;
    s.previous_r_win = 1.0;
    s.last_r_win = 2.0;
    Rng rng(9);
    auto e = xi_explore(s, c, rng);
    CHECK(e.move == ExplorationMove::Increment);
    CHECK(e.lambda.gamma == 0.99);

    s.current_lambda.gamma = 0.05;
    s.last_direction = Direction::Down;
    e = xi_explore(s, c, rng);
    CHECK(e.move == ExplorationMove::Decrement);
    CHECK(e.lambda.gamma == 0.01);
}

TEST_CASE("xi_explore direction heuristic") {
    TunerConfig c = config_with(1.0);
    c.p_random = 0.0;
    auto s = TunerState::initial({0.5, {}});
    Rng rng(11);
    s.last_direction = Direction::Up;
    s.previous_r_win = 3.0;
    s.last_r_win = 2.0;  // worsened: reverse
    auto e = xi_explore(s, c, rng);
    CHECK(e.move == ExplorationMove::Decrement);
    CHECK(e.direction == Direction::Down);
    CHECK(e.lambda.gamma == doctest::Approx(0.4).epsilon(1e-15));

    s.last_direction = Direction::Down;
    s.previous_r_win = 1.0;
    s.last_r_win = 2.0;  // improved: keep going
    e = xi_explore(s, c, rng);
    CHECK(e.move == ExplorationMove::Decrement);
}

TEST_CASE("xi_explore move frequencies without history") {
    // eps = 1 and no direction history: Random with p_random, else a fair
    // coin between Increment and Decrement.
    TunerConfig c = config_with(1.0);
    const auto s = TunerState::initial({0.5, {}});
    Rng rng(2024);
    const int n = 10000;
    int counts[4] = {0, 0, 0, 0};
    for (int i = 0; i < n; ++i) {
        auto e = xi_explore(s, c, rng);
        counts[static_cast<int>(e.move)]++;
        CHECK(e.lambda.gamma >= c.lambda_min);
        CHECK(e.lambda.gamma <= c.lambda_max);
    }
    const double expected[4] = {0.2, 0.4, 0.4, 0.0};
    for (int m = 0; m < 4; ++m) {
        const double p = expected[m];
        const double se = std::sqrt(std::max(p * (1 - p), 1e-12) / n);
        CHECK(std::abs(counts[m] / static_cast<double>(n) - p) <= 3 * se);
    }
}

TEST_CASE("xi_explore greedy share is 1 - epsilon") {
    TunerConfig c = config_with(0.3);
    auto s = TunerState::initial({0.5, {}});
    s.max_lambda.gamma = 0.3;
    Rng rng(77);
    const int n = 10000;
    int greedy = 0;
    for (int i = 0; i < n; ++i) greedy += xi_explore(s, c, rng).move == ExplorationMove::ReturnToMax;
    const double se = std::sqrt(0.7 * 0.3 / n);
    CHECK(std::abs(greedy / static_cast<double>(n) - 0.7) <= 3 * se);
}

TEST_CASE("optimal_lambda and replay determinism") {
    Tuner fresh(config_with(0.3), {0.5, {}}, 1);
    CHECK(fresh.optimal().gamma == 0.5);

    auto replay = [](std::uint64_t seed) {
        Tuner t(config_with(0.5, 100.0), {0.5, {}}, seed);
        Rng data(5);
        for (std::uint64_t w = 0; w < 200; ++w) {
            std::vector<EpisodeAverage> a;
            for (std::uint64_t k = 0; k < 3; ++k) a.push_back({w * 3 + k, uniform_in(data, 0, 10), 1});
            t.observe(reward_by_window(a, 3, w, t.state().current_lambda));
        }
        return t.optimal().gamma;
    };
    CHECK(replay(8) == replay(8));
}

TEST_CASE("config validation") {
    TunerConfig c;
    CHECK_NOTHROW(c.validate());
    c.window_length = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = {};
    c.th_stable = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = {};
    c.epsilon = 1.5;
    CHECK_THROWS_AS(c.validate(), Error);
    c = {};
    c.step_c = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = {};
    c.lambda_min = 0.9;
    c.lambda_max = 0.1;
    CHECK_THROWS_AS(c.validate(), Error);
}
