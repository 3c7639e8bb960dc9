#include <vector>

#include "batch_oracle.hpp"
#include "doctest.h"
#include "histune/error.hpp"
#include "histune/stream_engine.hpp"

using namespace histune;
using namespace histune::cep;

namespace {

TraceEvent step(std::uint64_t episode, std::uint64_t s, double reward, double gamma = 0.5) {
    TraceEvent t;
    t.agent = "a";
    t.episode = episode;
    t.step = s;
    t.reward = reward;
    t.action = "up";
    t.state = "1,2";
    t.qvalues = {0.5, 0.25};
    t.gamma = gamma;
    return t;
}

/// One-step episodes carrying the given averages.
std::vector<ComplexEvent> feed_averages(StreamEngine& engine, const std::vector<double>& values) {
    std::vector<ComplexEvent> out;
    for (std::size_t e = 0; e < values.size(); ++e) {
        auto got = engine.on_trace(step(e, 0, values[e]));
        out.insert(out.end(), got.begin(), got.end());
    }
    auto tail = engine.flush_end_of_run();
    out.insert(out.end(), tail.begin(), tail.end());
    return out;
}

std::size_t count(const std::vector<ComplexEvent>& events, ComplexKind kind) {
    std::size_t n = 0;
    for (const auto& e : events) n += e.kind == kind;
    return n;
}

}  // namespace

TEST_CASE("episode closes on the first event of the next episode") {
    StreamEngine engine(build_listing1_pattern(3, 2));
    CHECK(engine.on_trace(step(0, 0, 1)).empty());
    CHECK(engine.on_trace(step(0, 1, 1)).empty());
    CHECK(engine.on_trace(step(0, 2, 1)).empty());
    auto out = engine.on_trace(step(1, 0, 4));
    REQUIRE(out.size() == 1);
    CHECK(out[0].kind == ComplexKind::EpisodeAvg);
    CHECK(out[0].episode == 0);
    CHECK(out[0].value == 1.0);
}

TEST_CASE("worked example window is stable") {
    StreamEngine engine(build_listing1_pattern(3, 2));
    auto out = feed_averages(engine, {1, 2, 3});
    REQUIRE(out.size() == 5);
    CHECK(out[2].kind == ComplexKind::EpisodeAvg);
    CHECK(out[3].kind == ComplexKind::WindowAvg);
    CHECK(out[3].value == 2.0);
    CHECK(out[3].window_index == 0u);
    CHECK(out[4].kind == ComplexKind::StableWindow);
    CHECK(out[4].members == std::vector<double>{1, 2, 3});
}

TEST_CASE("unstable window emits no StableWindow") {
    StreamEngine engine(build_listing1_pattern(3, 2));
    auto out = feed_averages(engine, {0, 0, 10});
    REQUIRE(count(out, ComplexKind::WindowAvg) == 1);
    CHECK(out.back().kind == ComplexKind::WindowAvg);
    CHECK(out.back().value == doctest::Approx(10.0 / 3.0));
    CHECK(count(out, ComplexKind::StableWindow) == 0);
}

TEST_CASE("emission order within a call") {
    StreamEngine engine(build_listing1_pattern(2, 100));
    engine.on_trace(step(0, 0, 1));
    engine.on_trace(step(1, 0, 1));
    auto out = engine.on_trace(step(2, 0, 1));
    REQUIRE(out.size() == 3);
    CHECK(out[0].kind == ComplexKind::EpisodeAvg);
    CHECK(out[1].kind == ComplexKind::WindowAvg);
    CHECK(out[2].kind == ComplexKind::StableWindow);
}

TEST_CASE("flush closes the open episode and drops partial windows") {
    StreamEngine engine(build_listing1_pattern(3, 2));
    for (std::uint64_t s = 0; s < 5; ++s) engine.on_trace(step(0, s, 2));
    engine.on_trace(step(1, 0, 2));
    auto tail = engine.flush_end_of_run();
    REQUIRE(tail.size() == 1);
    CHECK(tail[0].kind == ComplexKind::EpisodeAvg);
    CHECK(tail[0].episode == 1);
    CHECK(engine.flush_end_of_run().empty());
}

TEST_CASE("100 episodes with x = 3 give 33 windows") {
    StreamEngine engine(build_listing1_pattern(3, 30));
    std::vector<ComplexEvent> out;
    for (std::uint64_t e = 0; e < 100; ++e)
        for (std::uint64_t s = 0; s < 7; ++s) {
            auto got = engine.on_trace(step(e, s, static_cast<double>((e * 7 + s) % 11)));
            out.insert(out.end(), got.begin(), got.end());
        }
    auto tail = engine.flush_end_of_run();
    out.insert(out.end(), tail.begin(), tail.end());
    CHECK(count(out, ComplexKind::EpisodeAvg) == 100);
    CHECK(count(out, ComplexKind::WindowAvg) == 33);
    CHECK(count(out, ComplexKind::StableWindow) <= 33);
}

TEST_CASE("x = 1 fires on every window") {
    StreamEngine engine(build_listing1_pattern(1, 1e-9));
    auto out = feed_averages(engine, {3, 9, 27, 81});
    CHECK(count(out, ComplexKind::StableWindow) == 4);
}

TEST_CASE("ordering violations") {
    StreamEngine engine(build_listing1_pattern(3, 2));
    engine.on_trace(step(1, 3, 1));
    try {
        engine.on_trace(step(1, 3, 1));
        FAIL("duplicate position accepted");
    } catch (const histune::Error& e) {
        CHECK(e.code() == histune::ErrorCode::OrderingViolation);
    }
    CHECK_THROWS_AS(engine.on_trace(step(1, 2, 1)), histune::Error);
    CHECK_THROWS_AS(engine.on_trace(step(0, 9, 1)), histune::Error);
    CHECK_NOTHROW(engine.on_trace(step(2, 0, 1)));
}

TEST_CASE("pattern validation") {
    CHECK_THROWS_AS(build_listing1_pattern(0, 1), histune::Error);
    CHECK_THROWS_AS(build_listing1_pattern(3, 0), histune::Error);
    auto p = build_listing1_pattern(3, 30);
    CHECK(p.kind == PatternKind::EpisodeAggregate);
    REQUIRE(p.downstream.size() == 1);
    CHECK(p.downstream[0].kind == PatternKind::WindowAggregate);
    CHECK(p.downstream[0].window_length == 3);
    REQUIRE(p.downstream[0].downstream.size() == 1);
    CHECK(p.downstream[0].downstream[0].kind == PatternKind::StableGate);
    CHECK(p.downstream[0].downstream[0].th_stable == 30);
}

TEST_CASE("episode-only pattern emits only episode averages") {
    PatternNode only;
    only.kind = PatternKind::EpisodeAggregate;
    StreamEngine engine(only);
    auto out = feed_averages(engine, {1, 2, 3, 4});
    CHECK(out.size() == 4);
    CHECK(count(out, ComplexKind::EpisodeAvg) == 4);
}

TEST_CASE("streaming equals batch recomputation") {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t x = 1 + uniform_index(rng, 10);
        const double th = uniform_in(rng, 0.01, 5.0);
        const auto trace = testgen::random_trace(rng, 5 + uniform_index(rng, 60), 8, 10.0);
        CHECK(testgen::same_events(testgen::stream_complex_events(trace, x, th),
                                   testgen::batch_complex_events(trace, x, th)));
    }
}

TEST_CASE("complex events round-trip through payloads") {
    ComplexEvent s;
    s.kind = ComplexKind::StableWindow;
    s.episode = 9;
    s.window_index = 3;
    s.value = 2.5;
    s.members = {2, 2.5, 3};
    s.gamma = 0.7;
    CHECK(ComplexEvent::from_payload(s.to_payload()) == s);
    const TraceEvent t = step(4, 2, 1.5);
    const TraceEvent back = TraceEvent::from_payload(t.to_payload());
    CHECK(back.agent == t.agent);
    CHECK(back.reward == t.reward);
    CHECK(back.qvalues == t.qvalues);
    CHECK(back.state == t.state);
}
