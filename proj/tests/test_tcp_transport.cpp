#include <chrono>
#include <cstdlib>
#include <thread>
#include <vector>

#include "doctest.h"
#include "histune/error.hpp"
#include "histune/tcp_transport.hpp"

using namespace histune;
using namespace histune::bus;
using namespace std::chrono_literals;

namespace {

Payload feedback(double v, std::uint64_t episode) {
    return Payload{{"kind", "set_hyperparameter"}, {"name", "gamma"}, {"value", v},
                   {"effective_episode", episode}, {"decision", "increment"}};
}

struct Served {
    Broker broker;
    TcpBusServer server{broker, BusAddress{"127.0.0.1", 0}};
    Served() { server.start(); }
    BusAddress address() const { return {"127.0.0.1", server.port()}; }
};

}  // namespace

TEST_CASE("address parsing") {
    auto a = parse_bus_address("10.0.0.2:9000");
    CHECK(a.host == "10.0.0.2");
    CHECK(a.port == 9000);
    CHECK(a.to_string() == "10.0.0.2:9000");
    CHECK_THROWS_AS(parse_bus_address("nohost"), Error);
    CHECK_THROWS_AS(parse_bus_address("h:99999"), Error);
    CHECK_THROWS_AS(parse_bus_address("h:x"), Error);

    setenv("HISTUNE_BUS_ADDR", "127.0.0.1:7001", 1);
    CHECK(default_bus_address().port == 7001);
    unsetenv("HISTUNE_BUS_ADDR");
    CHECK(default_bus_address().port == 7878);
}

TEST_CASE("publish over tcp reaches in-process and remote subscribers") {
    Served s;
    TcpBusClient client(s.address());
    auto local = s.broker.subscribe(kFeedbackTopic);
    auto remote = client.subscribe(kFeedbackTopic);
    CHECK(client.publish(kFeedbackTopic, feedback(0.3, 1)) == 0);
    CHECK(s.broker.publish(kFeedbackTopic, feedback(0.4, 2)) == 1);

    for (auto* stream : {local.get(), remote.get()}) {
        auto a = stream->next_for(2000ms);
        auto b = stream->next_for(2000ms);
        REQUIRE(a.has_value());
        REQUIRE(b.has_value());
        CHECK(a->seq == 0);
        CHECK(a->payload == feedback(0.3, 1));
        CHECK(b->seq == 1);
        CHECK(b->payload == feedback(0.4, 2));
    }
}

TEST_CASE("remote schema violations surface at the publisher") {
    Served s;
    TcpBusClient client(s.address());
    try {
        client.publish(kFeedbackTopic, Payload{{"kind", "set_hyperparameter"}});
        FAIL("accepted an invalid payload");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::SchemaViolation);
    }
    // The channel stays usable.
    CHECK(client.publish(kFeedbackTopic, feedback(0.5, 0)) == 0);
}

TEST_CASE("ordering over tcp with concurrent remote producers") {
    Served s;
    TcpBusClient reader(s.address());
    auto stream = reader.subscribe("load");
    constexpr int kProducers = 3;
    constexpr int kEach = 500;
    std::vector<std::thread> producers;
    for (int p = 0; p < kProducers; ++p) {
        producers.emplace_back([&, p] {
            TcpBusClient c(s.address());
            for (int i = 0; i < kEach; ++i) c.publish("load", Payload{{"p", p}, {"i", i}});
        });
    }
    std::vector<int> next(kProducers, 0);
    for (int n = 0; n < kProducers * kEach; ++n) {
        auto m = stream->next_for(5000ms);
        REQUIRE(m.has_value());
        CHECK(m->seq == static_cast<std::uint64_t>(n));
        const int p = m->payload["p"];
        CHECK(m->payload["i"].get<int>() == next[p]++);
    }
    for (auto& t : producers) t.join();
}

TEST_CASE("closing the server ends remote streams") {
    Served s;
    TcpBusClient client(s.address());
    auto stream = client.subscribe("t");
    s.broker.publish("t", Payload{{"x", 1}});
    s.broker.close();
    s.server.stop();
    auto first = stream->next_for(2000ms);
    REQUIRE(first.has_value());
    auto end = stream->next_for(2000ms);
    CHECK_FALSE(end.has_value());
    CHECK(stream->ended());
}

TEST_CASE("port in use and unreachable broker") {
    Served s;
    Broker other;
    TcpBusServer clash(other, s.address());
    try {
        clash.start();
        FAIL("bound a port already in use");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Transport);
    }
    const BusAddress dead{"127.0.0.1", s.server.port()};
    s.server.stop();
    TcpBusClient client(dead);
    CHECK_THROWS_AS(client.publish("t", Payload{{"x", 1}}), Error);
}
