#pragma once

#include <atomic>
#include <cstdint>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "histune/event_bus.hpp"

namespace histune::bus {

// Stream-socket transport for the bus.
//
// Every connection opens with one handshake line {"op":"sub"|"pub","topic":T}.
// The server answers {"ok":true} once the subscription is registered (so no
// message published after the client sees the answer can be missed) or
// {"error":...} on a bad handshake.
//
// pub: the client then sends envelope lines for topic T. seq and ts are
//      reassigned by the broker; each line is answered by {"ack":seq} or
//      {"error":msg,"code":name}.
// sub: the server streams encoded envelopes of T; closing the socket is the
//      end-of-bus signal.

struct BusAddress {
    std::string host = "127.0.0.1";
    std::uint16_t port = 7878;

    std::string to_string() const { return host + ":" + std::to_string(port); }
};

/// "host:port". Throws Error(Config).
BusAddress parse_bus_address(const std::string& text);

/// HISTUNE_BUS_ADDR when set, otherwise 127.0.0.1:7878.
BusAddress default_bus_address();

/// Serves a Broker over TCP. Port 0 binds an ephemeral port.
class TcpBusServer {
public:
    TcpBusServer(Broker& broker, BusAddress address);
    ~TcpBusServer();

    TcpBusServer(const TcpBusServer&) = delete;
    TcpBusServer& operator=(const TcpBusServer&) = delete;

    /// Binds and starts accepting. Throws Error(Transport) e.g. when the port
    /// is in use.
    void start();
    void stop();
    std::uint16_t port() const { return bound_port_; }

private:
    struct Connection;

    void accept_loop();
    void serve(std::shared_ptr<Connection> conn);

    Broker& broker_;
    BusAddress address_;
    int listen_fd_ = -1;
    std::uint16_t bound_port_ = 0;
    std::atomic<bool> running_{false};
    std::thread acceptor_;
    std::mutex mu_;
    std::list<std::shared_ptr<Connection>> connections_;
    std::list<std::thread> workers_;
};

/// EventBus backed by a remote TcpBusServer. publish() is synchronous: it
/// returns the broker-assigned sequence number from the ack.
class TcpBusClient : public EventBus {
public:
    explicit TcpBusClient(BusAddress address);
    ~TcpBusClient() override;

    std::uint64_t publish(std::string_view topic, Payload payload) override;
    std::unique_ptr<MessageStream> subscribe(std::string_view topic) override;
    void close() override;
    bool closed() const override;

private:
    struct PubChannel;

    BusAddress address_;
    mutable std::mutex mu_;
    bool closed_ = false;
    std::map<std::string, std::shared_ptr<PubChannel>, std::less<>> publishers_;
};

}  // namespace histune::bus
