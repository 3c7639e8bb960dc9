#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "histune/wire.hpp"

namespace histune::bus {

using Clock = std::function<std::int64_t()>;

/// Milliseconds since the Unix epoch.
std::int64_t system_clock_ms();

/// Consumer side of one subscription. Owned by a single consumer.
class MessageStream {
public:
    virtual ~MessageStream() = default;

    /// Blocks until a message arrives. nullopt means end-of-bus: the broker
    /// closed (or the stream was cancelled) and everything queued before
    /// that has been delivered.
    virtual std::optional<Envelope> next() = 0;

    /// Like next() but gives up after `timeout`; nullopt then means either
    /// nothing arrived or end-of-bus, see ended().
    virtual std::optional<Envelope> next_for(std::chrono::milliseconds timeout) = 0;

    /// Non-blocking.
    virtual std::optional<Envelope> poll() = 0;

    /// True once end-of-bus was signalled and the queue is drained.
    virtual bool ended() const = 0;

    /// Ends the stream from any thread; blocked next() calls return nullopt.
    virtual void cancel() = 0;
};

/// Anything components can publish to and subscribe from: the in-process
/// Broker or a TcpBusClient talking to a remote one.
class EventBus {
public:
    virtual ~EventBus() = default;

    /// Validates the payload against the topic schema, assigns the next
    /// per-topic sequence number and enqueues it for every current
    /// subscriber. Throws Error(BusClosed) or Error(SchemaViolation).
    virtual std::uint64_t publish(std::string_view topic, Payload payload) = 0;

    /// Delivers messages published after this call returns. No replay.
    virtual std::unique_ptr<MessageStream> subscribe(std::string_view topic) = 0;

    virtual void close() = 0;
    virtual bool closed() const = 0;
};

/// Bounded FIFO shared between a broker and one subscriber.
class SubscriberQueue {
public:
    explicit SubscriberQueue(std::size_t capacity) : capacity_(capacity) {}

    /// Blocks while full. Returns false if the queue was closed or detached
    /// before the message could be enqueued.
    bool push(Envelope env);
    std::optional<Envelope> pop(std::optional<std::chrono::milliseconds> timeout);
    std::optional<Envelope> try_pop();
    bool drained_and_closed() const;
    void close();
    /// Consumer went away; wake any blocked publisher.
    void detach();
    bool detached() const;

private:
    mutable std::mutex mu_;
    std::condition_variable not_empty_;
    std::condition_variable not_full_;
    std::deque<Envelope> items_;
    std::size_t capacity_;
    bool closed_ = false;
    bool detached_ = false;
};

class QueueStream : public MessageStream {
public:
    explicit QueueStream(std::shared_ptr<SubscriberQueue> queue) : queue_(std::move(queue)) {}
    ~QueueStream() override { queue_->detach(); }

    std::optional<Envelope> next() override { return queue_->pop(std::nullopt); }
    std::optional<Envelope> next_for(std::chrono::milliseconds timeout) override { return queue_->pop(timeout); }
    std::optional<Envelope> poll() override { return queue_->try_pop(); }
    bool ended() const override { return queue_->drained_and_closed(); }
    void cancel() override { queue_->close(); }

private:
    std::shared_ptr<SubscriberQueue> queue_;
};

struct BrokerOptions {
    std::size_t queue_capacity = 65536;
    Clock clock = system_clock_ms;
};

/// In-process topic hub. Safe for concurrent publishers and subscribers;
/// ordering is total per topic and identical for every subscriber.
class Broker : public EventBus {
public:
    explicit Broker(BrokerOptions options = {});
    ~Broker() override;

    Broker(const Broker&) = delete;
    Broker& operator=(const Broker&) = delete;

    std::uint64_t publish(std::string_view topic, Payload payload) override;
    std::unique_ptr<MessageStream> subscribe(std::string_view topic) override;
    void close() override;
    bool closed() const override;

    std::size_t subscriber_count(std::string_view topic) const;

private:
    struct TopicState {
        std::mutex mu;
        std::uint64_t next_seq = 0;
        std::vector<std::weak_ptr<SubscriberQueue>> subscribers;
    };

    std::shared_ptr<TopicState> topic_state(std::string_view topic);

    BrokerOptions options_;
    mutable std::mutex mu_;
    bool closed_ = false;
    std::map<std::string, std::shared_ptr<TopicState>, std::less<>> topics_;
    std::vector<std::weak_ptr<SubscriberQueue>> all_queues_;
};

}  // namespace histune::bus
