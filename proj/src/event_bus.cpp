#include "histune/event_bus.hpp"

#include <algorithm>

#include "histune/error.hpp"

namespace histune::bus {

std::int64_t system_clock_ms() {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

bool SubscriberQueue::push(Envelope env) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_ || closed_ || detached_; });
    if (closed_ || detached_) return false;
    items_.push_back(std::move(env));
    not_empty_.notify_one();
    return true;
}

std::optional<Envelope> SubscriberQueue::pop(std::optional<std::chrono::milliseconds> timeout) {
    std::unique_lock lock(mu_);
    auto ready = [&] { return !items_.empty() || closed_; };
    if (timeout) {
        if (!not_empty_.wait_for(lock, *timeout, ready)) return std::nullopt;
    } else {
        not_empty_.wait(lock, ready);
    }
    if (items_.empty()) return std::nullopt;
    Envelope env = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return env;
}

std::optional<Envelope> SubscriberQueue::try_pop() {
    std::lock_guard lock(mu_);
    if (items_.empty()) return std::nullopt;
    Envelope env = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return env;
}

bool SubscriberQueue::drained_and_closed() const {
    std::lock_guard lock(mu_);
    return closed_ && items_.empty();
}

void SubscriberQueue::close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
}

void SubscriberQueue::detach() {
    std::lock_guard lock(mu_);
    detached_ = true;
    items_.clear();
    not_full_.notify_all();
}

bool SubscriberQueue::detached() const {
    std::lock_guard lock(mu_);
    return detached_;
}

Broker::Broker(BrokerOptions options) : options_(std::move(options)) {
    if (options_.queue_capacity == 0) throw Error(ErrorCode::InvalidArgument, "queue capacity must be positive");
    if (!options_.clock) options_.clock = system_clock_ms;
}

Broker::~Broker() { close(); }

std::shared_ptr<Broker::TopicState> Broker::topic_state(std::string_view topic) {
    std::lock_guard lock(mu_);
    if (closed_) throw Error(ErrorCode::BusClosed, "bus closed");
    auto it = topics_.find(topic);
    if (it == topics_.end()) it = topics_.emplace(std::string(topic), std::make_shared<TopicState>()).first;
    return it->second;
}

std::uint64_t Broker::publish(std::string_view topic, Payload payload) {
    validate_payload(topic, payload);
    auto state = topic_state(topic);

    std::lock_guard lock(state->mu);
    // Re-check under the topic lock so a concurrent close() cannot slip a
    // sequence number past subscribers that were already closed.
    if (closed()) throw Error(ErrorCode::BusClosed, "bus closed");

    Envelope env{std::string(topic), state->next_seq, options_.clock(), std::move(payload)};
    std::vector<std::shared_ptr<SubscriberQueue>> live;
    live.reserve(state->subscribers.size());
    for (auto& weak : state->subscribers)
        if (auto q = weak.lock(); q && !q->detached()) live.push_back(std::move(q));
    state->subscribers.assign(live.begin(), live.end());

    for (std::size_t i = 0; i < live.size(); ++i) {
        const bool last = i + 1 == live.size();
        if (!live[i]->push(last ? std::move(env) : env) && closed())
            throw Error(ErrorCode::BusClosed, "bus closed");
    }
    return state->next_seq++;
}

std::unique_ptr<MessageStream> Broker::subscribe(std::string_view topic) {
    validate_topic(topic);
    auto state = topic_state(topic);
    auto queue = std::make_shared<SubscriberQueue>(options_.queue_capacity);
    {
        std::lock_guard lock(state->mu);
        state->subscribers.push_back(queue);
    }
    {
        std::lock_guard lock(mu_);
        if (closed_) {
            queue->close();
        } else {
            std::erase_if(all_queues_, [](const auto& w) { return w.expired(); });
            all_queues_.push_back(queue);
        }
    }
    return std::make_unique<QueueStream>(std::move(queue));
}

void Broker::close() {
    std::vector<std::weak_ptr<SubscriberQueue>> queues;
    {
        std::lock_guard lock(mu_);
        if (closed_) return;
        closed_ = true;
        queues.swap(all_queues_);
    }
    // Closing the queues is what wakes publishers blocked on a full one.
    for (auto& weak : queues)
        if (auto q = weak.lock()) q->close();
}

bool Broker::closed() const {
    std::lock_guard lock(mu_);
    return closed_;
}

std::size_t Broker::subscriber_count(std::string_view topic) const {
    std::shared_ptr<TopicState> state;
    {
        std::lock_guard lock(mu_);
        auto it = topics_.find(topic);
        if (it == topics_.end()) return 0;
        state = it->second;
    }
    std::lock_guard lock(state->mu);
    return static_cast<std::size_t>(std::count_if(state->subscribers.begin(), state->subscribers.end(),
                                                  [](const auto& w) { return !w.expired(); }));
}

}  // namespace histune::bus
