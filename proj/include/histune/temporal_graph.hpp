#pragma once

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <variant>
#include <vector>

namespace histune::graph {

using NodeId = std::uint64_t;
using Timepoint = std::int64_t;
using Value = std::variant<bool, std::int64_t, double, std::string, std::vector<double>>;

enum class NodeKind {
    Log,
    RLAgent,
    RLState,
    RLDecision,
    RLObservation,
    QValue,
    Reward,
    Measurement,
    Measure,
    TuningRecord,
};

const char* to_string(NodeKind kind);
/// Throws Error(CorruptLog) for an unknown name.
NodeKind node_kind_from_string(const std::string& name);

/// Properties plus outgoing edges. Edges live on the source node only.
struct PropertySnapshot {
    std::map<std::string, Value> properties;
    std::map<std::string, std::vector<NodeId>> edges;

    bool operator==(const PropertySnapshot&) const = default;
    std::size_t entry_count() const { return properties.size() + edges.size(); }
    bool empty() const { return properties.empty() && edges.empty(); }
};

/// Effective state of a node at some timepoint.
struct NodeState {
    NodeId id = 0;
    NodeKind kind = NodeKind::Log;
    Timepoint created_at = 0;
    std::optional<Timepoint> ended_at;
    /// The query time is at or after ended_at.
    bool ended = false;
    PropertySnapshot snapshot;
};

struct NodeChange {
    NodeId id = 0;
    /// Set when this change creates the node.
    std::optional<NodeKind> create;
    PropertySnapshot delta;
    bool end = false;

    static NodeChange create_node(NodeId id, NodeKind kind, PropertySnapshot delta = {}) {
        return {id, kind, std::move(delta), false};
    }
    static NodeChange update(NodeId id, PropertySnapshot delta) { return {id, std::nullopt, std::move(delta), false}; }
    static NodeChange end_node(NodeId id, PropertySnapshot delta = {}) {
        return {id, std::nullopt, std::move(delta), true};
    }
};

struct ChangedNode {
    NodeId id;
    NodeKind kind;
};

/// What a commit did; also what listeners receive.
struct CommitInfo {
    Timepoint timepoint = 0;
    std::uint64_t sequence = 0;
    std::vector<ChangedNode> changed;
};

using Listener = std::function<void(const CommitInfo&)>;

enum class LogMode { ReadWrite, ReadOnly };

/// Copy-on-write temporal graph. One writer; readers may query concurrently.
///
/// Each node keeps a map timepoint -> delta holding only the entries that
/// changed at that timepoint, so the state at t is the fold of every delta at
/// or before t. With a log path every commit is appended to an on-disk log
/// (replayed on construction) before listeners hear about it.
class TemporalGraph {
public:
    TemporalGraph();
    /// Opens or creates the commit log at `log_path` and replays it. Throws
    /// Error(CorruptLog) with the offending record offset, Error(Io) if the
    /// file cannot be opened.
    explicit TemporalGraph(const std::filesystem::path& log_path, LogMode mode = LogMode::ReadWrite);
    ~TemporalGraph();

    TemporalGraph(const TemporalGraph&) = delete;
    TemporalGraph& operator=(const TemporalGraph&) = delete;

    NodeId reserve_id();

    /// Applies all changes atomically at `timepoint`. Throws
    /// Error(TimeRegression), Error(UnknownNode) for a missing node or
    /// dangling edge target, Error(NodeEnded), Error(InvalidArgument) for a
    /// duplicate id or a commit issued from inside a listener.
    CommitInfo commit(Timepoint timepoint, std::vector<NodeChange> changes);

    /// For listeners: queue a commit to run after the current dispatch.
    void defer_commit(Timepoint timepoint, std::vector<NodeChange> changes);

    /// Throws Error(UnknownNode) or Error(NotYetCreated).
    NodeState node_at(NodeId id, Timepoint timepoint) const;

    /// One entry per version timepoint in [from, to], oldest first.
    std::vector<std::pair<Timepoint, NodeState>> history(NodeId id, Timepoint from, Timepoint to) const;

    /// Listeners run on the committing thread, in registration order, once
    /// per commit that touches one of `kinds`.
    void add_listener(std::set<NodeKind> kinds, Listener listener);

    bool contains(NodeId id) const;
    NodeKind kind_of(NodeId id) const;
    std::vector<NodeId> nodes_of_kind(NodeKind kind) const;
    std::vector<Timepoint> version_timepoints(NodeId id) const;
    std::vector<Timepoint> commit_timepoints() const;
    std::optional<Timepoint> last_timepoint() const;
    std::uint64_t commit_count() const;
    /// Stored property and edge entries summed over every version.
    std::size_t stored_entry_count() const;

private:
    struct Node {
        NodeKind kind;
        Timepoint created_at;
        std::optional<Timepoint> ended_at;
        std::map<Timepoint, PropertySnapshot> versions;
    };

    struct Registered {
        std::set<NodeKind> kinds;
        Listener listener;
    };

    CommitInfo apply(Timepoint timepoint, std::vector<NodeChange> changes, bool persist);
    void dispatch(const CommitInfo& info);
    PropertySnapshot fold(const Node& node, Timepoint timepoint) const;
    NodeState state_of(NodeId id, const Node& node, Timepoint timepoint) const;
    const Node& find(NodeId id) const;
    void replay(const std::filesystem::path& path);
    void append_record(const std::string& payload);

    mutable std::shared_mutex mu_;
    std::unordered_map<NodeId, Node> nodes_;
    std::vector<Timepoint> commits_;
    NodeId next_id_ = 1;
    std::size_t stored_entries_ = 0;

    std::mutex writer_mu_;
    std::vector<Registered> listeners_;
    std::atomic<std::thread::id> dispatch_thread_{};
    std::vector<std::pair<Timepoint, std::vector<NodeChange>>> deferred_;

    std::FILE* log_ = nullptr;
};

}  // namespace histune::graph
