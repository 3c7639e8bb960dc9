#include "histune/temporal_graph.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cstring>
#include <unordered_set>

#include "histune/error.hpp"
#include "json.hpp"

namespace histune::graph {

using nlohmann::json;

namespace {

constexpr std::array<char, 8> kMagic{'H', 'T', 'G', 'R', 'A', 'P', 'H', '\0'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::size_t kHeaderSize = kMagic.size() + 4;

constexpr std::array kKindNames{"Log",           "RLAgent", "RLState",     "RLDecision", "RLObservation",
                                "QValue",        "Reward",  "Measurement", "Measure",    "TuningRecord"};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint32_t checksum(const std::string& payload) {
    return static_cast<std::uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size())));
}

json value_to_json(const Value& v) {
    return std::visit([](const auto& x) { return json(x); }, v);
}

Value value_from_json(const json& j) {
    if (j.is_boolean()) return j.get<bool>();
    if (j.is_number_integer()) return j.get<std::int64_t>();
    if (j.is_number_float()) return j.get<double>();
    if (j.is_string()) return j.get<std::string>();
    if (j.is_array()) return j.get<std::vector<double>>();
    throw Error(ErrorCode::CorruptLog, "corrupt log: unsupported property value");
}

json encode_commit(Timepoint t, const std::vector<NodeChange>& changes) {
    json rec = json::object();
    rec["t"] = t;
    json arr = json::array();
    for (const auto& c : changes) {
        json jc = json::object();
        jc["id"] = c.id;
        if (c.create) jc["create"] = to_string(*c.create);
        if (c.end) jc["end"] = true;
        json props = json::object();
        for (const auto& [k, v] : c.delta.properties) props[k] = value_to_json(v);
        json edges = json::object();
        for (const auto& [k, v] : c.delta.edges) edges[k] = v;
        jc["props"] = std::move(props);
        jc["edges"] = std::move(edges);
        arr.push_back(std::move(jc));
    }
    rec["changes"] = std::move(arr);
    return rec;
}

std::pair<Timepoint, std::vector<NodeChange>> decode_commit(const json& rec) {
    std::vector<NodeChange> changes;
    for (const auto& jc : rec.at("changes")) {
        NodeChange c;
        c.id = jc.at("id").get<NodeId>();
        if (jc.contains("create")) c.create = node_kind_from_string(jc["create"].get<std::string>());
        c.end = jc.value("end", false);
        for (const auto& [k, v] : jc.at("props").items()) c.delta.properties.emplace(k, value_from_json(v));
        for (const auto& [k, v] : jc.at("edges").items()) c.delta.edges.emplace(k, v.get<std::vector<NodeId>>());
        changes.push_back(std::move(c));
    }
    return {rec.at("t").get<Timepoint>(), std::move(changes)};
}

}  // namespace

const char* to_string(NodeKind kind) { return kKindNames.at(static_cast<std::size_t>(kind)); }

NodeKind node_kind_from_string(const std::string& name) {
    for (std::size_t i = 0; i < kKindNames.size(); ++i)
        if (name == kKindNames[i]) return static_cast<NodeKind>(i);
    throw Error(ErrorCode::CorruptLog, "corrupt log: unknown node kind '" + name + "'");
}

TemporalGraph::TemporalGraph() = default;

TemporalGraph::TemporalGraph(const std::filesystem::path& log_path, LogMode mode) {
    std::error_code ec;
    const bool exists = std::filesystem::exists(log_path, ec);
    if (exists) replay(log_path);
    else if (mode == LogMode::ReadOnly)
        throw Error(ErrorCode::Io, "cannot open commit log " + log_path.string());
    if (mode == LogMode::ReadOnly) return;

    log_ = std::fopen(log_path.c_str(), "ab");
    if (!log_) throw Error(ErrorCode::Io, "cannot open commit log " + log_path.string() + " for appending");
    if (!exists) {
        std::string header(kMagic.begin(), kMagic.end());
        put_u32(header, kFormatVersion);
        if (std::fwrite(header.data(), 1, header.size(), log_) != header.size() || std::fflush(log_) != 0)
            throw Error(ErrorCode::Io, "cannot write commit log header");
    }
}

TemporalGraph::~TemporalGraph() {
    if (log_) std::fclose(log_);
}

void TemporalGraph::replay(const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw Error(ErrorCode::Io, "cannot open commit log " + path.string());
    std::string data;
    char buf[65536];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) data.append(buf, n);
    std::fclose(f);

    auto corrupt = [&](std::size_t offset, std::size_t record, const std::string& why) {
        throw Error(ErrorCode::CorruptLog, "corrupt log " + path.string() + ": record " + std::to_string(record) +
                                               " at byte offset " + std::to_string(offset) + ": " + why);
    };
    if (data.size() < kHeaderSize || std::memcmp(data.data(), kMagic.data(), kMagic.size()) != 0)
        corrupt(0, 0, "bad header");
    const auto* bytes = reinterpret_cast<const unsigned char*>(data.data());
    if (get_u32(bytes + kMagic.size()) != kFormatVersion) corrupt(0, 0, "unsupported format version");

    std::size_t offset = kHeaderSize;
    std::size_t record = 0;
    while (offset < data.size()) {
        if (data.size() - offset < 8) corrupt(offset, record, "truncated record header");
        const std::uint32_t len = get_u32(bytes + offset);
        const std::uint32_t crc = get_u32(bytes + offset + 4);
        if (data.size() - offset - 8 < len) corrupt(offset, record, "truncated record body");
        std::string payload = data.substr(offset + 8, len);
        if (checksum(payload) != crc) corrupt(offset, record, "checksum mismatch");
        try {
            auto [t, changes] = decode_commit(json::parse(payload));
            apply(t, std::move(changes), false);
        } catch (const json::exception& e) {
            corrupt(offset, record, e.what());
        } catch (const Error& e) {
            corrupt(offset, record, e.what());
        }
        offset += 8 + len;
        ++record;
    }
}

void TemporalGraph::append_record(const std::string& payload) {
    std::string rec;
    put_u32(rec, static_cast<std::uint32_t>(payload.size()));
    put_u32(rec, checksum(payload));
    rec += payload;
    if (std::fwrite(rec.data(), 1, rec.size(), log_) != rec.size() || std::fflush(log_) != 0)
        throw Error(ErrorCode::Io, "cannot append to commit log");
}

NodeId TemporalGraph::reserve_id() {
    std::unique_lock lock(mu_);
    return next_id_++;
}

CommitInfo TemporalGraph::commit(Timepoint timepoint, std::vector<NodeChange> changes) {
    if (dispatch_thread_.load() == std::this_thread::get_id())
        throw Error(ErrorCode::InvalidArgument, "re-entrant commit from a listener; use defer_commit");
    std::lock_guard writer(writer_mu_);
    CommitInfo info = apply(timepoint, std::move(changes), true);
    dispatch(info);
    return info;
}

void TemporalGraph::defer_commit(Timepoint timepoint, std::vector<NodeChange> changes) {
    if (dispatch_thread_.load() != std::this_thread::get_id())
        throw Error(ErrorCode::InvalidArgument, "defer_commit outside listener dispatch");
    deferred_.emplace_back(timepoint, std::move(changes));
}

void TemporalGraph::dispatch(const CommitInfo& first) {
    std::vector<CommitInfo> pending{first};
    for (std::size_t i = 0; i < pending.size(); ++i) {
        const CommitInfo& info = pending[i];
        dispatch_thread_ = std::this_thread::get_id();
        try {
            for (const auto& reg : listeners_) {
                CommitInfo matched{info.timepoint, info.sequence, {}};
                for (const auto& c : info.changed)
                    if (reg.kinds.count(c.kind)) matched.changed.push_back(c);
                if (!matched.changed.empty()) reg.listener(matched);
            }
        } catch (...) {
            dispatch_thread_ = std::thread::id{};
            deferred_.clear();
            throw;
        }
        dispatch_thread_ = std::thread::id{};

        auto queued = std::move(deferred_);
        deferred_.clear();
        for (auto& [t, changes] : queued) pending.push_back(apply(t, std::move(changes), true));
    }
}

CommitInfo TemporalGraph::apply(Timepoint timepoint, std::vector<NodeChange> changes, bool persist) {
    std::unique_lock lock(mu_);
    if (!commits_.empty() && timepoint <= commits_.back())
        throw Error(ErrorCode::TimeRegression, "time regression: commit at " + std::to_string(timepoint) +
                                                   " after " + std::to_string(commits_.back()));

    std::unordered_set<NodeId> seen;
    std::unordered_set<NodeId> created;
    for (const auto& c : changes) {
        if (!seen.insert(c.id).second)
            throw Error(ErrorCode::InvalidArgument, "node " + std::to_string(c.id) + " changed twice in one commit");
        auto it = nodes_.find(c.id);
        if (c.create) {
            if (it != nodes_.end())
                throw Error(ErrorCode::InvalidArgument, "node " + std::to_string(c.id) + " already exists");
            created.insert(c.id);
        } else {
            if (it == nodes_.end()) throw Error(ErrorCode::UnknownNode, "unknown node " + std::to_string(c.id));
            if (it->second.ended_at) throw Error(ErrorCode::NodeEnded, "node " + std::to_string(c.id) + " has ended");
        }
    }
    for (const auto& c : changes) {
        for (const auto& [rel, targets] : c.delta.edges) {
            for (NodeId target : targets) {
                if (created.count(target)) continue;
                auto it = nodes_.find(target);
                if (it == nodes_.end() || it->second.ended_at)
                    throw Error(ErrorCode::UnknownNode, "unknown node " + std::to_string(target) + " as '" + rel +
                                                            "' target of node " + std::to_string(c.id));
            }
        }
    }

    // Copy-on-write: keep only entries that differ from the current state.
    for (auto& c : changes) {
        if (c.create) continue;
        const PropertySnapshot current = fold(nodes_.at(c.id), timepoint);
        std::erase_if(c.delta.properties, [&](const auto& kv) {
            auto it = current.properties.find(kv.first);
            return it != current.properties.end() && it->second == kv.second;
        });
        std::erase_if(c.delta.edges, [&](const auto& kv) {
            auto it = current.edges.find(kv.first);
            return it != current.edges.end() && it->second == kv.second;
        });
    }
    std::erase_if(changes, [](const NodeChange& c) { return !c.create && !c.end && c.delta.empty(); });

    if (persist && log_) append_record(encode_commit(timepoint, changes).dump());

    CommitInfo info;
    info.timepoint = timepoint;
    info.sequence = commits_.size();
    commits_.push_back(timepoint);
    for (auto& c : changes) {
        if (c.create) {
            Node node{*c.create, timepoint, std::nullopt, {}};
            nodes_.emplace(c.id, std::move(node));
            next_id_ = std::max(next_id_, c.id + 1);
        }
        Node& node = nodes_.at(c.id);
        if (c.end) node.ended_at = timepoint;
        stored_entries_ += c.delta.entry_count();
        node.versions.emplace(timepoint, std::move(c.delta));
        info.changed.push_back({c.id, node.kind});
    }
    return info;
}

PropertySnapshot TemporalGraph::fold(const Node& node, Timepoint timepoint) const {
    PropertySnapshot out;
    for (auto it = node.versions.begin(); it != node.versions.end() && it->first <= timepoint; ++it) {
        for (const auto& [k, v] : it->second.properties) out.properties[k] = v;
        for (const auto& [k, v] : it->second.edges) out.edges[k] = v;
    }
    return out;
}

NodeState TemporalGraph::state_of(NodeId id, const Node& node, Timepoint timepoint) const {
    if (timepoint < node.created_at)
        throw Error(ErrorCode::NotYetCreated, "node " + std::to_string(id) + " not yet created at " +
                                                  std::to_string(timepoint));
    NodeState s;
    s.id = id;
    s.kind = node.kind;
    s.created_at = node.created_at;
    s.ended_at = node.ended_at;
    s.ended = node.ended_at && timepoint >= *node.ended_at;
    s.snapshot = fold(node, timepoint);
    return s;
}

const TemporalGraph::Node& TemporalGraph::find(NodeId id) const {
    auto it = nodes_.find(id);
    if (it == nodes_.end()) throw Error(ErrorCode::UnknownNode, "unknown node " + std::to_string(id));
    return it->second;
}

NodeState TemporalGraph::node_at(NodeId id, Timepoint timepoint) const {
    std::shared_lock lock(mu_);
    return state_of(id, find(id), timepoint);
}

std::vector<std::pair<Timepoint, NodeState>> TemporalGraph::history(NodeId id, Timepoint from, Timepoint to) const {
    if (from > to) throw Error(ErrorCode::InvalidArgument, "history range has from > to");
    std::shared_lock lock(mu_);
    const Node& node = find(id);
    std::vector<std::pair<Timepoint, NodeState>> out;
    for (auto it = node.versions.lower_bound(from); it != node.versions.end() && it->first <= to; ++it)
        out.emplace_back(it->first, state_of(id, node, it->first));
    return out;
}

void TemporalGraph::add_listener(std::set<NodeKind> kinds, Listener listener) {
    std::lock_guard writer(writer_mu_);
    listeners_.push_back({std::move(kinds), std::move(listener)});
}

bool TemporalGraph::contains(NodeId id) const {
    std::shared_lock lock(mu_);
    return nodes_.count(id) != 0;
}

NodeKind TemporalGraph::kind_of(NodeId id) const {
    std::shared_lock lock(mu_);
    return find(id).kind;
}

std::vector<NodeId> TemporalGraph::nodes_of_kind(NodeKind kind) const {
    std::shared_lock lock(mu_);
    std::vector<NodeId> out;
    for (const auto& [id, node] : nodes_)
        if (node.kind == kind) out.push_back(id);
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<Timepoint> TemporalGraph::version_timepoints(NodeId id) const {
    std::shared_lock lock(mu_);
    std::vector<Timepoint> out;
    for (const auto& [t, _] : find(id).versions) out.push_back(t);
    return out;
}

std::vector<Timepoint> TemporalGraph::commit_timepoints() const {
    std::shared_lock lock(mu_);
    return commits_;
}

std::optional<Timepoint> TemporalGraph::last_timepoint() const {
    std::shared_lock lock(mu_);
    if (commits_.empty()) return std::nullopt;
    return commits_.back();
}

std::uint64_t TemporalGraph::commit_count() const {
    std::shared_lock lock(mu_);
    return commits_.size();
}

std::size_t TemporalGraph::stored_entry_count() const {
    std::shared_lock lock(mu_);
    return stored_entries_;
}

}  // namespace histune::graph
