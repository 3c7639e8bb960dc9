#include "histune/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "histune/error.hpp"
#include "histune/event_bus.hpp"
#include "histune/history_model.hpp"
#include "histune/stream_engine.hpp"

namespace histune::experiment {

namespace fs = std::filesystem;

namespace {

/// Counters shared between the pipeline threads plus the first worker error.
class Progress {
public:
    std::uint64_t traces_in = 0;
    std::uint64_t history_out = 0;
    std::uint64_t history_in = 0;
    std::uint64_t feedback_out = 0;
    std::uint64_t stable_windows = 0;
    bool engine_done = false;

    template <typename F>
    void update(F&& f) {
        {
            std::lock_guard lock(mu_);
            f();
        }
        cv_.notify_all();
    }

    /// Blocks until `pred` (evaluated under the lock) holds; rethrows a
    /// worker error instead of waiting forever.
    template <typename P>
    void wait(P&& pred) {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return error_ || pred(); });
        if (error_) std::rethrow_exception(error_);
    }

    void fail(std::exception_ptr e) {
        {
            std::lock_guard lock(mu_);
            if (!error_) error_ = std::move(e);
        }
        cv_.notify_all();
    }

    std::exception_ptr error() const {
        std::lock_guard lock(mu_);
        return error_;
    }

private:
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::exception_ptr error_;
};

/// Buffers raw traces per episode for the graph's decision records. An
/// episode is complete once a later episode shows up or every trace of the
/// run has arrived.
class TraceCollector {
public:
    explicit TraceCollector(bool last_only) : last_only_(last_only) {}

    void add(bus::Payload trace) {
        {
            std::lock_guard lock(mu_);
            const auto e = trace.at("episode").get<std::uint64_t>();
            auto& slot = buffered_[e];
            if (last_only_) slot.clear();
            slot.push_back(std::move(trace));
            ++count_;
            max_episode_ = std::max(max_episode_.value_or(0), e);
        }
        cv_.notify_all();
    }

    void set_total(std::uint64_t total) {
        {
            std::lock_guard lock(mu_);
            total_ = total;
        }
        cv_.notify_all();
    }

    void close() {
        {
            std::lock_guard lock(mu_);
            closed_ = true;
        }
        cv_.notify_all();
    }

    std::vector<cep::TraceEvent> take(std::uint64_t episode) {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] {
            return closed_ || (max_episode_ && *max_episode_ > episode) || (total_ && count_ >= *total_);
        });
        std::vector<cep::TraceEvent> out;
        if (auto it = buffered_.find(episode); it != buffered_.end())
            for (const auto& p : it->second) out.push_back(cep::TraceEvent::from_payload(p));
        buffered_.erase(buffered_.begin(), buffered_.upper_bound(episode));
        return out;
    }

private:
    bool last_only_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::map<std::uint64_t, std::vector<bus::Payload>> buffered_;
    std::uint64_t count_ = 0;
    std::optional<std::uint64_t> max_episode_;
    std::optional<std::uint64_t> total_;
    bool closed_ = false;
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    out << text;
    out.close();
    if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

RunResult run_harness_only(const RunConfig& config) {
    bus::Broker broker;
    RunResult r;
    r.log = rl::run_training(config.harness_config(), broker);
    broker.close();
    return r;
}

}  // namespace

RunResult run_pipeline(const RunConfig& config, const PipelineOptions& options) {
    config.validate();
    const bool history = config.tuner == TunerKind::History;
    if (!options.history_pipeline) {
        if (history) throw Error(ErrorCode::Config, "the history tuner needs the full pipeline");
        return run_harness_only(config);
    }

    // Declaration order is teardown order in reverse: threads are joined
    // before streams, clients, server and broker go away.
    bus::Broker broker;
    std::unique_ptr<bus::TcpBusServer> server;
    std::unique_ptr<bus::EventBus> harness_client, engine_client, graph_client;
    bus::EventBus* harness_bus = &broker;
    bus::EventBus* engine_bus = &broker;
    bus::EventBus* graph_bus = &broker;
    if (options.tcp) {
        server = std::make_unique<bus::TcpBusServer>(broker, options.address);
        server->start();
        const bus::BusAddress bound{options.address.host, server->port()};
        harness_client = std::make_unique<bus::TcpBusClient>(bound);
        engine_client = std::make_unique<bus::TcpBusClient>(bound);
        graph_client = std::make_unique<bus::TcpBusClient>(bound);
        harness_bus = harness_client.get();
        engine_bus = engine_client.get();
        graph_bus = graph_client.get();
    }

    std::unique_ptr<graph::TemporalGraph> graph =
        options.log_path.empty() ? std::make_unique<graph::TemporalGraph>()
                                 : std::make_unique<graph::TemporalGraph>(options.log_path);
    graph::HistoryModel model(*graph, {config.agent_name, config.effective_initial_gamma(), config.trace_recording});

    std::uint64_t delivered = 0;
    std::optional<graph::TunerListener> listener;
    if (history) {
        listener.emplace(model, config.tuner_config(), derive_seed(config.seed, 2), [&](const bus::Payload& p) {
            const auto seq = graph_bus->publish(bus::kFeedbackTopic, p);
            ++delivered;
            return seq;
        });
    }

    const auto pattern = cep::build_listing1_pattern(config.window_length, config.effective_th_stable());
    const bool collect = config.trace_recording != graph::TraceRecording::None;

    // Subscribe everything before the harness publishes its first trace.
    auto engine_in = engine_bus->subscribe(bus::kTraceTopic);
    auto graph_in = graph_bus->subscribe(bus::kHistoryTopic);
    std::unique_ptr<bus::MessageStream> collector_in;
    if (collect) collector_in = graph_bus->subscribe(bus::kTraceTopic);

    Progress progress;
    TraceCollector collector(config.trace_recording == graph::TraceRecording::Summary);
    std::atomic<bool> aborting{false};

    auto guarded = [&](auto body) {
        return [&progress, &collector, body]() {
            try {
                body();
            } catch (...) {
                progress.fail(std::current_exception());
                collector.close();
            }
        };
    };

    std::thread engine_thread(guarded([&] {
        cep::StreamEngine engine(pattern);
        auto publish_all = [&](const std::vector<cep::ComplexEvent>& events) {
            for (const auto& ev : events) engine_bus->publish(bus::kHistoryTopic, ev.to_payload());
        };
        while (auto env = engine_in->next()) {
            const auto events = engine.on_trace(cep::TraceEvent::from_payload(env->payload));
            publish_all(events);
            progress.update([&] {
                ++progress.traces_in;
                progress.history_out += events.size();
            });
        }
        if (aborting) return;
        const auto tail = engine.flush_end_of_run();
        publish_all(tail);
        progress.update([&] {
            progress.history_out += tail.size();
            progress.engine_done = true;
        });
    }));

    std::thread graph_thread(guarded([&] {
        while (auto env = graph_in->next()) {
            const auto event = cep::ComplexEvent::from_payload(env->payload);
            std::vector<cep::TraceEvent> traces;
            if (collect && event.kind == cep::ComplexKind::EpisodeAvg) traces = collector.take(event.episode);
            model.ingest_complex_event(event, env->seq, env->ts, traces);
            progress.update([&] {
                ++progress.history_in;
                progress.feedback_out = delivered;
                if (event.kind == cep::ComplexKind::StableWindow) ++progress.stable_windows;
            });
        }
    }));

    std::thread collector_thread;
    if (collect) {
        collector_thread = std::thread(guarded([&] {
            while (auto env = collector_in->next()) collector.add(std::move(env->payload));
        }));
    }

    auto stop_all = [&] {
        aborting = true;
        engine_in->cancel();
        graph_in->cancel();
        if (collector_in) collector_in->cancel();
        collector.close();
        if (engine_thread.joinable()) engine_thread.join();
        if (graph_thread.joinable()) graph_thread.join();
        if (collector_thread.joinable()) collector_thread.join();
    };

    RunResult result;
    try {
        rl::SyncHook sync;
        if (history) {
            // Feedback for a window is due two episodes after its last one;
            // by then the engine has seen every trace that closes the window.
            // Waiting here for engine and graph to catch up makes the episode
            // a feedback lands on independent of thread scheduling.
            sync = [&](std::uint64_t published) {
                std::uint64_t emitted = 0;
                progress.wait([&] {
                    if (progress.traces_in < published) return false;
                    emitted = progress.history_out;
                    return true;
                });
                std::uint64_t feedback = 0;
                progress.wait([&] {
                    if (progress.history_in < emitted) return false;
                    feedback = progress.feedback_out;
                    return true;
                });
                return feedback;
            };
        }
        result.log = rl::run_training(config.harness_config(), *harness_bus, sync);

        const std::uint64_t total = result.log.traces_published;
        collector.set_total(total);
        progress.wait([&] { return progress.traces_in >= total; });
        engine_in->cancel();
        engine_thread.join();
        progress.wait([&] { return progress.engine_done && progress.history_in >= progress.history_out; });
        graph_in->cancel();
        if (collector_in) collector_in->cancel();
        graph_thread.join();
        if (collector_thread.joinable()) collector_thread.join();
        if (auto e = progress.error()) std::rethrow_exception(e);
    } catch (...) {
        stop_all();
        if (auto e = progress.error()) std::rethrow_exception(e);
        throw;
    }

    result.complex_events = progress.history_in;
    result.stable_windows = progress.stable_windows;
    result.feedback_published = delivered;
    if (listener) result.tuner_state = listener->state();

    broker.close();
    if (server) server->stop();
    return result;
}

RunResult cmd_run(const RunConfig& config, bool tcp, const bus::BusAddress& address) {
    config.validate();
    std::error_code ec;
    fs::create_directories(config.out, ec);
    if (ec) throw Error(ErrorCode::Io, "cannot create " + config.out.string() + ": " + ec.message());
    write_text(config.out / "config.txt", config.to_text());

    PipelineOptions options;
    options.tcp = tcp;
    options.address = address;
    options.log_path = config.out / "history.log";
    fs::remove(options.log_path, ec);

    RunResult result = run_pipeline(config, options);
    write_text(config.out / "rewards.csv", result.log.csv());
    return result;
}

// ---------------------------------------------------------------- compare

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw Error(ErrorCode::InvalidArgument, "quantile of an empty set");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + (values[hi] - values[lo]) * frac;
}

double final_quartile_mean(const std::vector<double>& rewards) {
    if (rewards.empty()) throw Error(ErrorCode::InvalidArgument, "no rewards");
    const std::size_t n = std::max<std::size_t>(1, rewards.size() / 4);
    tuner::CompensatedSum sum;
    for (std::size_t i = rewards.size() - n; i < rewards.size(); ++i) sum.add(rewards[i]);
    return sum.mean();
}

SummaryStats summarize(const Variant& variant, const std::vector<std::vector<double>>& rewards) {
    SummaryStats s;
    s.label = variant.label;
    s.kind = variant.kind;
    s.initial_gamma = variant.initial_gamma;
    s.runs = rewards.size();
    std::vector<double> pooled;
    std::vector<double> finals;
    tuner::CompensatedSum sum;
    for (const auto& run : rewards) {
        pooled.insert(pooled.end(), run.begin(), run.end());
        for (double r : run) sum.add(r);
        finals.push_back(final_quartile_mean(run));
    }
    if (pooled.empty()) throw Error(ErrorCode::InvalidArgument, "no rewards for " + variant.label);
    std::sort(pooled.begin(), pooled.end());
    s.min = pooled.front();
    s.max = pooled.back();
    s.q1 = quantile(pooled, 0.25);
    s.median = quantile(pooled, 0.5);
    s.q3 = quantile(pooled, 0.75);
    s.mean = sum.mean();
    s.final_quartile_median = quantile(finals, 0.5);
    return s;
}

void write_compare_outputs(const CompareResult& result, const fs::path& out) {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw Error(ErrorCode::Io, "cannot create " + out.string() + ": " + ec.message());
    using rl::format_double;

    std::string runs = "label,kind,initial_gamma,seed,episode,mean_reward,gamma\n";
    std::string curves = "label,episode,runs,mean,median,q1,q3\n";
    for (const auto& v : result.runs) {
        const std::string prefix = v.variant.label + "," + to_string(v.variant.kind) + "," +
                                   format_double(v.variant.initial_gamma) + ",";
        for (std::size_t i = 0; i < v.rewards.size(); ++i)
            for (std::size_t e = 0; e < v.rewards[i].size(); ++e)
                runs += prefix + std::to_string(v.seeds[i]) + "," + std::to_string(e) + "," +
                        format_double(v.rewards[i][e]) + "," + format_double(v.gammas[i][e]) + "\n";
        if (v.rewards.empty()) continue;
        for (std::size_t e = 0; e < v.rewards.front().size(); ++e) {
            std::vector<double> column;
            tuner::CompensatedSum sum;
            for (const auto& run : v.rewards) {
                column.push_back(run[e]);
                sum.add(run[e]);
            }
            curves += v.variant.label + "," + std::to_string(e) + "," + std::to_string(column.size()) + "," +
                      format_double(sum.mean()) + "," + format_double(quantile(column, 0.5)) + "," +
                      format_double(quantile(column, 0.25)) + "," + format_double(quantile(column, 0.75)) + "\n";
        }
    }
    std::string stats = "label,kind,initial_gamma,runs,min,q1,median,q3,max,mean,final_quartile_median\n";
    for (const auto& s : result.stats)
        stats += s.label + "," + to_string(s.kind) + "," + format_double(s.initial_gamma) + "," +
                 std::to_string(s.runs) + "," + format_double(s.min) + "," + format_double(s.q1) + "," +
                 format_double(s.median) + "," + format_double(s.q3) + "," + format_double(s.max) + "," +
                 format_double(s.mean) + "," + format_double(s.final_quartile_median) + "\n";

    write_text(out / "runs.csv", runs);
    write_text(out / "curves.csv", curves);
    write_text(out / "stats.csv", stats);
    if (result.partial)
        write_text(out / "PARTIAL", result.failure + "\n");
    else
        fs::remove(out / "PARTIAL", ec);
}

CompareResult cmd_compare(const CompareConfig& config, const fs::path& out, bool tcp, const bus::BusAddress& address) {
    if (config.variants.empty()) throw Error(ErrorCode::Config, "compare needs at least one tuner kind");
    if (config.seeds.empty()) throw Error(ErrorCode::Config, "compare needs at least one seed");

    // Validate every cell up front so a bad matrix is a config error, not a
    // partial result.
    std::vector<std::vector<RunConfig>> cells;
    for (const auto& v : config.variants) {
        auto& row = cells.emplace_back();
        for (auto seed : config.seeds) {
            RunConfig c = config.base;
            c.seed = seed;
            c.tuner = v.kind;
            c.initial_gamma = v.initial_gamma;
            c.validate();
            row.push_back(std::move(c));
        }
    }

    CompareResult result;
    for (std::size_t i = 0; i < config.variants.size() && !result.partial; ++i) {
        VariantRuns vr;
        vr.variant = config.variants[i];
        for (std::size_t j = 0; j < config.seeds.size(); ++j) {
            PipelineOptions options;
            options.tcp = tcp;
            options.address = address;
            // Baseline rewards do not depend on the engine or graph.
            options.history_pipeline = tcp || vr.variant.kind == TunerKind::History;
            try {
                const RunResult r = run_pipeline(cells[i][j], options);
                std::vector<double> rewards, gammas;
                for (const auto& e : r.log.episodes) {
                    rewards.push_back(e.mean_reward);
                    gammas.push_back(e.gamma);
                }
                vr.seeds.push_back(config.seeds[j]);
                vr.rewards.push_back(std::move(rewards));
                vr.gammas.push_back(std::move(gammas));
            } catch (const std::exception& e) {
                result.partial = true;
                result.failure = vr.variant.label + " seed " + std::to_string(config.seeds[j]) + ": " + e.what();
                break;
            }
        }
        if (!vr.rewards.empty()) {
            result.stats.push_back(summarize(vr.variant, vr.rewards));
            result.runs.push_back(std::move(vr));
        }
    }
    if (!out.empty()) write_compare_outputs(result, out);
    return result;
}

// ---------------------------------------------------------------- query

namespace {

nlohmann::ordered_json value_json(const graph::Value& v) {
    return std::visit([](const auto& x) { return nlohmann::ordered_json(x); }, v);
}

std::string snapshot_json(const graph::PropertySnapshot& s) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [k, v] : s.properties) j[k] = value_json(v);
    if (!s.edges.empty()) {
        nlohmann::ordered_json edges = nlohmann::ordered_json::object();
        for (const auto& [k, ids] : s.edges) edges[k] = ids;
        j["edges"] = std::move(edges);
    }
    return j.dump();
}

std::string csv_quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

template <typename T>
std::string prop_text(const graph::NodeState& s, const std::string& name) {
    auto it = s.snapshot.properties.find(name);
    if (it == s.snapshot.properties.end()) return {};
    if (const T* v = std::get_if<T>(&it->second)) {
        if constexpr (std::is_same_v<T, double>)
            return rl::format_double(*v);
        else if constexpr (std::is_same_v<T, std::string>)
            return *v;
        else
            return std::to_string(*v);
    }
    return {};
}

}  // namespace

std::string cmd_query(const fs::path& log_path, const QueryRequest& q) {
    if (q.from > q.to) throw Error(ErrorCode::InvalidArgument, "query range: from > to");
    if (!fs::exists(log_path)) throw Error(ErrorCode::Io, "no commit log at " + log_path.string());
    graph::TemporalGraph g(log_path, graph::LogMode::ReadOnly);
    using rl::format_double;
    auto in_range = [&](graph::Timepoint t) { return t >= q.from && t <= q.to; };
    std::string out;

    if (q.what == "best") {
        out = "gamma,max_r,episode,first_episode,window_index,timepoint\n";
        std::optional<graph::TuningRow> best;
        for (const auto& row : graph::tuning_trajectory(g))
            if (in_range(row.timepoint) && row.kind == "new_max") best = row;
        if (best) {
            out += format_double(best->max_gamma) + "," + format_double(best->max_r) + "," +
                   std::to_string(best->last_episode) + "," + std::to_string(best->first_episode) + "," +
                   std::to_string(best->window_index) + "," + std::to_string(best->timepoint) + "\n";
        } else {
            // No maximum recorded: the optimum is still the initial gamma.
            const auto agents = g.nodes_of_kind(graph::NodeKind::RLAgent);
            if (!agents.empty()) {
                const auto s = g.node_at(agents.front(), g.version_timepoints(agents.front()).front());
                out += prop_text<double>(s, "gamma") + ",0,,,,\n";
            }
        }
    } else if (q.what == "tuning") {
        out = "timepoint,first_episode,last_episode,effective_episode,decision,kind,old_gamma,new_gamma,max_r,"
              "max_gamma,r_win,published,delivered\n";
        for (const auto& r : graph::tuning_trajectory(g)) {
            if (!in_range(r.timepoint)) continue;
            out += std::to_string(r.timepoint) + "," + std::to_string(r.first_episode) + "," +
                   std::to_string(r.last_episode) + "," + std::to_string(r.effective_episode) + "," + r.decision +
                   "," + r.kind + "," + format_double(r.old_gamma) + "," + format_double(r.new_gamma) + "," +
                   format_double(r.max_r) + "," + format_double(r.max_gamma) + "," + format_double(r.r_win) + "," +
                   (r.published ? "true" : "false") + "," + (r.delivered ? "true" : "false") + "\n";
        }
    } else if (q.what == "measurements") {
        out = "timepoint,kind,episode,window_index,value,gamma\n";
        std::vector<std::pair<graph::Timepoint, std::string>> rows;
        for (graph::NodeId id : g.nodes_of_kind(graph::NodeKind::Measurement)) {
            const auto t = g.version_timepoints(id).front();
            if (!in_range(t)) continue;
            const auto s = g.node_at(id, t);
            const auto kind = prop_text<std::string>(s, "kind");
            if (!q.argument.empty() && kind != q.argument) continue;
            rows.emplace_back(t, std::to_string(t) + "," + kind + "," + prop_text<std::int64_t>(s, "episode") + "," +
                                     prop_text<std::int64_t>(s, "window_index") + "," +
                                     prop_text<double>(s, "value") + "," + prop_text<double>(s, "gamma") + "\n");
        }
        std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        for (const auto& [t, line] : rows) out += line;
    } else if (q.what == "node") {
        graph::NodeId id = 0;
        try {
            std::size_t used = 0;
            id = std::stoull(q.argument, &used);
            if (used != q.argument.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw Error(ErrorCode::InvalidArgument, "node query needs a numeric id, got '" + q.argument + "'");
        }
        out = "timepoint,kind,ended,state\n";
        for (const auto& [t, s] : g.history(id, q.from, q.to))
            out += std::to_string(t) + "," + graph::to_string(s.kind) + "," + (s.ended ? "true" : "false") + "," +
                   csv_quote(snapshot_json(s.snapshot)) + "\n";
    } else if (q.what == "commits") {
        out = "timepoint\n";
        for (auto t : g.commit_timepoints())
            if (in_range(t)) out += std::to_string(t) + "\n";
    } else {
        throw Error(ErrorCode::InvalidArgument,
                    "unknown query '" + q.what + "'; expected best, tuning, measurements, node or commits");
    }
    return out;
}

}  // namespace histune::experiment
