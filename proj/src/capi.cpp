#include "histune/histune.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "histune/error.hpp"
#include "histune/event_bus.hpp"
#include "histune/experiment.hpp"
#include "histune/tcp_transport.hpp"
#include "histune/temporal_graph.hpp"
#include "histune/tuner.hpp"
#include "histune/wire.hpp"

using namespace histune;

struct histune_tuner {
    tuner::Tuner impl;
};

struct histune_bus {
    std::unique_ptr<bus::EventBus> impl;
    bus::Broker* broker = nullptr;
    std::unique_ptr<bus::TcpBusServer> server;

    ~histune_bus() {
        if (server) server->stop();
    }
};

struct histune_subscription {
    std::unique_ptr<bus::MessageStream> impl;
};

struct histune_graph {
    std::unique_ptr<graph::TemporalGraph> impl;
};

namespace {

thread_local std::string last_error;

histune_status fail(histune_status status, const std::string& message) {
    last_error = message;
    return status;
}

/// Runs `body`, translating exceptions into status codes.
template <typename F>
histune_status guard(F&& body) {
    try {
        body();
        return HISTUNE_OK;
    } catch (const Error& e) {
        return fail(static_cast<histune_status>(e.code()), e.what());
    } catch (const std::bad_alloc&) {
        return fail(HISTUNE_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return fail(HISTUNE_INTERNAL, e.what());
    } catch (...) {
        return fail(HISTUNE_INTERNAL, "unknown error");
    }
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.data(), s.size() + 1);
    return out;
}

void require(bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::InvalidArgument, std::string("invalid argument: ") + what);
}

nlohmann::ordered_json state_json(const graph::NodeState& s) {
    nlohmann::ordered_json j;
    j["id"] = s.id;
    j["kind"] = graph::to_string(s.kind);
    j["created_at"] = s.created_at;
    j["ended"] = s.ended;
    nlohmann::ordered_json props = nlohmann::ordered_json::object();
    for (const auto& [k, v] : s.snapshot.properties)
        props[k] = std::visit([](const auto& x) { return nlohmann::ordered_json(x); }, v);
    j["properties"] = std::move(props);
    nlohmann::ordered_json edges = nlohmann::ordered_json::object();
    for (const auto& [k, ids] : s.snapshot.edges) edges[k] = ids;
    j["edges"] = std::move(edges);
    return j;
}

std::string config_text(const char* path, const char* overrides) {
    std::string text;
    if (path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error(ErrorCode::Config, std::string("cannot read config file ") + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        text = buf.str();
    }
    if (overrides) {
        text += '\n';
        text += overrides;
    }
    return text;
}

bus::BusAddress address_or_default(const char* address) {
    return address ? bus::parse_bus_address(address) : bus::default_bus_address();
}

}  // namespace

extern "C" {

const char* histune_status_string(histune_status status) {
    switch (status) {
    case HISTUNE_OK: return "ok";
    case HISTUNE_PARTIAL_MATRIX: return "partial matrix";
    case HISTUNE_INTERNAL: return "internal error";
    default: break;
    }
    if (status >= HISTUNE_INVALID_ARGUMENT && status <= HISTUNE_TRANSPORT)
        return error_code_name(static_cast<ErrorCode>(status));
    return "unknown status";
}

const char* histune_last_error(void) { return last_error.c_str(); }

void histune_string_free(char* s) { std::free(s); }

void histune_tuner_config_default(histune_tuner_config* config) {
    if (!config) return;
    const tuner::TunerConfig d;
    *config = {d.window_length, d.th_stable, d.epsilon, d.step_c, d.lambda_min, d.lambda_max, d.p_random};
}

histune_status histune_tuner_create(const histune_tuner_config* config, double initial_gamma, uint64_t seed,
                                    histune_tuner** out) {
    return guard([&] {
        require(config && out, "null pointer");
        tuner::TunerConfig c;
        c.window_length = config->window_length;
        c.th_stable = config->th_stable;
        c.epsilon = config->epsilon;
        c.step_c = config->step_c;
        c.lambda_min = config->lambda_min;
        c.lambda_max = config->lambda_max;
        c.p_random = config->p_random;
        *out = new histune_tuner{tuner::Tuner(c, {initial_gamma, {}}, seed)};
    });
}

void histune_tuner_destroy(histune_tuner* tuner) { delete tuner; }

histune_status histune_tuner_observe_window(histune_tuner* t, uint64_t window_index, uint64_t first_episode,
                                            const double* episode_averages, size_t count, histune_decision* out) {
    return guard([&] {
        require(t && out && (episode_averages || count == 0), "null pointer");
        std::vector<tuner::EpisodeAverage> avgs;
        for (size_t i = 0; i < count; ++i) avgs.push_back({first_episode + i, episode_averages[i], 0});
        const auto window =
            tuner::reward_by_window(avgs, t->impl.config().window_length, window_index, t->impl.state().current_lambda);
        const auto decision = t->impl.observe(window);
        *out = {};
        out->move = HISTUNE_MOVE_NONE;
        out->r_win = window.r_win;
        out->new_gamma = t->impl.state().current_lambda.gamma;
        if (decision) {
            out->evaluated = 1;
            out->kind = static_cast<histune_decision_kind>(decision->kind);
            if (decision->exploration_move) out->move = static_cast<histune_move>(*decision->exploration_move);
            out->new_gamma = decision->new_lambda.gamma;
        }
        out->max_r = t->impl.state().max_r;
        out->max_gamma = t->impl.state().max_lambda.gamma;
    });
}

histune_status histune_tuner_optimal_gamma(const histune_tuner* t, double* out) {
    return guard([&] {
        require(t && out, "null pointer");
        *out = t->impl.optimal().gamma;
    });
}

histune_status histune_bus_create(histune_bus** out) {
    return guard([&] {
        require(out, "null pointer");
        auto b = std::make_unique<histune_bus>();
        auto broker = std::make_unique<bus::Broker>();
        b->broker = broker.get();
        b->impl = std::move(broker);
        *out = b.release();
    });
}

histune_status histune_bus_connect(const char* address, histune_bus** out) {
    return guard([&] {
        require(out, "null pointer");
        auto b = std::make_unique<histune_bus>();
        b->impl = std::make_unique<bus::TcpBusClient>(address_or_default(address));
        *out = b.release();
    });
}

void histune_bus_destroy(histune_bus* bus) { delete bus; }

histune_status histune_bus_close(histune_bus* b) {
    return guard([&] {
        require(b, "null pointer");
        b->impl->close();
    });
}

histune_status histune_bus_publish(histune_bus* b, const char* topic, const char* payload_json, uint64_t* seq_out) {
    return guard([&] {
        require(b && topic && payload_json, "null pointer");
        bus::Payload payload;
        try {
            payload = bus::Payload::parse(payload_json);
        } catch (const nlohmann::json::parse_error& e) {
            throw Error(ErrorCode::ParseError, std::string("parse error at byte ") + std::to_string(e.byte));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::ParseError, std::string("parse error: ") + e.what());
        }
        const auto seq = b->impl->publish(topic, std::move(payload));
        if (seq_out) *seq_out = seq;
    });
}

histune_status histune_bus_subscribe(histune_bus* b, const char* topic, histune_subscription** out) {
    return guard([&] {
        require(b && topic && out, "null pointer");
        *out = new histune_subscription{b->impl->subscribe(topic)};
    });
}

histune_status histune_subscription_next(histune_subscription* sub, int timeout_ms, char** line_out) {
    return guard([&] {
        require(sub && line_out, "null pointer");
        *line_out = nullptr;
        auto env = timeout_ms < 0 ? sub->impl->next() : sub->impl->next_for(std::chrono::milliseconds(timeout_ms));
        if (env) {
            *line_out = dup_string(bus::encode(*env));
            return;
        }
        if (timeout_ms < 0 || sub->impl->ended()) throw Error(ErrorCode::BusClosed, "bus closed");
    });
}

void histune_subscription_destroy(histune_subscription* sub) { delete sub; }

histune_status histune_bus_serve_tcp(histune_bus* b, const char* address, uint16_t* port_out) {
    return guard([&] {
        require(b, "null pointer");
        if (!b->broker) throw Error(ErrorCode::InvalidArgument, "only an in-process broker can be served");
        if (b->server) throw Error(ErrorCode::InvalidArgument, "already serving");
        auto server = std::make_unique<bus::TcpBusServer>(*b->broker, address_or_default(address));
        server->start();
        if (port_out) *port_out = server->port();
        b->server = std::move(server);
    });
}

histune_status histune_graph_open(const char* log_path, histune_graph** out) {
    return guard([&] {
        require(log_path && out, "null pointer");
        *out = new histune_graph{std::make_unique<graph::TemporalGraph>(log_path, graph::LogMode::ReadOnly)};
    });
}

void histune_graph_close(histune_graph* g) { delete g; }

histune_status histune_graph_node_at_json(histune_graph* g, uint64_t id, int64_t timepoint, char** json_out) {
    return guard([&] {
        require(g && json_out, "null pointer");
        *json_out = dup_string(state_json(g->impl->node_at(id, timepoint)).dump());
    });
}

histune_status histune_graph_history_json(histune_graph* g, uint64_t id, int64_t from, int64_t to, char** json_out) {
    return guard([&] {
        require(g && json_out, "null pointer");
        require(from <= to, "from > to");
        nlohmann::ordered_json arr = nlohmann::ordered_json::array();
        for (const auto& [t, s] : g->impl->history(id, from, to)) {
            nlohmann::ordered_json item;
            item["timepoint"] = t;
            item["state"] = state_json(s);
            arr.push_back(std::move(item));
        }
        *json_out = dup_string(arr.dump());
    });
}

histune_status histune_run(const char* config_path, const char* overrides, int tcp, const char* bus_address,
                           char** summary_out) {
    return guard([&] {
        const auto config = experiment::parse_run_config(config_text(config_path, overrides));
        config.validate();
        const auto address = tcp ? address_or_default(bus_address) : bus::BusAddress{};
        const auto r = experiment::cmd_run(config, tcp != 0, address);
        std::string s = "out=" + config.out.string() + "\n";
        s += "episodes=" + std::to_string(r.log.episodes.size()) + "\n";
        s += "complex_events=" + std::to_string(r.complex_events) + "\n";
        s += "stable_windows=" + std::to_string(r.stable_windows) + "\n";
        s += "feedback=" + std::to_string(r.feedback_published) + "\n";
        if (r.tuner_state) {
            s += "best_gamma=" + rl::format_double(r.tuner_state->max_lambda.gamma) + "\n";
            s += "max_r=" + rl::format_double(r.tuner_state->max_r) + "\n";
        }
        s += "q_digest=" + r.log.q_digest + "\n";
        for (const auto& w : r.log.warnings) s += "warning=" + w + "\n";
        if (summary_out) *summary_out = dup_string(s);
    });
}

histune_status histune_compare(const char* config_path, const char* overrides, int tcp, const char* bus_address,
                               char** summary_out) {
    bool partial = false;
    std::string failure;
    const auto status = guard([&] {
        const auto config = experiment::parse_compare_config(config_text(config_path, overrides));
        const auto address = tcp ? address_or_default(bus_address) : bus::BusAddress{};
        const auto r = experiment::cmd_compare(config, config.base.out, tcp != 0, address);
        std::string s = "out=" + config.base.out.string() + "\n";
        s += "label,runs,median,q3,final_quartile_median\n";
        for (const auto& st : r.stats)
            s += st.label + "," + std::to_string(st.runs) + "," + rl::format_double(st.median) + "," +
                 rl::format_double(st.q3) + "," + rl::format_double(st.final_quartile_median) + "\n";
        if (summary_out) *summary_out = dup_string(s);
        partial = r.partial;
        failure = r.failure;
    });
    if (status == HISTUNE_OK && partial) return fail(HISTUNE_PARTIAL_MATRIX, "partial matrix: " + failure);
    return status;
}

histune_status histune_query(const char* log_path, const char* what, const char* argument, int64_t from, int64_t to,
                             char** listing_out) {
    return guard([&] {
        require(log_path && what && listing_out, "null pointer");
        experiment::QueryRequest q;
        q.what = what;
        q.argument = argument ? argument : "";
        q.from = from;
        q.to = to;
        *listing_out = dup_string(experiment::cmd_query(log_path, q));
    });
}

histune_status histune_config_help(char** text_out) {
    return guard([&] {
        require(text_out, "null pointer");
        *text_out = dup_string(experiment::describe_run_config());
    });
}

}  // extern "C"
