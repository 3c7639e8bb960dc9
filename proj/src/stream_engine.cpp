#include "histune/stream_engine.hpp"

#include <string>

#include "histune/error.hpp"

namespace histune::cep {

bus::Payload TraceEvent::to_payload() const {
    bus::Payload p = bus::Payload::object();
    p["agent"] = agent;
    p["episode"] = episode;
    p["step"] = step;
    p["reward"] = reward;
    p["action"] = action;
    p["state"] = state;
    p["qvalues"] = qvalues;
    p["gamma"] = gamma;
    return p;
}

TraceEvent TraceEvent::from_payload(const bus::Payload& p) {
    TraceEvent e;
    e.agent = p.at("agent").get<std::string>();
    e.episode = p.at("episode").get<std::uint64_t>();
    e.step = p.at("step").get<std::uint64_t>();
    e.reward = p.at("reward").get<double>();
    e.action = p.at("action").get<std::string>();
    e.state = p.at("state").get<std::string>();
    e.qvalues = p.at("qvalues").get<std::vector<double>>();
    e.gamma = p.at("gamma").get<double>();
    return e;
}

const char* to_string(ComplexKind k) {
    switch (k) {
    case ComplexKind::EpisodeAvg: return "episode_avg";
    case ComplexKind::WindowAvg: return "window_avg";
    case ComplexKind::StableWindow: return "stable_window";
    }
    return "?";
}

bus::Payload ComplexEvent::to_payload() const {
    bus::Payload p = bus::Payload::object();
    p["kind"] = to_string(kind);
    p["episode"] = episode;
    if (window_index) p["window_index"] = *window_index;
    p["value"] = value;
    if (kind == ComplexKind::StableWindow) p["members"] = members;
    p["gamma"] = gamma;
    return p;
}

ComplexEvent ComplexEvent::from_payload(const bus::Payload& p) {
    ComplexEvent e;
    const auto kind = p.at("kind").get<std::string>();
    if (kind == "episode_avg")
        e.kind = ComplexKind::EpisodeAvg;
    else if (kind == "window_avg")
        e.kind = ComplexKind::WindowAvg;
    else if (kind == "stable_window")
        e.kind = ComplexKind::StableWindow;
    else
        throw Error(ErrorCode::SchemaViolation, "schema violation: unknown complex event kind '" + kind + "'");
    if (auto it = p.find("episode"); it != p.end()) e.episode = it->get<std::uint64_t>();
    if (auto it = p.find("window_index"); it != p.end()) e.window_index = it->get<std::uint64_t>();
    e.value = p.at("value").get<double>();
    if (auto it = p.find("members"); it != p.end()) e.members = it->get<std::vector<double>>();
    e.gamma = p.at("gamma").get<double>();
    if (e.kind != ComplexKind::EpisodeAvg && !e.window_index)
        throw Error(ErrorCode::SchemaViolation, "schema violation: window event without window_index");
    if (e.kind == ComplexKind::StableWindow && e.members.empty())
        throw Error(ErrorCode::SchemaViolation, "schema violation: stable_window without members");
    return e;
}

PatternNode build_listing1_pattern(std::size_t x, double th_stable) {
    if (x < 1) throw Error(ErrorCode::Config, "pattern: window length must be >= 1");
    if (!(th_stable > 0.0)) throw Error(ErrorCode::Config, "pattern: th_stable must be > 0");
    PatternNode gate{PatternKind::StableGate, x, th_stable, {}};
    PatternNode window{PatternKind::WindowAggregate, x, 0.0, {gate}};
    return PatternNode{PatternKind::EpisodeAggregate, 0, 0.0, {window}};
}

StreamEngine::StreamEngine(PatternNode pattern) {
    if (pattern.kind != PatternKind::EpisodeAggregate)
        throw Error(ErrorCode::Config, "pattern root must aggregate episodes");
    if (pattern.downstream.size() > 1) throw Error(ErrorCode::Config, "pattern: episode stage feeds one window stage");
    if (pattern.downstream.empty()) return;

    const PatternNode& window = pattern.downstream.front();
    if (window.kind != PatternKind::WindowAggregate || window.window_length < 1)
        throw Error(ErrorCode::Config, "pattern: episode stage must feed a window aggregate with length >= 1");
    windows_ = true;
    window_length_ = window.window_length;
    if (window.downstream.size() > 1) throw Error(ErrorCode::Config, "pattern: window stage feeds one gate");
    if (window.downstream.empty()) return;

    const PatternNode& gate = window.downstream.front();
    if (gate.kind != PatternKind::StableGate || !(gate.th_stable > 0.0) || !gate.downstream.empty())
        throw Error(ErrorCode::Config, "pattern: window stage must end in a stable gate with th_stable > 0");
    if (gate.window_length != window_length_)
        throw Error(ErrorCode::Config, "pattern: gate and window lengths differ");
    gate_ = true;
    th_stable_ = gate.th_stable;
}

std::vector<ComplexEvent> StreamEngine::on_trace(const TraceEvent& event) {
    const std::pair position{event.episode, event.step};
    if (last_position_ && position <= *last_position_) {
        throw Error(ErrorCode::OrderingViolation,
                    "ordering violation: agent '" + event.agent + "' episode " + std::to_string(event.episode) +
                        " step " + std::to_string(event.step) + " after episode " +
                        std::to_string(last_position_->first) + " step " + std::to_string(last_position_->second));
    }
    last_position_ = position;

    std::vector<ComplexEvent> out;
    if (open_episode_ && *open_episode_ != event.episode) close_episode(out);
    if (!open_episode_) {
        open_episode_ = event.episode;
        episode_sum_ = {};
    }
    episode_sum_.add(event.reward);
    episode_gamma_ = event.gamma;
    return out;
}

std::vector<ComplexEvent> StreamEngine::flush_end_of_run() {
    std::vector<ComplexEvent> out;
    if (open_episode_) close_episode(out);
    pending_.clear();
    return out;
}

void StreamEngine::close_episode(std::vector<ComplexEvent>& out) {
    const tuner::EpisodeAverage avg{*open_episode_, episode_sum_.mean(), episode_sum_.count()};
    open_episode_.reset();

    ComplexEvent ep;
    ep.kind = ComplexKind::EpisodeAvg;
    ep.episode = avg.episode;
    ep.value = avg.r_e;
    ep.gamma = episode_gamma_;
    out.push_back(ep);
    if (!windows_) return;

    // Windows are episode-aligned; a gap in episode numbers abandons the
    // partial window rather than bridging it.
    if (!pending_.empty() && pending_.back().episode + 1 != avg.episode) pending_.clear();
    pending_.push_back(avg);
    if (pending_.size() < window_length_) return;

    tuner::HyperparameterVector lambda;
    lambda.gamma = episode_gamma_;
    const auto window = tuner::reward_by_window(pending_, window_length_, next_window_index_++, lambda);
    pending_.clear();

    ComplexEvent w;
    w.kind = ComplexKind::WindowAvg;
    w.episode = window.first_episode;
    w.window_index = window.window_index;
    w.value = window.r_win;
    w.gamma = episode_gamma_;
    out.push_back(w);

    if (gate_ && tuner::is_stable(window, th_stable_)) {
        ComplexEvent s = w;
        s.kind = ComplexKind::StableWindow;
        s.members.reserve(window.episode_averages.size());
        for (const auto& e : window.episode_averages) s.members.push_back(e.r_e);
        out.push_back(std::move(s));
    }
}

}  // namespace histune::cep
