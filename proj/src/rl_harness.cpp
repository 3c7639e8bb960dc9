#include "histune/rl_harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <ostream>
#include <sstream>

#include "histune/error.hpp"

namespace histune::rl {

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv_mix(std::uint64_t& h, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xFF;
        h *= kFnvPrime;
    }
}

std::uint64_t bits_of(double d) {
    std::uint64_t b;
    std::memcpy(&b, &d, sizeof b);
    return b;
}

const QAgent::Row kZeroRow{};

}  // namespace

const char* to_string(Action a) {
    switch (a) {
    case Action::Up: return "up";
    case Action::Down: return "down";
    case Action::Left: return "left";
    case Action::Right: return "right";
    case Action::Stay: return "stay";
    }
    return "?";
}

std::string format_double(double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

// ---------------------------------------------------------------- env

CoverageEnv::CoverageEnv(int width, int height, std::vector<Position> users, std::vector<Position> starts,
                         int coverage_radius, int state_bin)
    : width_(width), height_(height), users_(std::move(users)), starts_(std::move(starts)), radius_(coverage_radius),
      bin_(state_bin) {
    if (width_ < 1 || height_ < 1) throw Error(ErrorCode::Config, "grid must be at least 1x1");
    if (radius_ < 0) throw Error(ErrorCode::Config, "coverage radius must be >= 0");
    if (bin_ < 1) throw Error(ErrorCode::Config, "state bin must be >= 1");
    if (starts_.empty()) throw Error(ErrorCode::Config, "need at least one agent");
    auto inside = [&](const Position& p) { return p.x >= 0 && p.x < width_ && p.y >= 0 && p.y < height_; };
    if (!std::all_of(users_.begin(), users_.end(), inside) || !std::all_of(starts_.begin(), starts_.end(), inside))
        throw Error(ErrorCode::Config, "user or agent outside the grid");
    // The packed state key must fit in 64 bits.
    const double bits = static_cast<double>(starts_.size()) * std::log2(static_cast<double>(width_) * height_);
    if (bits > 63.0) throw Error(ErrorCode::Config, "too many agents for the grid size");
    positions_ = starts_;
}

CoverageEnv CoverageEnv::generate(const EnvConfig& c, Rng& rng) {
    if (c.width < 1 || c.height < 1 || c.users < 0 || c.agents < 1)
        throw Error(ErrorCode::Config, "invalid environment dimensions");
    auto cell = [&] {
        return Position{static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(c.width))),
                        static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(c.height)))};
    };
    std::vector<Position> users(static_cast<std::size_t>(c.users));
    if (c.hotspots <= 0) {
        for (auto& u : users) u = cell();
    } else {
        std::vector<Position> centres(static_cast<std::size_t>(c.hotspots));
        for (auto& h : centres) h = cell();
        const auto span = static_cast<std::uint64_t>(2 * c.hotspot_spread + 1);
        for (std::size_t i = 0; i < users.size(); ++i) {
            const Position& h = centres[i % centres.size()];
            const int dx = static_cast<int>(uniform_index(rng, span)) - c.hotspot_spread;
            const int dy = static_cast<int>(uniform_index(rng, span)) - c.hotspot_spread;
            users[i] = {std::clamp(h.x + dx, 0, c.width - 1), std::clamp(h.y + dy, 0, c.height - 1)};
        }
    }
    std::vector<Position> starts(static_cast<std::size_t>(c.agents));
    for (auto& s : starts) s = cell();
    return CoverageEnv(c.width, c.height, std::move(users), std::move(starts), c.coverage_radius, c.state_bin);
}

void CoverageEnv::reset() { positions_ = starts_; }

StepResult CoverageEnv::step(std::span<const Action> actions) {
    if (actions.size() != positions_.size()) throw Error(ErrorCode::InvalidArgument, "one action per agent required");
    for (std::size_t i = 0; i < actions.size(); ++i) {
        Position& p = positions_[i];
        switch (actions[i]) {
        case Action::Up: p.y = std::min(p.y + 1, height_ - 1); break;
        case Action::Down: p.y = std::max(p.y - 1, 0); break;
        case Action::Left: p.x = std::max(p.x - 1, 0); break;
        case Action::Right: p.x = std::min(p.x + 1, width_ - 1); break;
        case Action::Stay: break;
        }
    }
    return {positions_, covered_users(positions_)};
}

int CoverageEnv::covered_users(std::span<const Position> agents) const {
    const int r2 = radius_ * radius_;
    int covered = 0;
    for (const auto& u : users_) {
        for (const auto& a : agents) {
            const int dx = u.x - a.x;
            const int dy = u.y - a.y;
            if (dx * dx + dy * dy <= r2) {
                ++covered;
                break;
            }
        }
    }
    return covered;
}

std::uint64_t CoverageEnv::state_key() const {
    const auto bins_x = static_cast<std::uint64_t>((width_ + bin_ - 1) / bin_);
    const auto bins_y = static_cast<std::uint64_t>((height_ + bin_ - 1) / bin_);
    std::uint64_t key = 0;
    for (auto it = positions_.rbegin(); it != positions_.rend(); ++it)
        key = key * bins_x * bins_y + static_cast<std::uint64_t>(it->y / bin_) * bins_x +
              static_cast<std::uint64_t>(it->x / bin_);
    return key;
}

std::string CoverageEnv::state_string() const {
    std::string s;
    for (std::size_t i = 0; i < positions_.size(); ++i) {
        if (i) s += ';';
        s += std::to_string(positions_[i].x) + ',' + std::to_string(positions_[i].y);
    }
    return s;
}

// ---------------------------------------------------------------- agent

QAgent::QAgent(double alpha, double gamma, double epsilon, std::uint64_t seed)
    : alpha_(alpha), gamma_(gamma), epsilon_(epsilon), rng_(seed) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw Error(ErrorCode::Config, "alpha must lie in (0, 1]");
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw Error(ErrorCode::Config, "agent epsilon must lie in [0, 1]");
    if (!std::isfinite(gamma)) throw Error(ErrorCode::Config, "gamma must be finite");
}

const QAgent::Row& QAgent::row(std::uint64_t state) const {
    auto it = table_.find(state);
    return it == table_.end() ? kZeroRow : it->second;
}

void QAgent::set_q(std::uint64_t state, Action a, double value) {
    table_[state][static_cast<std::size_t>(a)] = value;
}

Action QAgent::choose(std::uint64_t state) {
    if (uniform01(rng_) < epsilon_) return static_cast<Action>(uniform_index(rng_, kActionCount));
    const Row& r = row(state);
    const double best = *std::max_element(r.begin(), r.end());
    std::array<std::size_t, kActionCount> ties{};
    std::size_t n = 0;
    for (std::size_t i = 0; i < kActionCount; ++i)
        if (r[i] == best) ties[n++] = i;
    return static_cast<Action>(ties[n == 1 ? 0 : uniform_index(rng_, n)]);
}

double QAgent::q_update(std::uint64_t s, Action a, double reward, std::uint64_t s_next) {
    const Row& next = row(s_next);
    const double max_next = *std::max_element(next.begin(), next.end());
    const double current = q(s, a);
    const double updated = current + alpha_ * (reward + gamma_ * max_next - current);
    if (!std::isfinite(updated)) {
        std::ostringstream msg;
        msg << "non-finite Q value: Q(" << s << "," << to_string(a) << ")=" << current << " reward=" << reward
            << " gamma=" << gamma_ << " max_next=" << max_next;
        throw Error(ErrorCode::NonFinite, msg.str());
    }
    table_[s][static_cast<std::size_t>(a)] = updated;
    return updated;
}

std::uint64_t QAgent::digest() const {
    std::map<std::uint64_t, const Row*> ordered;
    for (const auto& [k, r] : table_) ordered.emplace(k, &r);
    std::uint64_t h = kFnvOffset;
    for (const auto& [k, r] : ordered) {
        fnv_mix(h, k);
        for (double v : *r) fnv_mix(h, bits_of(v));
    }
    return h;
}

// ---------------------------------------------------------------- schedules

ScheduleRunner::ScheduleRunner(BaselineSchedule schedule, std::uint64_t seed)
    : schedule_(schedule), rng_(seed) {
    if (schedule_.period == 0) throw Error(ErrorCode::Config, "schedule period must be >= 1");
    if (!(schedule_.lambda_min < schedule_.lambda_max)) throw Error(ErrorCode::Config, "schedule bounds inverted");
}

double ScheduleRunner::grid_gamma(const BaselineSchedule& s, std::uint64_t episode) {
    const double steps = static_cast<double>(episode / s.period);
    // Round away the binary residue of repeated tenths (0.9 - 3*0.1).
    const double raw = std::round((s.initial_gamma - s.decay_rate * steps) * 1e12) / 1e12;
    return std::clamp(raw, s.lambda_min, s.lambda_max);
}

double ScheduleRunner::initial() {
    if (!initial_) {
        switch (schedule_.kind) {
        case ScheduleKind::Static:
            initial_ = std::clamp(schedule_.initial_gamma, schedule_.lambda_min, schedule_.lambda_max);
            break;
        case ScheduleKind::GridDecay: initial_ = grid_gamma(schedule_, 0); break;
        case ScheduleKind::RandomEvery: initial_ = uniform_in(rng_, schedule_.lambda_min, schedule_.lambda_max); break;
        }
    }
    return *initial_;
}

std::optional<double> ScheduleRunner::update_at(std::uint64_t episode) {
    initial();
    if (episode == 0 || episode % schedule_.period != 0) return std::nullopt;
    switch (schedule_.kind) {
    case ScheduleKind::Static: return std::nullopt;
    case ScheduleKind::GridDecay: return grid_gamma(schedule_, episode);
    case ScheduleKind::RandomEvery: return uniform_in(rng_, schedule_.lambda_min, schedule_.lambda_max);
    }
    return std::nullopt;
}

// ---------------------------------------------------------------- feedback

void FeedbackInbox::receive(const bus::Payload& p) {
    ++received_;
    Feedback f;
    f.name = p.at("name").get<std::string>();
    f.value = p.at("value").get<double>();
    f.effective_episode = p.at("effective_episode").get<std::uint64_t>();
    f.decision = p.at("decision").get<std::string>();
    if (f.name != "gamma") {
        warnings_.push_back("ignoring feedback for unknown hyperparameter '" + f.name + "'");
        return;
    }
    if (f.value < lambda_min_ || f.value > lambda_max_) {
        const double clamped = std::clamp(f.value, lambda_min_, lambda_max_);
        warnings_.push_back("feedback gamma " + format_double(f.value) + " out of bounds, clamped to " +
                            format_double(clamped));
        f.value = clamped;
    }
    pending_.push_back(std::move(f));
}

std::vector<Feedback> FeedbackInbox::due(std::uint64_t episode) {
    std::vector<Feedback> out;
    auto split = std::stable_partition(pending_.begin(), pending_.end(),
                                       [&](const Feedback& f) { return f.effective_episode <= episode; });
    out.assign(std::make_move_iterator(pending_.begin()), std::make_move_iterator(split));
    pending_.erase(pending_.begin(), split);
    return out;
}

// ---------------------------------------------------------------- run log

void RunLog::write_csv(std::ostream& out) const {
    out << "episode,mean_reward,gamma,decision_events\n";
    for (const auto& e : episodes)
        out << e.episode << ',' << format_double(e.mean_reward) << ',' << format_double(e.gamma) << ','
            << e.decision_events << '\n';
}

std::string RunLog::csv() const {
    std::ostringstream s;
    write_csv(s);
    return s.str();
}

// ---------------------------------------------------------------- training

RunLog run_training(const HarnessConfig& config, bus::EventBus& bus, const SyncHook& sync) {
    if (config.episodes == 0 || config.steps_per_episode == 0)
        throw Error(ErrorCode::Config, "episodes and steps_per_episode must be >= 1");
    if (!(config.lambda_min < config.lambda_max)) throw Error(ErrorCode::Config, "lambda bounds inverted");
    if (bus.closed()) throw Error(ErrorCode::BusClosed, "bus closed: unreachable before episode 0");

    Rng env_rng(derive_seed(config.seed, 0));
    CoverageEnv env = CoverageEnv::generate(config.env, env_rng);

    std::optional<ScheduleRunner> schedule;
    std::unique_ptr<bus::MessageStream> feedback;
    double gamma;
    if (config.schedule) {
        BaselineSchedule s = *config.schedule;
        s.lambda_min = config.lambda_min;
        s.lambda_max = config.lambda_max;
        schedule.emplace(s, derive_seed(config.seed, 1));
        gamma = schedule->initial();
    } else {
        feedback = bus.subscribe(bus::kFeedbackTopic);
        gamma = std::clamp(config.initial_gamma, config.lambda_min, config.lambda_max);
    }

    std::vector<QAgent> agents;
    for (int i = 0; i < config.env.agents; ++i)
        agents.emplace_back(config.alpha, gamma, config.agent_epsilon,
                            derive_seed(config.seed, 100 + static_cast<std::uint64_t>(i)));

    FeedbackInbox inbox(config.lambda_min, config.lambda_max);
    RunLog log;
    std::vector<Action> actions(agents.size());
    std::vector<double> qvalues;
    qvalues.reserve(agents.size() * kActionCount);

    for (std::uint64_t episode = 0; episode < config.episodes; ++episode) {
        std::string events;
        auto note = [&](const std::string& what) {
            if (!events.empty()) events += ';';
            events += what;
        };
        if (schedule) {
            if (auto g = schedule->update_at(episode)) {
                gamma = *g;
                note("schedule");
            }
        } else if (episode > 0) {
            if (sync) {
                const std::uint64_t expected = sync(log.traces_published);
                while (inbox.received() < expected) {
                    auto msg = feedback->next();
                    if (!msg) throw Error(ErrorCode::BusClosed, "bus closed while waiting for feedback");
                    inbox.receive(msg->payload);
                }
            }
            while (auto msg = feedback->poll()) inbox.receive(msg->payload);
            for (const auto& f : inbox.due(episode)) {
                gamma = f.value;
                note(f.decision);
            }
        }
        for (auto& a : agents) a.set_gamma(gamma);

        env.reset();
        double reward_sum = 0.0;
        for (std::uint64_t step = 0; step < config.steps_per_episode; ++step) {
            const std::uint64_t s = env.state_key();
            std::string state = env.state_string();
            qvalues.clear();
            for (std::size_t i = 0; i < agents.size(); ++i) {
                actions[i] = agents[i].choose(s);
                const auto& r = agents[i].row(s);
                qvalues.insert(qvalues.end(), r.begin(), r.end());
            }
            const StepResult result = env.step(actions);
            const std::uint64_t s_next = env.state_key();
            for (std::size_t i = 0; i < agents.size(); ++i)
                agents[i].q_update(s, actions[i], result.reward, s_next);
            reward_sum += result.reward;

            std::string action;
            for (std::size_t i = 0; i < actions.size(); ++i) {
                if (i) action += ',';
                action += to_string(actions[i]);
            }
            bus::Payload p = bus::Payload::object();
            p["agent"] = config.agent_name;
            p["episode"] = episode;
            p["step"] = step;
            p["reward"] = static_cast<double>(result.reward);
            p["action"] = std::move(action);
            p["state"] = std::move(state);
            p["qvalues"] = qvalues;
            p["gamma"] = gamma;
            bus.publish(bus::kTraceTopic, std::move(p));
            ++log.traces_published;
        }
        log.episodes.push_back(
            {episode, reward_sum / static_cast<double>(config.steps_per_episode), gamma, std::move(events)});
    }

    std::uint64_t h = kFnvOffset;
    for (const auto& a : agents) fnv_mix(h, a.digest());
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    log.q_digest = hex;
    log.warnings = inbox.warnings();
    return log;
}

}  // namespace histune::rl
