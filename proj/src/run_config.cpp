#include "histune/run_config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "histune/error.hpp"

namespace histune::experiment {

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
    throw Error(ErrorCode::Config, "config key '" + key + "': expected " + expected + ", got '" + value + "'");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v, "a non-negative integer");
    return out;
}

int to_int(const std::string& key, const std::string& v) {
    int out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v, "an integer");
    return out;
}

double to_real(const std::string& key, const std::string& v) {
    double out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty() || !std::isfinite(out))
        bad_value(key, v, "a finite number");
    return out;
}

struct Field {
    const char* key;
    const char* doc;
    void (*set)(RunConfig&, const std::string& key, const std::string& value);
    std::string (*get)(const RunConfig&);
};

#define HT_UINT(name, member, doc)                                                                       \
    Field {                                                                                              \
        name, doc, [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_uint(k, v); }, \
            [](const RunConfig& c) { return std::to_string(c.member); }                                  \
    }
#define HT_INT(name, member, doc)                                                                       \
    Field {                                                                                             \
        name, doc, [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_int(k, v); }, \
            [](const RunConfig& c) { return std::to_string(c.member); }                                 \
    }
#define HT_REAL(name, member, doc)                                                                       \
    Field {                                                                                              \
        name, doc, [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_real(k, v); }, \
            [](const RunConfig& c) { return rl::format_double(c.member); }                               \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        HT_UINT("seed", seed, "master seed; every rng derives from it"),
        HT_UINT("episodes", episodes, "episodes per lifetime"),
        HT_UINT("steps_per_episode", steps_per_episode, "joint steps per episode"),
        HT_INT("grid_width", env.width, "grid cells along x"),
        HT_INT("grid_height", env.height, "grid cells along y"),
        HT_INT("users", env.users, "users placed on the grid"),
        HT_INT("agents", env.agents, "Q-learning agents"),
        HT_INT("coverage_radius", env.coverage_radius, "Euclidean coverage radius in cells"),
        HT_INT("state_bin", env.state_bin, "cells per side of the block a position is discretised to"),
        HT_INT("hotspots", env.hotspots, "0: uniform users; n: users clustered around n seeded hotspots"),
        HT_INT("hotspot_spread", env.hotspot_spread, "max per-axis offset of a user from its hotspot"),
        HT_REAL("alpha", alpha, "Q-learning rate"),
        HT_REAL("agent_epsilon", agent_epsilon, "action exploration probability"),
        Field{"tuner", "static | grid | random | history",
              [](RunConfig& c, const std::string&, const std::string& v) { c.tuner = tuner_kind_from_string(v); },
              [](const RunConfig& c) { return std::string(to_string(c.tuner)); }},
        Field{"initial_gamma", "starting gamma; empty means 0.9 for baselines, 0.5 for history",
              [](RunConfig& c, const std::string& k, const std::string& v) {
                  if (v.empty())
                      c.initial_gamma.reset();
                  else
                      c.initial_gamma = to_real(k, v);
              },
              [](const RunConfig& c) { return c.initial_gamma ? rl::format_double(*c.initial_gamma) : std::string(); }},
        HT_UINT("window_length", window_length, "episodes per tumbling window (x)"),
        Field{"th_stable_mode", "absolute | fraction (of the maximum reward, i.e. #users)",
              [](RunConfig& c, const std::string& k, const std::string& v) {
                  if (v == "absolute")
                      c.th_stable_mode = ThresholdMode::Absolute;
                  else if (v == "fraction")
                      c.th_stable_mode = ThresholdMode::Fraction;
                  else
                      bad_value(k, v, "absolute or fraction");
              },
              [](const RunConfig& c) {
                  return std::string(c.th_stable_mode == ThresholdMode::Absolute ? "absolute" : "fraction");
              }},
        HT_REAL("th_stable", th_stable, "stability threshold in reward units (absolute mode)"),
        HT_REAL("th_stable_fraction", th_stable_fraction, "stability threshold as a share of #users (fraction mode)"),
        HT_REAL("tuner_epsilon", tuner_epsilon, "tuner exploration probability"),
        HT_REAL("step_c", step_c, "increment/decrement step for gamma"),
        HT_REAL("lambda_min", lambda_min, "lower gamma bound"),
        HT_REAL("lambda_max", lambda_max, "upper gamma bound"),
        HT_REAL("p_random", p_random, "share of exploratory moves that jump to a random gamma"),
        HT_REAL("schedule_rate", schedule_rate, "grid schedule: gamma decrease per period"),
        HT_UINT("schedule_period", schedule_period, "grid/random schedule: episodes between updates"),
        Field{"trace_recording", "none | summary | full: decisions stored in the graph",
              [](RunConfig& c, const std::string&, const std::string& v) {
                  c.trace_recording = graph::trace_recording_from_string(v);
              },
              [](const RunConfig& c) { return std::string(graph::to_string(c.trace_recording)); }},
        Field{"agent_name", "agent id in traces and the graph",
              [](RunConfig& c, const std::string&, const std::string& v) { c.agent_name = v; },
              [](const RunConfig& c) { return c.agent_name; }},
        Field{"out", "output directory",
              [](RunConfig& c, const std::string&, const std::string& v) { c.out = v; },
              [](const RunConfig& c) { return c.out.string(); }},
    };
    return table;
}

#undef HT_UINT
#undef HT_INT
#undef HT_REAL

void for_each_line(const std::string& text, const std::function<void(std::size_t, const std::string&, const std::string&)>& fn) {
    std::istringstream in(text);
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(ErrorCode::Config, "config line " + std::to_string(number) + ": expected key = value");
        fn(number, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Config, "cannot read config file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace

const char* to_string(TunerKind k) {
    switch (k) {
    case TunerKind::Static: return "static";
    case TunerKind::Grid: return "grid";
    case TunerKind::Random: return "random";
    case TunerKind::History: return "history";
    }
    return "?";
}

TunerKind tuner_kind_from_string(const std::string& text) {
    if (text == "static") return TunerKind::Static;
    if (text == "grid") return TunerKind::Grid;
    if (text == "random") return TunerKind::Random;
    if (text == "history") return TunerKind::History;
    throw Error(ErrorCode::Config, "tuner must be static, grid, random or history; got '" + text + "'");
}

double RunConfig::effective_initial_gamma() const {
    if (initial_gamma) return *initial_gamma;
    return tuner == TunerKind::History ? 0.5 : 0.9;
}

double RunConfig::effective_th_stable() const {
    if (th_stable_mode == ThresholdMode::Absolute) return th_stable;
    return th_stable_fraction * static_cast<double>(env.users);
}

tuner::TunerConfig RunConfig::tuner_config() const {
    tuner::TunerConfig c;
    c.window_length = window_length;
    c.th_stable = effective_th_stable();
    c.epsilon = tuner_epsilon;
    c.step_c = step_c;
    c.lambda_min = lambda_min;
    c.lambda_max = lambda_max;
    c.p_random = p_random;
    return c;
}

rl::HarnessConfig RunConfig::harness_config() const {
    rl::HarnessConfig h;
    h.env = env;
    h.episodes = episodes;
    h.steps_per_episode = steps_per_episode;
    h.alpha = alpha;
    h.agent_epsilon = agent_epsilon;
    h.initial_gamma = effective_initial_gamma();
    h.lambda_min = lambda_min;
    h.lambda_max = lambda_max;
    h.agent_name = agent_name;
    h.seed = seed;
    if (tuner != TunerKind::History) {
        rl::BaselineSchedule s;
        s.kind = tuner == TunerKind::Static ? rl::ScheduleKind::Static
                 : tuner == TunerKind::Grid ? rl::ScheduleKind::GridDecay
                                            : rl::ScheduleKind::RandomEvery;
        s.initial_gamma = effective_initial_gamma();
        s.decay_rate = schedule_rate;
        s.period = schedule_period;
        s.lambda_min = lambda_min;
        s.lambda_max = lambda_max;
        h.schedule = s;
    }
    return h;
}

void RunConfig::validate() const {
    auto fail = [](const std::string& msg) { throw Error(ErrorCode::Config, msg); };
    if (episodes < 1) fail("episodes must be >= 1");
    if (steps_per_episode < 1) fail("steps_per_episode must be >= 1");
    if (env.width < 1 || env.height < 1) fail("grid_width and grid_height must be >= 1");
    if (env.users < 1) fail("users must be >= 1");
    if (env.agents < 1 || env.agents > 4) fail("agents must be between 1 and 4");
    if (env.coverage_radius < 0) fail("coverage_radius must be >= 0");
    if (env.state_bin < 1) fail("state_bin must be >= 1");
    if (env.hotspots < 0) fail("hotspots must be >= 0");
    if (env.hotspot_spread < 0) fail("hotspot_spread must be >= 0");
    if (!(alpha > 0.0 && alpha <= 1.0)) fail("alpha must be in (0, 1]");
    if (!(agent_epsilon >= 0.0 && agent_epsilon <= 1.0)) fail("agent_epsilon must be in [0, 1]");
    if (th_stable_fraction <= 0.0) fail("th_stable_fraction must be > 0");
    if (schedule_rate < 0.0) fail("schedule_rate must be >= 0");
    if (schedule_period < 1) fail("schedule_period must be >= 1");
    if (agent_name.empty()) fail("agent_name must not be empty");
    const double g = effective_initial_gamma();
    if (!(g >= lambda_min && g <= lambda_max)) fail("initial_gamma must lie within [lambda_min, lambda_max]");
    tuner_config().validate();
}

void RunConfig::set(const std::string& key, const std::string& value) {
    for (const auto& f : fields()) {
        if (key == f.key) {
            f.set(*this, key, value);
            return;
        }
    }
    throw Error(ErrorCode::Config, "unknown config key '" + key + "'");
}

std::string RunConfig::to_text() const {
    std::string out;
    for (const auto& f : fields()) {
        out += f.key;
        out += " = ";
        out += f.get(*this);
        out += '\n';
    }
    return out;
}

RunConfig parse_run_config(const std::string& text, RunConfig base,
                           const std::function<bool(const std::string&, const std::string&)>& extra) {
    for_each_line(text, [&](std::size_t number, const std::string& key, const std::string& value) {
        for (const auto& f : fields()) {
            if (key == f.key) {
                f.set(base, key, value);
                return;
            }
        }
        if (extra && extra(key, value)) return;
        throw Error(ErrorCode::Config,
                    "config line " + std::to_string(number) + ": unknown key '" + key + "'");
    });
    return base;
}

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(read_file(path)); }

std::string describe_run_config() {
    const RunConfig defaults;
    std::string out;
    for (const auto& f : fields()) {
        std::string line = std::string(f.key) + " = " + f.get(defaults);
        if (line.size() < 34) line.resize(34, ' ');
        out += line + "  # " + f.doc + "\n";
    }
    out += "matrix = static:0.9,grid,random,history  # compare only: kind or kind:gamma list\n";
    out += "seeds = 1-20                      # compare only: numbers and a-b ranges\n";
    out += "gamma_sweep = false               # compare only: run kinds without a gamma at 0.1 .. 0.9\n";
    return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& spec) {
    std::vector<std::uint64_t> seeds;
    std::istringstream in(spec);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        if (auto dash = item.find('-'); dash != std::string::npos) {
            const auto lo = to_uint("seeds", trim(item.substr(0, dash)));
            const auto hi = to_uint("seeds", trim(item.substr(dash + 1)));
            if (hi < lo) bad_value("seeds", item, "an ascending a-b range");
            for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
        } else {
            seeds.push_back(to_uint("seeds", item));
        }
    }
    if (seeds.empty()) bad_value("seeds", spec, "at least one seed");
    return seeds;
}

std::vector<Variant> parse_matrix(const std::string& spec, bool sweep) {
    std::vector<Variant> out;
    std::istringstream in(spec);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        const auto colon = item.find(':');
        const TunerKind kind = tuner_kind_from_string(trim(item.substr(0, colon)));
        auto add = [&](double gamma) {
            out.push_back({std::string(to_string(kind)) + ":" + rl::format_double(gamma), kind, gamma});
        };
        if (colon != std::string::npos) {
            add(to_real("matrix", trim(item.substr(colon + 1))));
        } else if (sweep) {
            for (int i = 1; i <= 9; ++i) add(i / 10.0);
        } else {
            RunConfig probe;
            probe.tuner = kind;
            add(probe.effective_initial_gamma());
        }
    }
    if (out.empty()) bad_value("matrix", spec, "at least one tuner kind");
    for (std::size_t i = 0; i < out.size(); ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (out[i].label == out[j].label) bad_value("matrix", spec, "distinct entries");
    return out;
}

CompareConfig parse_compare_config(const std::string& text) {
    std::string matrix = "static:0.9,grid,random,history";
    std::string seeds = "1-20";
    bool sweep = false;
    CompareConfig c;
    c.base = parse_run_config(text, {}, [&](const std::string& key, const std::string& value) {
        if (key == "matrix") {
            matrix = value;
        } else if (key == "seeds") {
            seeds = value;
        } else if (key == "gamma_sweep") {
            if (value != "true" && value != "false") bad_value(key, value, "true or false");
            sweep = value == "true";
        } else {
            return false;
        }
        return true;
    });
    c.variants = parse_matrix(matrix, sweep);
    c.seeds = parse_seed_list(seeds);
    return c;
}

CompareConfig load_compare_config(const std::filesystem::path& path) { return parse_compare_config(read_file(path)); }

}  // namespace histune::experiment
