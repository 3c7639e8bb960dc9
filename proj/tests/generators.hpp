#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "histune/random.hpp"
#include "histune/wire.hpp"

namespace histune::testgen {

/// Printable ASCII plus the characters that need escaping on the wire.
inline std::string random_text(Rng& rng, std::size_t max_len = 24) {
    static const std::string extra[] = {"\n", "\r", "\t", "\"", "\\", "\x01", "\xc3\xa9", "\xe2\x82\xac", "/", "{}"};
    std::string s;
    const std::size_t n = uniform_index(rng, max_len + 1);
    for (std::size_t i = 0; i < n; ++i) {
        if (uniform01(rng) < 0.15)
            s += extra[uniform_index(rng, std::size(extra))];
        else
            s.push_back(static_cast<char>(' ' + uniform_index(rng, 95)));
    }
    return s;
}

inline double random_real(Rng& rng) {
    switch (uniform_index(rng, 4)) {
    case 0: return uniform_in(rng, -1.0, 1.0);
    case 1: return uniform_in(rng, -1e6, 1e6);
    case 2: return static_cast<double>(uniform_index(rng, 100));
    default: return uniform_in(rng, -1.0, 1.0) * 1e-300;
    }
}

inline std::vector<double> random_reals(Rng& rng, std::size_t max_len) {
    std::vector<double> v(uniform_index(rng, max_len + 1));
    for (double& x : v) x = random_real(rng);
    return v;
}

inline bus::Payload random_user_value(Rng& rng, int depth) {
    switch (uniform_index(rng, depth > 2 ? 5 : 7)) {
    case 0: return random_text(rng);
    case 1: return random_real(rng);
    case 2: return static_cast<std::int64_t>(rng()) >> uniform_index(rng, 63);
    case 3: return uniform01(rng) < 0.5;
    case 4: return nullptr;
    case 5: {
        bus::Payload a = bus::Payload::array();
        for (std::size_t i = uniform_index(rng, 4); i > 0; --i) a.push_back(random_user_value(rng, depth + 1));
        return a;
    }
    default: {
        bus::Payload o = bus::Payload::object();
        for (std::size_t i = uniform_index(rng, 4); i > 0; --i) o[random_text(rng, 8)] = random_user_value(rng, depth + 1);
        return o;
    }
    }
}

/// A valid envelope on one of the three pipeline topics or a user topic.
inline bus::Envelope random_envelope(Rng& rng) {
    bus::Envelope e;
    e.seq = rng() >> uniform_index(rng, 64);
    e.ts = static_cast<std::int64_t>(rng()) >> uniform_index(rng, 63);
    static const char* decisions[] = {"new_max", "return_to_max", "random", "increment", "decrement"};
    static const char* kinds[] = {"episode_avg", "window_avg", "stable_window"};
    switch (uniform_index(rng, 4)) {
    case 0:
        e.topic = std::string(bus::kTraceTopic);
        e.payload["agent"] = random_text(rng);
        e.payload["episode"] = uniform_index(rng, 1000);
        e.payload["step"] = uniform_index(rng, 1000);
        e.payload["reward"] = random_real(rng);
        e.payload["action"] = random_text(rng, 6);
        e.payload["state"] = random_text(rng);
        e.payload["qvalues"] = random_reals(rng, 5);
        e.payload["gamma"] = uniform01(rng);
        break;
    case 1: {
        e.topic = std::string(bus::kHistoryTopic);
        const std::size_t kind = uniform_index(rng, 3);
        e.payload["kind"] = kinds[kind];
        e.payload["episode"] = uniform_index(rng, 1000);
        if (kind > 0) e.payload["window_index"] = uniform_index(rng, 300);
        e.payload["value"] = random_real(rng);
        if (kind == 2) e.payload["members"] = random_reals(rng, 6);
        e.payload["gamma"] = uniform01(rng);
        break;
    }
    case 2:
        e.topic = std::string(bus::kFeedbackTopic);
        e.payload["kind"] = "set_hyperparameter";
        e.payload["name"] = "gamma";
        e.payload["value"] = uniform01(rng);
        e.payload["effective_episode"] = uniform_index(rng, 1000);
        e.payload["decision"] = decisions[uniform_index(rng, 5)];
        break;
    default: {
        do {
            e.topic = random_text(rng, 12);
        } while (e.topic.empty() || e.topic.find_first_of("\r\n") != std::string::npos ||
                 e.topic == bus::kTraceTopic || e.topic == bus::kHistoryTopic || e.topic == bus::kFeedbackTopic);
        e.payload = bus::Payload::object();
        for (std::size_t i = uniform_index(rng, 5); i > 0; --i) e.payload[random_text(rng, 8)] = random_user_value(rng, 0);
        break;
    }
    }
    return e;
}

/// Random bytes, or a valid line with a few bytes flipped, dropped or cut.
inline std::string fuzz_line(Rng& rng) {
    if (uniform01(rng) < 0.3) {
        std::string s(uniform_index(rng, 64), '\0');
        for (char& c : s) c = static_cast<char>(uniform_index(rng, 256));
        return s;
    }
    std::string s = bus::encode(random_envelope(rng));
    const std::size_t edits = 1 + uniform_index(rng, 4);
    for (std::size_t i = 0; i < edits && !s.empty(); ++i) {
        const std::size_t pos = uniform_index(rng, s.size());
        switch (uniform_index(rng, 4)) {
        case 0: s[pos] = static_cast<char>(uniform_index(rng, 256)); break;
        case 1: s.erase(pos, 1); break;
        case 2: s.resize(pos); break;
        default: s.insert(pos, 1, "{}[]\",:\\0e-"[uniform_index(rng, 12)]); break;
        }
    }
    return s;
}

}  // namespace histune::testgen
