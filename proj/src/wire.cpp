#include "histune/wire.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>

#include "histune/error.hpp"

namespace histune::bus {

namespace {

[[noreturn]] void violation(std::string_view topic, const std::string& what) {
    throw Error(ErrorCode::SchemaViolation, "schema violation on '" + std::string(topic) + "': " + what);
}

enum class Field { Int, UInt, Number, String, NumberArray };

bool finite_number(const Payload& v) {
    return v.is_number() && (!v.is_number_float() || std::isfinite(v.get<double>()));
}

bool all_finite(const Payload& v) {
    if (v.is_number_float()) return std::isfinite(v.get<double>());
    if (v.is_structured()) return std::all_of(v.begin(), v.end(), [](const Payload& e) { return all_finite(e); });
    return true;
}

bool matches(const Payload& v, Field f) {
    switch (f) {
    case Field::Int: return v.is_number_integer();
    case Field::UInt: return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    case Field::Number: return finite_number(v);
    case Field::String: return v.is_string();
    case Field::NumberArray:
        return v.is_array() && std::all_of(v.begin(), v.end(), [](const Payload& e) { return finite_number(e); });
    }
    return false;
}

struct FieldSpec {
    const char* name;
    Field type;
    bool required;
};

void check_fields(std::string_view topic, const Payload& p, std::initializer_list<FieldSpec> spec) {
    if (!p.is_object()) violation(topic, "payload is not an object");
    for (const auto& f : spec) {
        auto it = p.find(f.name);
        if (it == p.end()) {
            if (f.required) violation(topic, std::string("missing field '") + f.name + "'");
            continue;
        }
        if (!matches(*it, f.type)) violation(topic, std::string("field '") + f.name + "' has the wrong type");
    }
    for (auto it = p.begin(); it != p.end(); ++it) {
        const bool known = std::any_of(spec.begin(), spec.end(), [&](const FieldSpec& f) { return it.key() == f.name; });
        if (!known) violation(topic, "unexpected field '" + it.key() + "'");
    }
}

void check_enum(std::string_view topic, const Payload& p, const char* field, std::initializer_list<std::string_view> allowed) {
    const auto& v = p.at(field);
    if (!v.is_string()) violation(topic, std::string("field '") + field + "' must be a string");
    const auto& s = v.get_ref<const std::string&>();
    if (std::find(allowed.begin(), allowed.end(), s) == allowed.end())
        violation(topic, std::string("field '") + field + "' has unknown value '" + s + "'");
}

}  // namespace

void validate_topic(std::string_view topic) {
    if (topic.empty()) throw Error(ErrorCode::SchemaViolation, "schema violation: empty topic");
    if (topic.find('\n') != std::string_view::npos || topic.find('\r') != std::string_view::npos)
        throw Error(ErrorCode::SchemaViolation, "schema violation: topic contains a newline");
}

void validate_payload(std::string_view topic, const Payload& payload) {
    validate_topic(topic);
    if (topic == kTraceTopic) {
        check_fields(topic, payload,
                     {{"agent", Field::String, true},
                      {"episode", Field::UInt, true},
                      {"step", Field::UInt, true},
                      {"reward", Field::Number, true},
                      {"action", Field::String, true},
                      {"state", Field::String, true},
                      {"qvalues", Field::NumberArray, true},
                      {"gamma", Field::Number, true}});
    } else if (topic == kHistoryTopic) {
        check_fields(topic, payload,
                     {{"kind", Field::String, true},
                      {"episode", Field::UInt, false},
                      {"window_index", Field::UInt, false},
                      {"value", Field::Number, true},
                      {"members", Field::NumberArray, false},
                      {"gamma", Field::Number, true}});
        check_enum(topic, payload, "kind", {"episode_avg", "window_avg", "stable_window"});
    } else if (topic == kFeedbackTopic) {
        check_fields(topic, payload,
                     {{"kind", Field::String, true},
                      {"name", Field::String, true},
                      {"value", Field::Number, true},
                      {"effective_episode", Field::UInt, true},
                      {"decision", Field::String, true}});
        check_enum(topic, payload, "kind", {"set_hyperparameter"});
        check_enum(topic, payload, "decision", {"new_max", "return_to_max", "random", "increment", "decrement"});
    } else if (!payload.is_object()) {
        violation(topic, "payload is not an object");
    } else if (!all_finite(payload)) {
        violation(topic, "payload contains a non-finite number");
    }
}

std::string encode(const Envelope& envelope) {
    validate_payload(envelope.topic, envelope.payload);
    Payload line = Payload::object();
    line["topic"] = envelope.topic;
    line["seq"] = envelope.seq;
    line["ts"] = envelope.ts;
    line["payload"] = envelope.payload;
    std::string out;
    try {
        out = line.dump();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::SchemaViolation, std::string("schema violation: ") + e.what());
    }
    out.push_back('\n');
    return out;
}

Envelope decode(std::string_view line) {
    if (!line.empty() && line.back() == '\n') line.remove_suffix(1);
    if (auto nl = line.find('\n'); nl != std::string_view::npos)
        throw Error(ErrorCode::ParseError, "parse error at byte " + std::to_string(nl) + ": embedded newline");

    Payload doc;
    try {
        doc = Payload::parse(line.begin(), line.end());
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::ParseError, "parse error at byte " + std::to_string(e.byte) + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
        // Number overflow and similar; the parser does not report a position.
        throw Error(ErrorCode::ParseError, "parse error at byte 0: " + std::string(e.what()));
    }

    auto fail = [](const std::string& what) { throw Error(ErrorCode::ParseError, "parse error at byte 0: " + what); };
    if (!doc.is_object()) fail("line is not a JSON object");
    if (doc.size() != 4) fail("envelope must have exactly topic, seq, ts, payload");
    auto topic = doc.find("topic");
    auto seq = doc.find("seq");
    auto ts = doc.find("ts");
    auto payload = doc.find("payload");
    if (topic == doc.end() || !topic->is_string()) fail("missing string 'topic'");
    if (seq == doc.end() || !seq->is_number_unsigned()) fail("missing non-negative integer 'seq'");
    if (ts == doc.end() || !ts->is_number_integer()) fail("missing integer 'ts'");
    if (payload == doc.end() || !payload->is_object()) fail("missing object 'payload'");

    Envelope env;
    env.topic = topic->get<std::string>();
    env.seq = seq->get<std::uint64_t>();
    if (ts->is_number_unsigned() && ts->get<std::uint64_t>() > static_cast<std::uint64_t>(INT64_MAX))
        fail("'ts' out of range");
    env.ts = ts->get<std::int64_t>();
    env.payload = std::move(*payload);
    validate_payload(env.topic, env.payload);
    return env;
}

}  // namespace histune::bus
