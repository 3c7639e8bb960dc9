#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "json.hpp"

namespace histune::bus {

/// Payloads keep insertion order so encoded lines follow the documented
/// field order byte for byte.
using Payload = nlohmann::ordered_json;

inline constexpr std::string_view kTraceTopic = "rl-traces";
inline constexpr std::string_view kHistoryTopic = "history-awareness";
inline constexpr std::string_view kFeedbackTopic = "feedback";

struct Envelope {
    std::string topic;
    std::uint64_t seq = 0;
    std::int64_t ts = 0;
    Payload payload = Payload::object();

    bool operator==(const Envelope& other) const {
        return topic == other.topic && seq == other.seq && ts == other.ts && payload == other.payload;
    }
};

/// Non-empty and free of newlines. Throws Error(SchemaViolation) otherwise.
void validate_topic(std::string_view topic);

/// Checks a payload against the schema of a well-known topic; user topics
/// only need an object. Throws Error(SchemaViolation) naming the field.
void validate_payload(std::string_view topic, const Payload& payload);

/// One JSON object terminated by '\n':
/// {"topic":...,"seq":...,"ts":...,"payload":{...}}
std::string encode(const Envelope& envelope);

/// Accepts a single line with or without its trailing '\n'. Throws
/// Error(ParseError) with the byte offset on malformed input and
/// Error(SchemaViolation) when the payload fails its topic schema.
Envelope decode(std::string_view line);

}  // namespace histune::bus
