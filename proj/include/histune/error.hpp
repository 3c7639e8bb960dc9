#pragma once

#include <stdexcept>
#include <string>

namespace histune {

/// Failure categories shared by every module. The C API maps these
/// one-to-one onto `histune_status` values.
enum class ErrorCode {
    InvalidArgument = 1,
    EmptyEpisode,
    MalformedWindow,
    BusClosed,
    SchemaViolation,
    ParseError,
    OrderingViolation,
    TimeRegression,
    UnknownNode,
    NotYetCreated,
    NodeEnded,
    Config,
    NonFinite,
    Io,
    CorruptLog,
    Transport,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace histune
