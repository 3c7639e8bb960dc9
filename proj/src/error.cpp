#include "histune/error.hpp"

namespace histune {

const char* error_code_name(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::EmptyEpisode: return "empty episode";
    case ErrorCode::MalformedWindow: return "malformed window";
    case ErrorCode::BusClosed: return "bus closed";
    case ErrorCode::SchemaViolation: return "schema violation";
    case ErrorCode::ParseError: return "parse error";
    case ErrorCode::OrderingViolation: return "ordering violation";
    case ErrorCode::TimeRegression: return "time regression";
    case ErrorCode::UnknownNode: return "unknown node";
    case ErrorCode::NotYetCreated: return "not yet created";
    case ErrorCode::NodeEnded: return "node ended";
    case ErrorCode::Config: return "configuration error";
    case ErrorCode::NonFinite: return "non-finite value";
    case ErrorCode::Io: return "i/o error";
    case ErrorCode::CorruptLog: return "corrupt log";
    case ErrorCode::Transport: return "transport error";
    }
    return "unknown error";
}

}  // namespace histune
