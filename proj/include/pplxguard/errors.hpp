#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pplxguard {

// Every failure the library reports deliberately, as opposed to programming
// errors (those stay std::logic_error / std::invalid_argument).
enum class Errc {
    UnknownScheme,
    EmptyInput,
    InputTooLong,
    SpanMismatch,
    SchemeMismatch,
    UntrainedModel,
    EmptyCorpus,
    ExternalScorerUnavailable,
    ExternalScorerProtocol,
    Timeout,
    TooShort,
    EmptyField,
    UnsortedEdges,
    FileNotFound,
    ParseError,
    ConfigError,
};

inline const char* errc_name(Errc c) {
    switch (c) {
        case Errc::UnknownScheme:             return "UnknownScheme";
        case Errc::EmptyInput:                return "EmptyInput";
        case Errc::InputTooLong:              return "InputTooLong";
        case Errc::SpanMismatch:              return "SpanMismatch";
        case Errc::SchemeMismatch:            return "SchemeMismatch";
        case Errc::UntrainedModel:            return "UntrainedModel";
        case Errc::EmptyCorpus:               return "EmptyCorpus";
        case Errc::ExternalScorerUnavailable: return "ExternalScorerUnavailable";
        case Errc::ExternalScorerProtocol:    return "ExternalScorerProtocol";
        case Errc::Timeout:                   return "Timeout";
        case Errc::TooShort:                  return "TooShort";
        case Errc::EmptyField:                return "EmptyField";
        case Errc::UnsortedEdges:             return "UnsortedEdges";
        case Errc::FileNotFound:              return "FileNotFound";
        case Errc::ParseError:                return "ParseError";
        case Errc::ConfigError:               return "ConfigError";
    }
    return "UnknownError";
}

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& msg)
        : std::runtime_error(std::string(errc_name(code)) + ": " + msg), code_(code) {}

    Error(Errc code, const std::string& msg, std::size_t line)
        : std::runtime_error(std::string(errc_name(code)) + " at line " +
                             std::to_string(line) + ": " + msg),
          code_(code), line_(line) {}

    Errc code() const noexcept { return code_; }

    // 1-based input line for ParseError, 0 otherwise.
    std::size_t line() const noexcept { return line_; }

private:
    Errc code_;
    std::size_t line_ = 0;
};

[[noreturn]] inline void raise(Errc code, const std::string& msg) {
    throw Error(code, msg);
}

[[noreturn]] inline void raise(Errc code, const std::string& msg, std::size_t line) {
    throw Error(code, msg, line);
}

}  // namespace pplxguard
