#pragma once

#include <stdexcept>
#include <string>

namespace sage {

/// Root of every error the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input data violates a documented schema or invariant.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Bad configuration or command-line usage.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A backend could not be reached or answered with a failure status.
class ProviderError : public Error {
public:
    ProviderError(const std::string& what, int status = 0) : Error(what), status_(status) {}
    /// Last HTTP status seen; 0 for connection-level failures.
    int status() const noexcept { return status_; }

private:
    int status_;
};

/// A provider returned data that breaks its own contract (e.g. wrong dimension).
class IntegrityError : public Error {
public:
    using Error::Error;
};

/// A file-backed provider has no entry for the requested text.
class LookupError : public Error {
public:
    using Error::Error;
};

/// No score could be extracted from a model response.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::string response)
        : Error(what), response_(std::move(response)) {}
    const std::string& response() const noexcept { return response_; }

private:
    std::string response_;
};

/// Scoring of one pair failed; wraps the underlying cause with the pair id.
class ScoringError : public Error {
public:
    enum class Cause { transport, parse, other };

    ScoringError(std::string pair_id, Cause cause, const std::string& what, std::string response = {})
        : Error("pair " + pair_id + ": " + what),
          pair_id_(std::move(pair_id)),
          cause_(cause),
          response_(std::move(response)) {}

    const std::string& pair_id() const noexcept { return pair_id_; }
    Cause cause() const noexcept { return cause_; }
    const std::string& response() const noexcept { return response_; }

private:
    std::string pair_id_;
    Cause cause_;
    std::string response_;
};

}  // namespace sage
