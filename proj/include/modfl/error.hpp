#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace ModFL {

enum class ErrorKind {
    config,         // bad experiment configuration or unknown keys
    registry,       // unknown architecture id
    spec,           // malformed model specification
    shape,          // tensor/parameter shape mismatch
    data,           // dataset contents violate a precondition
    ingestion,      // unreadable or malformed dataset files
    partition,      // client partition cannot be satisfied
    protocol,       // federation round failure
    compatibility,  // module boundary mismatch
    csv,            // malformed metrics CSV
    comparison,     // incompatible CSVs in compare
    runtime,        // anything else
};

// Process exit code / C API category: 1 config, 2 data, 3 runtime.
inline int error_category(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::config:
        case ErrorKind::registry:
            return 1;
        case ErrorKind::data:
        case ErrorKind::ingestion:
        case ErrorKind::partition:
            return 2;
        default:
            return 3;
    }
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string msg)
        : std::runtime_error(std::move(msg)), kind_(kind) {}

    ErrorKind kind() const { return kind_; }
    int category() const { return error_category(kind_); }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
    throw Error(kind, msg);
}

}  // namespace ModFL
