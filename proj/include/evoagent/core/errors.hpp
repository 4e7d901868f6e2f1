#pragma once

#include <stdexcept>
#include <string>

namespace evoagent {

// Error taxonomy shared across modules. Each maps to one failure class of the
// public contracts (bad config, bad shapes, bad lookups, ...).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error("validation error: " + msg) {}
};

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct LookupError : std::runtime_error {
    explicit LookupError(const std::string& msg) : std::runtime_error("lookup error: " + msg) {}
};

struct BatchError : std::runtime_error {
    explicit BatchError(const std::string& msg) : std::runtime_error("batch error: " + msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

struct PlanningError : std::runtime_error {
    explicit PlanningError(const std::string& msg) : std::runtime_error("planning error: " + msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

}  // namespace evoagent
