#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mnl {

/// Invalid or inconsistent configuration (bad schedule, unstable system, CFL violation...).
class ConfigurationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller passed arguments that violate an operation's preconditions.
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A numerical procedure produced an unusable result (singular matrix, zero variance...).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Structural property of an input does not hold (e.g. reducible Markov chain).
class StructuralError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite state produced while stepping a solver, surrogate or sampler.
/// `index` names the offending step / frame / path position.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, std::int64_t index)
        : std::runtime_error(what + " (at index " + std::to_string(index) + ")"), index_(index) {}

    std::int64_t index() const noexcept { return index_; }

private:
    std::int64_t index_;
};

}  // namespace mnl
