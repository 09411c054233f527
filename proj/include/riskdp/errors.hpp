#pragma once

#include <stdexcept>
#include <string>

namespace riskdp {

// Bad problem files, grids, or parameter combinations. CLI exit code 2.
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf propagation inside a solver. Carries stage/state context. CLI exit code 3.
class numeric_error : public std::runtime_error {
public:
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Family lacks the structure an operation needs (e.g. no global Lipschitz bound).
class unsupported_family_error : public std::runtime_error {
public:
    explicit unsupported_family_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Transition function left the state box at some (t, s, a, xi).
class dynamics_error : public std::runtime_error {
public:
    explicit dynamics_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Exact enumeration / atom propagation exceeded its hard cap.
class instance_too_large_error : public std::runtime_error {
public:
    explicit instance_too_large_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace riskdp
