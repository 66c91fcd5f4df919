#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace fraclqr {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A model parameter violates its domain (c = 0, alpha outside (1/2, 1], ...).
class ModelError : public Error {
public:
    using Error::Error;
};

/// The discount rate or weight does not satisfy lambda > 2 rho_tilde, mu in (rho_tilde, lambda/2].
class AdmissibilityError : public Error {
public:
    using Error::Error;
};

/// Weighted kernel norm is not below one.
class ContractionError : public Error {
public:
    using Error::Error;
};

/// Grid inconsistent with the model (delay off-grid, mismatched grids, ...).
class GridError : public Error {
public:
    using Error::Error;
};

/// Iterative procedure stopped before reaching its tolerance.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, double achieved)
        : Error(what + " (achieved " + format(achieved) + ")"), achieved_(achieved) {}

    double achieved() const noexcept { return achieved_; }

private:
    static std::string format(double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3e", v);
        return buf;
    }

    double achieved_;
};

/// A simulated path left the finite range.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, int node)
        : Error(what + " at node " + std::to_string(node)), node_(node) {}

    int node() const noexcept { return node_; }

private:
    int node_;
};

/// Two solution routes or residual checks disagree beyond tolerance.
class DiscretizationError : public Error {
public:
    using Error::Error;
};

/// Malformed run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace fraclqr
