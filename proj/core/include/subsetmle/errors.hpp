#pragma once

#include <stdexcept>
#include <string>

namespace subsetmle {

/// Parameter outside its admissible open set (boundary values included).
struct DomainError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Invalid experiment or model configuration (dimensions, file schemas, ...).
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Caller broke an API contract (mismatched dimensions between arguments).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

/// Numerical failure inside a computation. For factorization failures the
/// index of the first non-positive pivot is recorded.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg, int pivot_index = -1)
        : std::runtime_error(msg), pivot(pivot_index) {}
    int pivot;
};

/// Optimizer could not produce a converged fit from any start.
struct FitError : std::runtime_error {
    explicit FitError(const std::string& msg, double best_grad_norm_seen)
        : std::runtime_error(msg), best_grad_norm(best_grad_norm_seen) {}
    double best_grad_norm;
};

/// A Monte Carlo experiment is unusable (e.g. too many optimizer failures).
struct ExperimentError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace subsetmle
