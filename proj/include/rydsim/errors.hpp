#pragma once

#include <stdexcept>
#include <string>

namespace rydsim {

// Requested object exceeds a hard implementation cap; message names the cap.
struct SizeCapError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A grid-indexed operation was given a lattice without (col,row) indices.
struct GridIndexError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// State vector and operator were built over different bases.
struct BasisMismatchError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Time integration diverged (norm drift beyond tolerance).
struct IntegrationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Iterative solver failed to reach its tolerance.
struct ConvergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Configuration file rejected (schema violation, bad value, unknown key).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Analysis input does not admit the requested estimator (degenerate fit,
// missing peak, empty overlap, ...).
struct AnalysisError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace rydsim
