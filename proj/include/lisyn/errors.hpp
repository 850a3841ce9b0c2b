#ifndef LISYN_ERRORS_HPP
#define LISYN_ERRORS_HPP

#include <stdexcept>

namespace lisyn {

// Base class for every error this library throws.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Input shapes disagree (point counts, dimensions, vector lengths).
struct DimensionMismatch : Error { using Error::Error; };
// A weight vector that must carry mass sums to zero.
struct AllZero : Error { using Error::Error; };
// NaN/Inf, or a negative entry where nonnegativity is required.
struct NonFinite : Error { using Error::Error; };
// Mass placed outside the reference support (absolute continuity broken).
struct SupportViolation : Error { using Error::Error; };
// The accuracy budget cannot be met by any reachable posterior.
struct Infeasible : Error { using Error::Error; };
// An iterative solver hit its iteration cap before its tolerance.
struct NoConvergence : Error { using Error::Error; };
// Root bracketing failed after the allowed number of doublings.
struct BracketFailure : Error { using Error::Error; };
// Armijo backtracking could not find a decrease step.
struct LineSearchFailure : Error { using Error::Error; };
// Every restart of a multi-start optimization failed.
struct AllRestartsFailed : Error { using Error::Error; };
// A matrix required to be symmetric positive definite is not.
struct NotSpd : Error { using Error::Error; };
// Malformed configuration or file I/O problem.
struct ConfigError : Error { using Error::Error; };

}  // namespace lisyn

#endif
