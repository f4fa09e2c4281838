#pragma once

#include <stdexcept>
#include <string>

namespace bregbal {

// All library errors derive from Error so callers can catch one base type.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Argument outside the closed (or open, where required) domain of a family.
struct DomainError : Error {
  using Error::Error;
};

struct LengthMismatch : Error {
  using Error::Error;
};

// |eta| exceeded the configured clamp before exponentiation.
struct OverflowGuard : Error {
  using Error::Error;
};

struct RankDeficient : Error {
  using Error::Error;
};

struct InsufficientData : Error {
  using Error::Error;
};

struct UnsupportedConfig : Error {
  using Error::Error;
};

// Recovered weights violate the balance constraints beyond tolerance.
struct BalanceViolation : Error {
  using Error::Error;
};

struct DegenerateDenominator : Error {
  using Error::Error;
};

// Empirical Jacobian of the dual estimating equations is not invertible.
struct SingularBread : Error {
  using Error::Error;
};

// Fitted propensity outside [1e-12, 1 - 1e-12]; never truncated silently.
struct ExtremeProbability : Error {
  using Error::Error;
};

struct DegenerateArm : Error {
  using Error::Error;
};

struct ParseError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

}  // namespace bregbal
