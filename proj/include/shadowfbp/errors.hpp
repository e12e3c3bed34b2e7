#pragma once

#include <stdexcept>
#include <string>

namespace shadowfbp {

/// Base class of every failure raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid model or solver input (bad parameter box, insolvent portfolio).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// The requested quantity does not exist in the current parameter regime.
class RegimeError : public Error {
public:
    using Error::Error;
};

/// A formula was evaluated outside its domain (negative discriminant, etc).
class DomainError : public Error {
public:
    using Error::Error;
};

/// L = P/Q evaluated where |Q| is below the configured floor.
class SingularEvaluation : public Error {
public:
    using Error::Error;
};

/// The problem has infinite value; no free-boundary solution exists.
class IllPosedError : public Error {
public:
    using Error::Error;
};

/// Shooting could not bracket the root, or G(alpha) was not monotone.
class BracketError : public Error {
public:
    using Error::Error;
};

/// The ODE integrator or a singular hand-off failed.
class StepFailure : public Error {
public:
    using Error::Error;
};

/// Adaptive quadrature did not reach its tolerance.
class QuadratureError : public Error {
public:
    QuadratureError(const std::string& what, double achieved)
        : Error(what), achieved_error(achieved) {}
    double achieved_error;
};

/// Simulation configuration exceeds the work budget or a sanity cap.
class BudgetError : public Error {
public:
    using Error::Error;
};

}  // namespace shadowfbp
