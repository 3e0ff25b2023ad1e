#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>

namespace swe4dvar {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidDimensionError : public Error { using Error::Error; };
class IndexOutOfRangeError : public Error { using Error::Error; };
class ShapeMismatchError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class SizeGuardError : public Error { using Error::Error; };
class FactorizationError : public Error { using Error::Error; };
class ConvergenceError : public Error { using Error::Error; };

/// Malformed CSV input; carries the 1-based line and character column where the offending token starts.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t row, std::size_t column)
        : Error("line " + std::to_string(row) + ", column " + std::to_string(column) + ": " + what),
          row_(row),
          column_(column) {}

    std::size_t row() const noexcept { return row_; }
    std::size_t column() const noexcept { return column_; }

private:
    std::size_t row_;
    std::size_t column_;
};

/// Raised by the forward model; step is the index of the failing timestep (0-based).
class ModelError : public Error {
public:
    ModelError(const std::string& what, std::size_t step) : Error(what), step_(step) {}
    std::size_t step() const noexcept { return step_; }
    void set_step(std::size_t step) noexcept { step_ = step; }

private:
    std::size_t step_;
};

class CflViolationError : public ModelError { using ModelError::ModelError; };
class NonFiniteStateError : public ModelError { using ModelError::ModelError; };

/// CG met a direction with non-positive curvature. The iterate reached so far is kept.
class NegativeCurvatureError : public Error {
public:
    NegativeCurvatureError(const std::string& what, Eigen::VectorXd iterate, std::size_t iteration)
        : Error(what), iterate_(std::move(iterate)), iteration_(iteration) {}

    const Eigen::VectorXd& iterate() const noexcept { return iterate_; }
    std::size_t iteration() const noexcept { return iteration_; }

private:
    Eigen::VectorXd iterate_;
    std::size_t iteration_;
};

}  // namespace swe4dvar
