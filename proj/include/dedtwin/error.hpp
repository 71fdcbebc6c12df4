#pragma once

#include <stdexcept>
#include <string>

namespace dedtwin {

// Exit-code families used by the command-line front end.
enum class ErrorKind {
    config = 2,
    numerical = 3,
    dependency = 4,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class InvalidInput : public Error {
public:
    explicit InvalidInput(const std::string& what) : Error(ErrorKind::config, what) {}
};

class DimensionMismatch : public Error {
public:
    explicit DimensionMismatch(const std::string& what) : Error(ErrorKind::config, what) {}
};

class MaterialDataError : public Error {
public:
    explicit MaterialDataError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

/// Nonlinear iteration (Picard or Newton) failed to reach tolerance.
class StepFailure : public NumericalError {
public:
    StepFailure(const std::string& what, int iterations, double last_change)
        : NumericalError(what + " (iterations=" + std::to_string(iterations) +
                         ", last change=" + std::to_string(last_change) + ")"),
          iterations_(iterations),
          last_change_(last_change) {}
    int iterations() const noexcept { return iterations_; }
    double last_change() const noexcept { return last_change_; }

private:
    int iterations_;
    double last_change_;
};

class LinearSolveError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class ConstraintError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Non-finite state or loss; carries the step or epoch index where it happened.
class DivergenceError : public NumericalError {
public:
    DivergenceError(const std::string& what, long index)
        : NumericalError(what + " at index " + std::to_string(index)), index_(index) {}
    long index() const noexcept { return index_; }

private:
    long index_;
};

class StiffnessError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class DegenerateData : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class ConvergenceRegimeError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class DependencyError : public Error {
public:
    explicit DependencyError(const std::string& what) : Error(ErrorKind::dependency, what) {}
};

class StaleArtifactError : public Error {
public:
    explicit StaleArtifactError(const std::string& what) : Error(ErrorKind::dependency, what) {}
};

class FormatError : public Error {
public:
    explicit FormatError(const std::string& what) : Error(ErrorKind::config, what) {}
};

}  // namespace dedtwin
