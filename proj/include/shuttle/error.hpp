#ifndef SHUTTLE_ERROR_HPP
#define SHUTTLE_ERROR_HPP

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace shuttle {

/// Base class of every error raised by the library. `kind()` is a stable
/// machine-readable tag used by the CLI when recording stage status.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
    virtual const char* kind() const noexcept { return "error"; }
};

class ParseError : public Error {
public:
    ParseError(std::string path, const std::string& what)
        : Error(path.empty() ? what : path + ": " + what), path_(std::move(path)), message_(what) {}
    const std::string& path() const noexcept { return path_; }
    const std::string& message() const noexcept { return message_; }
    const char* kind() const noexcept override { return "parse"; }

private:
    std::string path_;
    std::string message_;
};

class ValidationError : public Error {
public:
    ValidationError(const std::string& what, std::vector<std::string> offenders = {})
        : Error(what), offenders_(std::move(offenders)) {}
    const std::vector<std::string>& offenders() const noexcept { return offenders_; }
    const char* kind() const noexcept override { return "validation"; }

private:
    std::vector<std::string> offenders_;
};

class ResolutionError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "resolution"; }
};

class SetupError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "setup"; }
};

class RangeError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "range"; }
};

class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, double last_residual)
        : Error(what), last_residual_(last_residual) {}
    double last_residual() const noexcept { return last_residual_; }
    const char* kind() const noexcept override { return "convergence"; }

private:
    double last_residual_;
};

class NumericError : public Error {
public:
    NumericError(const std::string& what, std::vector<double> residuals = {})
        : Error(what), residuals_(std::move(residuals)) {}
    const std::vector<double>& residuals() const noexcept { return residuals_; }
    const char* kind() const noexcept override { return "numeric"; }

private:
    std::vector<double> residuals_;
};

/// Root finder gave up. Carries the best iterate seen and its residual.
class NonConvergenceError : public Error {
public:
    NonConvergenceError(const std::string& what, double best_voltage, double best_residual)
        : Error(what), best_voltage_(best_voltage), best_residual_(best_residual) {}
    double best_voltage() const noexcept { return best_voltage_; }
    double best_residual() const noexcept { return best_residual_; }
    const char* kind() const noexcept override { return "non_convergence"; }

private:
    double best_voltage_;
    double best_residual_;
};

class TunnellingSuspected : public Error {
public:
    TunnellingSuspected(const std::string& what, std::size_t step) : Error(what), step_(step) {}
    std::size_t step() const noexcept { return step_; }
    const char* kind() const noexcept override { return "tunnelling_suspected"; }

private:
    std::size_t step_;
};

class ConsistencyError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "consistency"; }
};

class InputError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "input"; }
};

class DependencyError : public Error {
public:
    DependencyError(const std::string& what, std::string expected_file)
        : Error(what), expected_(std::move(expected_file)) {}
    const std::string& expected_file() const noexcept { return expected_; }
    const char* kind() const noexcept override { return "dependency"; }

private:
    std::string expected_;
};

}  // namespace shuttle

#endif
