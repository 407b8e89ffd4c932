#ifndef SDLTO_ERRORS_HPP_
#define SDLTO_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace sdlto {

// Base class of every error raised by the library.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

// Iterative solve stopped before reaching the requested tolerance.
class SolverError : public Error
{
public:
    SolverError (std::string const& what, double residual, int iterations):
        Error{what}, residual_{residual}, iterations_{iterations}
    {}

    [[nodiscard]] double residual () const noexcept { return residual_; }
    [[nodiscard]] int iterations () const noexcept { return iterations_; }

private:
    double residual_;
    int iterations_;
};

// Reduced system is singular or not positive definite.
class SingularSystemError : public Error
{
public:
    using Error::Error;
};

// Objective or gradient came out nonfinite.
class NonFiniteError : public Error
{
public:
    using Error::Error;
};

// MMA dual search or OC bisection could not bracket the multiplier.
class DualSolveError : public Error
{
public:
    DualSolveError (std::string const& what, double lower, double upper):
        Error{what}, lower_{lower}, upper_{upper}
    {}

    [[nodiscard]] double lower () const noexcept { return lower_; }
    [[nodiscard]] double upper () const noexcept { return upper_; }

private:
    double lower_;
    double upper_;
};

// Surrogate training diverged or was used before training.
class SurrogateError : public Error
{
public:
    using Error::Error;
};

// Too many samples of a batch failed.
class BatchError : public Error
{
public:
    using Error::Error;
};

// Bad configuration value; key() names the offending setting.
class ParseError : public Error
{
public:
    ParseError (std::string key, std::string const& what):
        Error{key + ": " + what}, key_{std::move(key)}
    {}

    [[nodiscard]] std::string const& key () const noexcept { return key_; }

private:
    std::string key_;
};

// File could not be read or written; path() names the file.
class IoError : public Error
{
public:
    IoError (std::string path, std::string const& what):
        Error{what + ": " + path}, path_{std::move(path)}
    {}

    [[nodiscard]] std::string const& path () const noexcept { return path_; }

private:
    std::string path_;
};

}  // namespace sdlto

#endif
