#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nkscreen {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Malformed case text. Carries the 1-based line where parsing stopped.
class ParseError : public Error {
  public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

  private:
    std::size_t line_;
};

/// Input violates a documented invariant (case topology, config ranges, shapes).
class ValidationError : public Error {
  public:
    using Error::Error;
};

/// Caller broke an operation's precondition (e.g. solving an islanded network).
class PreconditionError : public Error {
  public:
    using Error::Error;
};

/// Sampling ran out of its retry or rejection budget.
class InfeasibleError : public Error {
  public:
    using Error::Error;
};

/// Projection could not reach a feasible k-outage pattern.
class ProjectionError : public Error {
  public:
    ProjectionError(std::size_t sample_index, const std::string& what)
        : Error(what), sample_index_(sample_index) {}
    explicit ProjectionError(const std::string& what) : ProjectionError(0, what) {}

    std::size_t sample_index() const noexcept { return sample_index_; }

  private:
    std::size_t sample_index_;
};

/// Non-finite loss or parameters during training.
class TrainingError : public Error {
  public:
    using Error::Error;
};

/// Non-finite state during reverse diffusion; reports the step.
class SamplingError : public Error {
  public:
    SamplingError(int step, const std::string& what)
        : Error("step " + std::to_string(step) + ": " + what), step_(step) {}

    int step() const noexcept { return step_; }

  private:
    int step_;
};

/// No finite budget satisfies the miss tolerance (p_lower == 0).
class UnboundedBudgetError : public Error {
  public:
    using Error::Error;
};

/// Coverage bound is vacuous for the given parameters.
class VacuousBoundError : public Error {
  public:
    using Error::Error;
};

}  // namespace nkscreen
