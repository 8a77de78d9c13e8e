#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace betaprune {

// Error categories map onto the CLI exit codes.
enum class ErrorKind : int { config = 1, data = 2, divergence = 3 };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

private:
  ErrorKind kind_;
};

// Non-finite loss during training; carries where it happened.
class DivergenceError : public Error {
public:
  DivergenceError(int phase, int64_t step, const std::string& msg)
      : Error(ErrorKind::divergence, msg), phase_(phase), step_(step) {}
  int phase() const { return phase_; }
  int64_t step() const { return step_; }

private:
  int phase_;
  int64_t step_;
};

}  // namespace betaprune
