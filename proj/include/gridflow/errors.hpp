#pragma once

#include <stdexcept>
#include <string>

namespace gridflow {

/// Base class for all gridflow errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed input that never made it past the parser.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Structurally valid input that violates a model invariant. The message
/// names the offending field path.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A precondition of an operation was violated by the caller.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// No connectivity-preserving branch subset could be sampled.
class DisconnectionError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes do not chain.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A loss node is not connected to any tracked parameter.
class GraphError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf tried to enter a tensor.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Cost normalization range collapsed (cost_max == cost_min).
class DegenerateRangeError : public Error {
 public:
  using Error::Error;
};

/// The initial power flow of an episode diverged.
class InitInfeasibleError : public Error {
 public:
  using Error::Error;
};

/// An action index does not name a dispatchable generator.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Fewer than the required number of feasible rollouts.
class InsufficientFeasibleError : public Error {
 public:
  using Error::Error;
};

/// Every oracle start was infeasible.
class NoFeasiblePointError : public Error {
 public:
  using Error::Error;
};

}  // namespace gridflow
