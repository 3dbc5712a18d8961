// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace hvnet {

// Incompatible tensor shapes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Index outside the addressed range.
class BoundsError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Malformed file contents (point clouds, labels, configs).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Geometric input outside the domain of an operation (zero-area boxes,
// self-intersecting quads).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A documented precondition was violated by the caller.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Weight archive missing a parameter, shape mismatch or fingerprint mismatch.
class ArchiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Misuse of a stateful API, e.g. backward without a forward cache.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace hvnet
