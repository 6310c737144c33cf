// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace qsvlm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller supplied an argument that violates an operation's precondition
/// (bad shape, empty batch, out-of-range ratio, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Checkpoint or corpus files that cannot be decoded.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Throws InvalidArgument with `what` when `cond` is false.
inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidArgument(what);
}

}  // namespace qsvlm
