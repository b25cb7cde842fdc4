// Copyright 2026 The ESPO Lab Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace espo {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller supplied something that violates a precondition.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A computation produced (or would produce) a non-finite value.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Two independent computations of the same quantity disagree.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

/// Distributed workers fell out of lockstep or diverged.
class SyncError : public Error {
 public:
  using Error::Error;
};

/// A collective timed out waiting for one or more ranks.
class DeadlockError : public SyncError {
 public:
  DeadlockError(const std::string& what, int missing_rank)
      : SyncError(what), missing_rank_(missing_rank) {}
  int missing_rank() const noexcept { return missing_rank_; }

 private:
  int missing_rank_;
};

}  // namespace espo
