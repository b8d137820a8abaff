/* Copyright 2026 The wmlstm Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef WMLSTM_ERRORS_H_
#define WMLSTM_ERRORS_H_

#include <stdexcept>
#include <string>

namespace wmlstm {

// Violated precondition: mismatched shapes, out-of-range ids, misuse of an
// API on the wrong cell variant.
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A forward or backward pass produced a non-finite value.
class NumericOverflow : public std::runtime_error {
 public:
  // A negative step means the overflow is not tied to a time step.
  NumericOverflow(int step, std::string what_overflowed);

  int step() const { return step_; }
  const std::string& quantity() const { return quantity_; }

 private:
  int step_;
  std::string quantity_;
};

// Bad or missing input data. Subclasses distinguish IDX failure modes.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BadMagicError : public DataError {
 public:
  using DataError::DataError;
};

class TruncatedFileError : public DataError {
 public:
  using DataError::DataError;
};

class CountMismatchError : public DataError {
 public:
  using DataError::DataError;
};

// Invalid experiment configuration or command line.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace wmlstm

#endif  // WMLSTM_ERRORS_H_
