// Copyright 2026 The mimkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace mimkit {

// Invalid configuration or argument. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Mask has no visible (or no masked) patches where at least one is required.
class DegenerateMaskError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Malformed or missing input data, IO failures. CLI exit code 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values, undefined metrics. CLI exit code 4.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// API misuse, e.g. backward from a non-scalar.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace mimkit
