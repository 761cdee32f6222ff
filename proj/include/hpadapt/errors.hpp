/* Copyright 2026 The hpadapt Authors. All Rights Reserved.

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

#pragma once

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hpadapt {

// Operand shapes do not conform for an operation.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Misuse of stateful objects (e.g. a second backward on a consumed tape).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// The reference cannot be aligned to the available frames under CTC rules.
class InfeasibleAlignment : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IncompatibleCheckpoint : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A checkpoint, corpus or config file does not exist.
class CheckpointNotFound : public std::runtime_error {
 public:
  CheckpointNotFound(const std::string& path)
      : std::runtime_error("file not found: " + path), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A configuration value failed validation; `field()` is a dotted path.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, std::string msg)
      : std::runtime_error(field + ": " + msg), field_(std::move(field)), message_(std::move(msg)) {}
  const std::string& field() const { return field_; }
  const std::string& message() const { return message_; }

 private:
  std::string field_;
  std::string message_;
};

inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

}  // namespace hpadapt
