// Copyright 2026 The CMI Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CMI_ERROR_H_
#define CMI_ERROR_H_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cmi {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file. `line` is 1-based, 0 when not tied to a line.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t line)
      : Error(line == 0 ? message
                        : "line " + std::to_string(line) + ": " + message),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Invalid configuration, arguments, or incompatible files.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite losses or violated numeric preconditions (zero-norm vectors).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace cmi

#endif  // CMI_ERROR_H_
