// Copyright (c) 2026 The ufo2 Authors. All Rights Reserved.
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

#ifndef UFO2_ERROR_H_
#define UFO2_ERROR_H_

#include <stdexcept>
#include <string>

namespace ufo2 {

enum class ErrorKind {
  kDimension,
  kInvalidMask,
  kConfiguration,
  kLength,
  kFormat,
  kLoad,
  kInfeasibleAlignment,
  kUndefinedMetric,
  kNumericalDegeneracy,
  kDivergence,
  kIncompatible,
  kMissingHead,
  kAlignment,
  kGraph,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what),
        kind_(kind),
        message_(what) {}

  ErrorKind kind() const { return kind_; }
  // The message without the kind prefix.
  const std::string& message() const { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

#define UFO2_CHECK(cond, kind, msg)            \
  do {                                         \
    if (!(cond)) throw ::ufo2::Error(kind, msg); \
  } while (0)

}  // namespace ufo2

#endif  // UFO2_ERROR_H_
