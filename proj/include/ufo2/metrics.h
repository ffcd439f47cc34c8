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

#ifndef UFO2_METRICS_H_
#define UFO2_METRICS_H_

#include <string>
#include <vector>

#include "json.hpp"

namespace ufo2 {

using Record = nlohmann::ordered_json;

// Newline-delimited JSON records with insertion-ordered keys. Append-only.
class MetricsLog {
 public:
  MetricsLog() = default;
  // Opens `path` for appending; `truncate` starts a fresh file.
  MetricsLog(std::string path, bool truncate);

  void write(const Record& record);
  const std::vector<std::string>& lines() const { return lines_; }
  const std::string& path() const { return path_; }

  static std::vector<Record> read(const std::string& path);

 private:
  std::string path_;
  std::vector<std::string> lines_;
};

}  // namespace ufo2

#endif  // UFO2_METRICS_H_
