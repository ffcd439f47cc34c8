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

#include "ufo2/metrics.h"

#include <fstream>

#include "ufo2/error.h"

namespace ufo2 {

MetricsLog::MetricsLog(std::string path, bool truncate) : path_(std::move(path)) {
  std::ofstream out(path_, truncate ? std::ios::trunc : std::ios::app);
  UFO2_CHECK(out.good(), ErrorKind::kLoad, "cannot open metrics log " + path_);
}

void MetricsLog::write(const Record& record) {
  std::string line = record.dump();
  if (!path_.empty()) {
    std::ofstream out(path_, std::ios::app);
    out << line << '\n';
    UFO2_CHECK(out.good(), ErrorKind::kLoad, "cannot append to " + path_);
  }
  lines_.push_back(std::move(line));
}

std::vector<Record> MetricsLog::read(const std::string& path) {
  std::ifstream in(path);
  UFO2_CHECK(in.good(), ErrorKind::kLoad, "cannot open metrics log " + path);
  std::vector<Record> out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(Record::parse(line));
  }
  return out;
}

}  // namespace ufo2
