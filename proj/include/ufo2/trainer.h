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

#ifndef UFO2_TRAINER_H_
#define UFO2_TRAINER_H_

#include <optional>
#include <string>
#include <vector>

#include "ufo2/checkpoint.h"
#include "ufo2/config.h"

namespace ufo2 {

struct RunOptions {
  std::string out_dir = ".";
  std::optional<std::string> init;    // pretrained checkpoint, or model for decode
  std::optional<std::string> resume;  // continue a run from its checkpoint
  std::optional<ChunkSpec> chunk;     // decode chunk; fixes the training chunk if set
  std::optional<std::string> hyp;     // hypothesis TSV for eval
  bool verbose = false;
};

struct TrainSummary {
  std::string checkpoint;
  std::string metrics;
  Index steps = 0;
  double last_loss = 0;
};

struct DecodeSummary {
  std::string hyp_path;
  ChunkSpec chunk;
  Index utterances = 0;
};

struct EvalLine {
  std::string mode;
  Index edits = 0;
  Index words = 0;
  Index utterances = 0;
  double wer = 0;
};

void run_datagen(const RunConfig& config, const RunOptions& options);
TrainSummary run_pretrain(const RunConfig& config, const RunOptions& options);
TrainSummary run_finetune(const RunConfig& config, const RunOptions& options);
DecodeSummary run_decode(const RunConfig& config, const RunOptions& options);
std::vector<EvalLine> run_eval(const RunConfig& config, const RunOptions& options);

// Corpus WER per decode mode: total edits over total reference words.
std::vector<EvalLine> evaluate_hypotheses(const std::string& hyp_path,
                                          const std::string& ref_manifest);

// "[0, 640] ms, mean 320 ms" style description of a chunk's latency.
std::string latency_band(const ChunkSpec& chunk);

// Raises kIncompatible listing every differing encoder shape key.
void check_encoder_compatible(const RunConfig& stored, const RunConfig& current);

}  // namespace ufo2

#endif  // UFO2_TRAINER_H_
