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

#ifndef UFO2_CONFIG_H_
#define UFO2_CONFIG_H_

#include <cstdint>
#include <string>
#include <vector>

#include "ufo2/asr.h"
#include "ufo2/chunking.h"
#include "ufo2/encoder.h"
#include "ufo2/frontend.h"
#include "ufo2/quantizer.h"

namespace ufo2 {

enum class Precision { kFloat32, kFloat64 };
enum class DecodeMethod { kCpbs, kAr, kBoth };

struct TrainSettings {
  Index batch_size = 8;
  Index steps = 100;
  double lr = 0.05;
  Index warmup = 200;
  double clip = 5.0;
  Index checkpoint_every = 0;  // 0: only the final checkpoint
  Index freeze_encoder_steps = 0;
  Index max_chunk = kMaxTrainChunk;
};

struct DecodeSettings {
  Index beam = 10;
  double rescore_weight = 0.3;
  ChunkSpec chunk = ChunkSpec::unbounded();
  DecodeMethod method = DecodeMethod::kBoth;
};

struct DataSettings {
  std::string unlabeled = "unlabeled.tsv";
  std::string labeled = "labeled.tsv";
  std::string test = "test.tsv";
  std::string vocab;  // empty: vocab.txt next to the labeled manifest
};

// Every setting of a run. Parsed from `key = value` lines; every key has a
// default and unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 1;
  Precision precision = Precision::kFloat32;
  TrainSettings train;
  EncoderConfig encoder;
  QuantizerConfig quantizer;
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  Index decoder_blocks = 2;
  Index decoder_ff_expansion = 4;
  DecodeSettings decode;
  DataSettings data;
  SynthConfig synth;
  CorpusCounts counts;
  // Directory relative data paths are resolved against.
  std::string base_dir = ".";

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  void validate() const;
  // Canonical `key = value` text of every key, in keys() order.
  std::string to_text() const;

  DecoderConfig decoder_config(Index vocab) const;
  std::string resolve(const std::string& path) const;
};

RunConfig parse_config(const std::string& text, const std::string& origin = "<config>");
RunConfig load_config(const std::string& path);

// Keys that fix the encoder's parameter shapes.
const std::vector<std::string>& encoder_shape_keys();

const char* to_string(Precision p);
const char* to_string(DecodeMethod m);

}  // namespace ufo2

#endif  // UFO2_CONFIG_H_
