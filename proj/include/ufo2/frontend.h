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

#ifndef UFO2_FRONTEND_H_
#define UFO2_FRONTEND_H_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ufo2/asr.h"
#include "ufo2/tensor.h"

namespace ufo2 {

using FeatureMatrix = Matrix<float>;

struct Wav {
  std::vector<float> samples;  // in [-1, 1)
  int sample_rate = 16000;
};

// RIFF/WAVE, PCM 16-bit, mono, 16 kHz only.
Wav read_wav(const std::string& path);
void write_wav(const std::string& path, const Wav& wav);

struct MelConfig {
  int sample_rate = 16000;
  Index window = 400;  // 25 ms
  Index step = 160;    // 10 ms
  Index n_mels = 80;
  double low_hz = 0;
  double high_hz = 8000;
  double floor = 1e-10;

  Index fft_size() const;
  Index frame_count(Index samples) const;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Filter i rises from edges[i] to edges[i+1] and falls to edges[i+2] (Hz).
std::vector<double> mel_band_edges(const MelConfig& config);

FeatureMatrix log_mel(const std::vector<float>& samples, const MelConfig& config = {});

// "UFEA" feature files.
void write_features(const std::string& path, const FeatureMatrix& features);
FeatureMatrix read_features(const std::string& path);

struct ManifestEntry {
  std::string id;
  std::string path;  // as written; resolved against the manifest directory
  std::optional<std::string> transcript;
};

struct Manifest {
  std::string directory;
  std::vector<ManifestEntry> entries;

  std::string resolve(const ManifestEntry& entry) const;
  bool labeled() const;
};

Manifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

// Loads features for an entry: .fea files directly, .wav files via log_mel.
FeatureMatrix load_entry_features(const Manifest& manifest, const ManifestEntry& entry);

// Character-level vocabulary. The first three lines are <blank>, <unk> and
// <sos/eos>; every following line is one unit.
class Vocabulary {
 public:
  static Vocabulary from_units(const std::vector<std::string>& units);
  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  Index size() const { return static_cast<Index>(units_.size()); }
  const std::string& unit(Index id) const;
  Index id(const std::string& unit) const;

  // Whitespace separates units and is not itself a token; unknown
  // characters map to <unk>.
  TokenIds tokenize(const std::string& text) const;
  // Units joined by single spaces.
  std::string detokenize(const TokenIds& ids) const;

 private:
  std::vector<std::string> units_;
  std::map<std::string, Index> ids_;
};

// Global mean / variance normalisation.
struct Cmvn {
  RowVector<float> mean;
  RowVector<float> inv_std;

  static Cmvn compute(const std::vector<FeatureMatrix>& features);
  FeatureMatrix apply(const FeatureMatrix& features) const;
  void save(const std::string& path) const;
  static Cmvn load(const std::string& path);
};

inline constexpr const char* kCmvnFile = "cmvn.txt";

struct SynthConfig {
  Index vocab_size = 12;  // including the three reserved symbols
  Index feature_dim = 80;
  Index tokens_min = 3;
  Index tokens_max = 6;
  Index frames_per_token = 8;
  double noise = 0.5;
  // Number of tokens allowed to follow each token; 0 allows any other token.
  Index successors = 0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SynthUtterance {
  TokenIds tokens;
  FeatureMatrix features;
};

// Fixed random templates per token; utterances repeat each token's template
// frames_per_token times and add Gaussian noise. No token repeats its
// predecessor. With successors > 0 each token may only be followed by a fixed
// random subset of that many tokens.
class Synthesizer {
 public:
  explicit Synthesizer(const SynthConfig& config);

  const SynthConfig& config() const { return config_; }
  Vocabulary vocabulary() const;
  const FeatureMatrix& templates() const { return templates_; }  // [vocab x F]

  SynthUtterance utterance(Rng& rng) const;
  SynthUtterance render(const TokenIds& tokens, Rng& rng) const;

 private:
  SynthConfig config_;
  FeatureMatrix templates_;
  std::vector<TokenIds> successors_;  // indexed by token id
};

struct CorpusCounts {
  Index unlabeled = 2000;
  Index labeled = 200;
  Index test = 100;
};

// Writes unlabeled.tsv, labeled.tsv, test.tsv, vocab.txt, cmvn.txt and
// feats/*.fea into `directory`.
void generate_corpus(const std::string& directory, const SynthConfig& config,
                     const CorpusCounts& counts);

}  // namespace ufo2

#endif  // UFO2_FRONTEND_H_
