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

#include "ufo2/config.h"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace ufo2 {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& expected) {
  throw Error(ErrorKind::kConfiguration,
              "invalid value '" + value + "' for " + key + " (expected " + expected + ")");
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) bad_value(key, v, "a number");
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, v, "a number");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad_value(key, v, "true or false");
}

std::string format_double(double d) {
  std::ostringstream out;
  out.precision(17);
  out << d;
  return out.str();
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

using Table = std::vector<std::pair<std::string, Field>>;

template <typename Member>
Field int_field(Member member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) {
            auto& ref = member(c);
            ref = parse_int<std::remove_reference_t<decltype(ref)>>(k, v);
          },
          [member](const RunConfig& c) {
            return std::to_string(member(const_cast<RunConfig&>(c)));
          }};
}

template <typename Member>
Field double_field(Member member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) {
            member(c) = parse_double(k, v);
          },
          [member](const RunConfig& c) {
            return format_double(member(const_cast<RunConfig&>(c)));
          }};
}

template <typename Member>
Field bool_field(Member member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) {
            member(c) = parse_bool(k, v);
          },
          [member](const RunConfig& c) {
            return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false");
          }};
}

template <typename Member>
Field string_field(Member member) {
  return {[member](RunConfig& c, const std::string&, const std::string& v) { member(c) = v; },
          [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)); }};
}

#define UFO2_MEMBER(expr) [](RunConfig& c) -> auto& { return c.expr; }

const Table& table() {
  static const Table t = [] {
    Table t;
    t.push_back({"seed", int_field(UFO2_MEMBER(seed))});
    t.push_back({"precision",
                 {[](RunConfig& c, const std::string& k, const std::string& v) {
                    if (v == "float32") {
                      c.precision = Precision::kFloat32;
                    } else if (v == "float64") {
                      c.precision = Precision::kFloat64;
                    } else {
                      bad_value(k, v, "float32 or float64");
                    }
                  },
                  [](const RunConfig& c) { return std::string(to_string(c.precision)); }}});
    t.push_back({"train.batch_size", int_field(UFO2_MEMBER(train.batch_size))});
    t.push_back({"train.steps", int_field(UFO2_MEMBER(train.steps))});
    t.push_back({"train.lr", double_field(UFO2_MEMBER(train.lr))});
    t.push_back({"train.warmup", int_field(UFO2_MEMBER(train.warmup))});
    t.push_back({"train.clip", double_field(UFO2_MEMBER(train.clip))});
    t.push_back({"train.checkpoint_every", int_field(UFO2_MEMBER(train.checkpoint_every))});
    t.push_back({"chunk.max", int_field(UFO2_MEMBER(train.max_chunk))});
    t.push_back({"feature.dim", int_field(UFO2_MEMBER(encoder.feature_dim))});
    t.push_back({"encoder.d_model", int_field(UFO2_MEMBER(encoder.d_model))});
    t.push_back({"encoder.heads", int_field(UFO2_MEMBER(encoder.heads))});
    t.push_back({"encoder.blocks", int_field(UFO2_MEMBER(encoder.blocks))});
    t.push_back({"encoder.kernel", int_field(UFO2_MEMBER(encoder.kernel))});
    t.push_back({"encoder.ff_expansion", int_field(UFO2_MEMBER(encoder.ff_expansion))});
    t.push_back({"encoder.subsample_channels",
                 int_field(UFO2_MEMBER(encoder.subsample_channels))});
    t.push_back({"encoder.dropout", double_field(UFO2_MEMBER(encoder.dropout))});
    t.push_back({"encoder.conv_mode",
                 {[](RunConfig& c, const std::string&, const std::string& v) {
                    c.encoder.conv_mode = parse_conv_mode(v);
                  },
                  [](const RunConfig& c) { return std::string(to_string(c.encoder.conv_mode)); }}});
    t.push_back({"quantizer.groups", int_field(UFO2_MEMBER(quantizer.groups))});
    t.push_back({"quantizer.entries", int_field(UFO2_MEMBER(quantizer.entries))});
    t.push_back({"quantizer.dim", int_field(UFO2_MEMBER(quantizer.dim))});
    t.push_back({"quantizer.temperature", double_field(UFO2_MEMBER(quantizer.temperature))});
    t.push_back(
        {"quantizer.temperature_end", double_field(UFO2_MEMBER(quantizer.temperature_end))});
    t.push_back({"quantizer.anneal_steps", int_field(UFO2_MEMBER(quantizer.anneal_steps))});
    t.push_back({"mask.prob", double_field(UFO2_MEMBER(pretrain.mask_prob))});
    t.push_back({"mask.span", int_field(UFO2_MEMBER(pretrain.mask_span))});
    t.push_back({"loss.lambda", double_field(UFO2_MEMBER(pretrain.lambda))});
    t.push_back({"loss.kappa", double_field(UFO2_MEMBER(pretrain.kappa))});
    t.push_back({"loss.negatives", int_field(UFO2_MEMBER(pretrain.negatives))});
    t.push_back({"loss.diversity_weight", double_field(UFO2_MEMBER(pretrain.diversity_weight))});
    t.push_back({"loss.stop_grad", bool_field(UFO2_MEMBER(pretrain.stop_grad))});
    t.push_back({"loss.epsilon", double_field(UFO2_MEMBER(finetune.epsilon))});
    t.push_back({"loss.alpha", double_field(UFO2_MEMBER(finetune.alpha))});
    t.push_back({"loss.mode",
                 {[](RunConfig& c, const std::string&, const std::string& v) {
                    c.finetune.mode = parse_finetune_mode(v);
                  },
                  [](const RunConfig& c) { return std::string(to_string(c.finetune.mode)); }}});
    t.push_back({"loss.label_smoothing", double_field(UFO2_MEMBER(finetune.label_smoothing))});
    t.push_back({"decoder.blocks", int_field(UFO2_MEMBER(decoder_blocks))});
    t.push_back({"decoder.ff_expansion", int_field(UFO2_MEMBER(decoder_ff_expansion))});
    t.push_back({"finetune.freeze_encoder_steps",
                 int_field(UFO2_MEMBER(train.freeze_encoder_steps))});
    t.push_back({"decode.beam", int_field(UFO2_MEMBER(decode.beam))});
    t.push_back({"decode.rescore_weight", double_field(UFO2_MEMBER(decode.rescore_weight))});
    t.push_back({"decode.chunk_size",
                 {[](RunConfig& c, const std::string&, const std::string& v) {
                    c.decode.chunk = ChunkSpec::parse(v);
                  },
                  [](const RunConfig& c) { return c.decode.chunk.to_string(); }}});
    t.push_back({"decode.method",
                 {[](RunConfig& c, const std::string& k, const std::string& v) {
                    if (v == "cpbs") {
                      c.decode.method = DecodeMethod::kCpbs;
                    } else if (v == "ar") {
                      c.decode.method = DecodeMethod::kAr;
                    } else if (v == "both") {
                      c.decode.method = DecodeMethod::kBoth;
                    } else {
                      bad_value(k, v, "cpbs, ar or both");
                    }
                  },
                  [](const RunConfig& c) { return std::string(to_string(c.decode.method)); }}});
    t.push_back({"data.unlabeled", string_field(UFO2_MEMBER(data.unlabeled))});
    t.push_back({"data.labeled", string_field(UFO2_MEMBER(data.labeled))});
    t.push_back({"data.test", string_field(UFO2_MEMBER(data.test))});
    t.push_back({"data.vocab", string_field(UFO2_MEMBER(data.vocab))});
    t.push_back({"datagen.vocab_size", int_field(UFO2_MEMBER(synth.vocab_size))});
    t.push_back({"datagen.tokens_min", int_field(UFO2_MEMBER(synth.tokens_min))});
    t.push_back({"datagen.tokens_max", int_field(UFO2_MEMBER(synth.tokens_max))});
    t.push_back({"datagen.frames_per_token", int_field(UFO2_MEMBER(synth.frames_per_token))});
    t.push_back({"datagen.noise", double_field(UFO2_MEMBER(synth.noise))});
    t.push_back({"datagen.successors", int_field(UFO2_MEMBER(synth.successors))});
    t.push_back({"datagen.seed", int_field(UFO2_MEMBER(synth.seed))});
    t.push_back({"datagen.unlabeled", int_field(UFO2_MEMBER(counts.unlabeled))});
    t.push_back({"datagen.labeled", int_field(UFO2_MEMBER(counts.labeled))});
    t.push_back({"datagen.test", int_field(UFO2_MEMBER(counts.test))});
    return t;
  }();
  return t;
}

const Field& field(const std::string& key) {
  for (const auto& [k, f] : table()) {
    if (k == key) return f;
  }
  throw Error(ErrorKind::kConfiguration, "unknown config key '" + key + "'");
}

}  // namespace

const char* to_string(Precision p) { return p == Precision::kFloat64 ? "float64" : "float32"; }

const char* to_string(DecodeMethod m) {
  switch (m) {
    case DecodeMethod::kCpbs:
      return "cpbs";
    case DecodeMethod::kAr:
      return "ar";
    case DecodeMethod::kBoth:
      return "both";
  }
  return "both";
}

void RunConfig::set(const std::string& key, const std::string& value) {
  field(key).set(*this, key, value);
  if (key == "feature.dim") synth.feature_dim = encoder.feature_dim;
}

std::string RunConfig::get(const std::string& key) const { return field(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [key, f] : table()) out.push_back(key);
    return out;
  }();
  return k;
}

void RunConfig::validate() const {
  UFO2_CHECK(train.batch_size >= 1, ErrorKind::kConfiguration, "train.batch_size must be >= 1");
  UFO2_CHECK(train.steps >= 0, ErrorKind::kConfiguration, "train.steps must be >= 0");
  UFO2_CHECK(train.warmup >= 1, ErrorKind::kConfiguration, "train.warmup must be >= 1");
  UFO2_CHECK(train.lr > 0, ErrorKind::kConfiguration, "train.lr must be positive");
  UFO2_CHECK(train.clip > 0, ErrorKind::kConfiguration, "train.clip must be positive");
  UFO2_CHECK(train.checkpoint_every >= 0 && train.freeze_encoder_steps >= 0,
             ErrorKind::kConfiguration, "step counts must be >= 0");
  UFO2_CHECK(train.max_chunk >= 1, ErrorKind::kConfiguration, "chunk.max must be >= 1");
  encoder.validate();
  quantizer.validate();
  pretrain.validate();
  finetune.validate();
  UFO2_CHECK(decoder_blocks >= 1 && decoder_ff_expansion >= 1, ErrorKind::kConfiguration,
             "decoder sizes must be positive");
  UFO2_CHECK(decode.beam >= 1, ErrorKind::kConfiguration, "decode.beam must be >= 1");
  UFO2_CHECK(decode.rescore_weight >= 0 && decode.rescore_weight <= 1,
             ErrorKind::kConfiguration, "decode.rescore_weight must be in [0, 1]");
  synth.validate();
  UFO2_CHECK(counts.unlabeled >= 0 && counts.labeled >= 0 && counts.test >= 0,
             ErrorKind::kConfiguration, "datagen counts must be >= 0");
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [key, f] : table()) out += key + " = " + f.get(*this) + "\n";
  return out;
}

DecoderConfig RunConfig::decoder_config(Index vocab) const {
  DecoderConfig d;
  d.vocab = vocab;
  d.d_model = encoder.d_model;
  d.heads = encoder.heads;
  d.blocks = decoder_blocks;
  d.ff_expansion = decoder_ff_expansion;
  d.dropout = encoder.dropout;
  return d;
}

std::string RunConfig::resolve(const std::string& path) const {
  const std::filesystem::path p(path);
  return p.is_absolute() ? p.string() : (std::filesystem::path(base_dir) / p).string();
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::map<std::string, Index> seen;
  for (Index number = 1; std::getline(in, line); ++number) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(number) + ": ";
    UFO2_CHECK(eq != std::string::npos, ErrorKind::kConfiguration,
               where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    UFO2_CHECK(seen.emplace(key, number).second, ErrorKind::kConfiguration,
               where + "duplicate key '" + key + "'");
    try {
      c.set(key, value);
    } catch (const Error& e) {
      throw Error(e.kind(), where + e.message());
    }
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  UFO2_CHECK(in.good(), ErrorKind::kLoad, "cannot open config " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  RunConfig c = parse_config(buffer.str(), path);
  c.base_dir = std::filesystem::path(path).parent_path().string();
  if (c.base_dir.empty()) c.base_dir = ".";
  return c;
}

const std::vector<std::string>& encoder_shape_keys() {
  static const std::vector<std::string> k = {
      "feature.dim",   "encoder.d_model",      "encoder.heads",
      "encoder.blocks", "encoder.kernel",      "encoder.ff_expansion",
      "encoder.subsample_channels"};
  return k;
}

}  // namespace ufo2
