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

#include "ufo2/trainer.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "ufo2/metrics.h"
#include "ufo2/optim.h"
#include "ufo2/rng.h"

namespace ufo2 {

namespace fs = std::filesystem;

namespace {

// Stream tags for Rng::derive.
enum : std::uint64_t {
  kInitTag = 1,
  kOrderTag = 2,
  kChunkTag = 3,
  kUtteranceTag = 4,
  kDropoutTag = 5,
  kBranchTag = 6,
  kHeadTag = 7,
};

template <typename Scalar>
struct Utterance {
  std::string id;
  Matrix<Scalar> features;
  TokenIds tokens;
  std::string transcript;
};

std::optional<Cmvn> find_cmvn(const std::string& manifest_path) {
  const fs::path p = fs::path(manifest_path).parent_path() / kCmvnFile;
  if (!fs::exists(p)) return std::nullopt;
  return Cmvn::load(p.string());
}

template <typename Scalar>
std::vector<Utterance<Scalar>> load_dataset(const std::string& manifest_path,
                                            const std::optional<Cmvn>& cmvn,
                                            const Vocabulary* vocab) {
  const Manifest manifest = load_manifest(manifest_path);
  UFO2_CHECK(!manifest.entries.empty(), ErrorKind::kLoad, manifest_path + " is empty");
  std::vector<Utterance<Scalar>> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    Utterance<Scalar> u;
    u.id = e.id;
    FeatureMatrix f = load_entry_features(manifest, e);
    if (cmvn) f = cmvn->apply(f);
    u.features = f.cast<Scalar>();
    if (vocab != nullptr) {
      UFO2_CHECK(e.transcript.has_value(), ErrorKind::kLoad,
                 manifest_path + ": entry " + e.id + " has no transcript");
      u.transcript = *e.transcript;
      u.tokens = vocab->tokenize(*e.transcript);
    }
    out.push_back(std::move(u));
  }
  return out;
}

// Drops utterances the model cannot score, reporting how many.
template <typename Scalar, typename Keep>
void filter_dataset(std::vector<Utterance<Scalar>>& data, Keep keep, const std::string& what) {
  const std::size_t before = data.size();
  std::erase_if(data, [&](const Utterance<Scalar>& u) { return !keep(u); });
  if (data.size() != before) {
    std::cerr << "skipped " << before - data.size() << " of " << before
              << " utterances too short for " << what << "\n";
  }
  UFO2_CHECK(!data.empty(), ErrorKind::kLength, "no usable utterances for " + what);
}

std::vector<Index> batch_for_step(Index n, Index batch, std::uint64_t seed, Index step) {
  const Index per_epoch = (n + batch - 1) / batch;
  const Index epoch = (step - 1) / per_epoch;
  const Index pos = (step - 1) % per_epoch;
  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::derive(seed, {kOrderTag, static_cast<std::uint64_t>(epoch)});
  for (Index i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
  const Index begin = pos * batch;
  const Index end = std::min(n, begin + batch);
  return std::vector<Index>(order.begin() + begin, order.begin() + end);
}

template <typename Scalar>
DType dtype_of() {
  return std::is_same_v<Scalar, float> ? DType::kFloat32 : DType::kFloat64;
}

template <typename Scalar>
void store_state(Checkpoint& ckpt, const ParamStore<Scalar>& store, const Adam<Scalar>& adam) {
  for (const auto& [name, p] : store.all()) {
    ckpt.tensors[name] = StoredTensor::from_matrix(p.value(), dtype_of<Scalar>());
  }
  for (const auto& [name, m] : adam.first_moments()) {
    ckpt.tensors["adam.m." + name] = StoredTensor::from_matrix(m, dtype_of<Scalar>());
  }
  for (const auto& [name, v] : adam.second_moments()) {
    ckpt.tensors["adam.v." + name] = StoredTensor::from_matrix(v, dtype_of<Scalar>());
  }
}

template <typename Scalar>
void assign(ParamStore<Scalar>& store, const std::string& name, const StoredTensor& t) {
  Tensor<Scalar> p = store.get(name);
  Matrix<Scalar> value = t.to_matrix<Scalar>();
  UFO2_CHECK(value.rows() == p.rows() && value.cols() == p.cols(), ErrorKind::kIncompatible,
             "checkpoint tensor " + name + " has a different shape");
  p.set_value(std::move(value));
}

template <typename Scalar>
void restore_state(const Checkpoint& ckpt, ParamStore<Scalar>& store, Adam<Scalar>& adam) {
  for (const auto& [name, p] : store.all()) assign(store, name, ckpt.at(name));
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.rfind("adam.m.", 0) == 0) adam.first_moments()[name.substr(7)] = t.template to_matrix<Scalar>();
    if (name.rfind("adam.v.", 0) == 0) {
      adam.second_moments()[name.substr(7)] = t.template to_matrix<Scalar>();
    }
  }
}

void store_common(Checkpoint& ckpt, const RunConfig& config, const std::string& stage,
                  const std::optional<Cmvn>& cmvn, Index step) {
  ckpt.step = static_cast<std::uint64_t>(step);
  ckpt.tensors["config"] = StoredTensor::from_text(config.to_text());
  ckpt.tensors["stage"] = StoredTensor::from_text(stage);
  ckpt.tensors["rng.state"] =
      StoredTensor::from_u64({config.seed, static_cast<std::uint64_t>(step)});
  if (cmvn) {
    ckpt.tensors["cmvn.mean"] = StoredTensor::from_matrix<float>(cmvn->mean, DType::kFloat32);
    ckpt.tensors["cmvn.inv_std"] =
        StoredTensor::from_matrix<float>(cmvn->inv_std, DType::kFloat32);
  }
}

std::optional<Cmvn> stored_cmvn(const Checkpoint& ckpt) {
  if (!ckpt.contains("cmvn.mean")) return std::nullopt;
  Cmvn c;
  c.mean = ckpt.at("cmvn.mean").to_matrix<float>();
  c.inv_std = ckpt.at("cmvn.inv_std").to_matrix<float>();
  return c;
}

RunConfig stored_config(const Checkpoint& ckpt) {
  return parse_config(ckpt.at("config").to_text(), "checkpoint config");
}

Checkpoint load_for_resume(const std::string& path, const RunConfig& config,
                           const std::string& stage) {
  Checkpoint ckpt = Checkpoint::load(path);
  UFO2_CHECK(ckpt.at("stage").to_text() == stage, ErrorKind::kIncompatible,
             path + " is a " + ckpt.at("stage").to_text() + " checkpoint, not " + stage);
  const auto state = ckpt.at("rng.state").to_u64();
  UFO2_CHECK(state.size() == 2 && state[0] == config.seed && state[1] == ckpt.step,
             ErrorKind::kIncompatible, path + ": seed differs from the run config");
  const RunConfig stored = stored_config(ckpt);
  UFO2_CHECK(stored.precision == config.precision, ErrorKind::kIncompatible,
             path + ": precision differs from the run config");
  check_encoder_compatible(stored, config);
  return ckpt;
}

Record config_record(const RunConfig& config, const std::string& stage) {
  Record r;
  r["event"] = "config";
  r["stage"] = stage;
  Record values;
  for (const auto& key : RunConfig::keys()) values[key] = config.get(key);
  r["config"] = values;
  return r;
}

ChunkSpec training_chunk(const RunConfig& config, const RunOptions& options, Index step) {
  if (options.chunk) return *options.chunk;
  Rng rng = Rng::derive(config.seed, {kChunkTag, static_cast<std::uint64_t>(step)});
  return sample_chunk_size(rng, config.train.max_chunk);
}

Rng utterance_rng(const RunConfig& config, std::uint64_t tag, Index step, std::size_t i) {
  return Rng::derive(config.seed, {tag, static_cast<std::uint64_t>(step), i});
}

void check_finite(double value, Index step, const std::string& what) {
  UFO2_CHECK(std::isfinite(value), ErrorKind::kDivergence,
             "step " + std::to_string(step) + ": non-finite " + what);
}

Record nullable(const std::optional<double>& v) { return v ? Record(*v) : Record(nullptr); }

std::string checkpoint_path(const RunOptions& options, Index step, bool final) {
  return (fs::path(options.out_dir) /
          (final ? std::string("final.ckpt") : "step_" + std::to_string(step) + ".ckpt"))
      .string();
}

template <typename Scalar>
TrainSummary pretrain_impl(const RunConfig& config, const RunOptions& options) {
  const std::string manifest = config.resolve(config.data.unlabeled);
  const std::optional<Cmvn> cmvn = find_cmvn(manifest);
  auto data = load_dataset<Scalar>(manifest, cmvn, nullptr);
  filter_dataset(
      data,
      [&](const Utterance<Scalar>& u) {
        return u.features.rows() >= EncoderConfig::kMinFrames &&
               config.encoder.output_length(u.features.rows()) > config.pretrain.mask_span;
      },
      "masking");

  ParamStore<Scalar> store;
  Rng init = Rng::derive(config.seed, {kInitTag});
  Encoder<Scalar>::init_params(config.encoder, store, init);
  Quantizer<Scalar>::init_params(config.quantizer, config.encoder.d_model, store, init);
  Matrix<Scalar> embedding(1, config.encoder.d_model);
  for (Index i = 0; i < embedding.size(); ++i) {
    embedding.data()[i] = static_cast<Scalar>(init.uniform());
  }
  store.add("ssl.mask_embedding", embedding);

  Adam<Scalar> adam;
  Index start = 0;
  if (options.resume) {
    Checkpoint ckpt = load_for_resume(*options.resume, config, "pretrain");
    restore_state(ckpt, store, adam);
    start = static_cast<Index>(ckpt.step);
  }
  fs::create_directories(options.out_dir);
  MetricsLog log((fs::path(options.out_dir) / "metrics.jsonl").string(), start == 0);
  if (start == 0) log.write(config_record(config, "pretrain"));

  const Encoder<Scalar> encoder(config.encoder, store);
  const Quantizer<Scalar> quantizer(config.quantizer, store);
  const Tensor<Scalar> mask_embedding = store.get("ssl.mask_embedding");
  const bool use_dropout = config.encoder.dropout > 0;
  TrainSummary summary;
  auto save = [&](Index step, bool final) {
    Checkpoint ckpt;
    store_common(ckpt, config, "pretrain", cmvn, step);
    store_state(ckpt, store, adam);
    const std::string path = checkpoint_path(options, step, final);
    ckpt.save(path);
    return path;
  };

  for (Index step = start + 1; step <= config.train.steps; ++step) {
    const ChunkSpec chunk = training_chunk(config, options, step);
    const double temperature = config.quantizer.temperature_at(step - 1);
    const auto batch = batch_for_step(static_cast<Index>(data.size()), config.train.batch_size,
                                      config.seed, step);
    const auto inv = static_cast<Scalar>(1.0 / static_cast<double>(batch.size()));
    store.zero_grad();
    double total = 0, offline = 0, online = 0, diversity = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      Rng rng = utterance_rng(config, kUtteranceTag, step, i);
      Rng dropout_rng = utterance_rng(config, kDropoutTag, step, i);
      Graph<Scalar> graph;
      auto losses = pretrain_loss(encoder, quantizer, mask_embedding,
                                  Tensor<Scalar>(data[batch[i]].features), chunk, config.pretrain,
                                  QuantizerMode::kGumbel, static_cast<Scalar>(temperature), rng,
                                  use_dropout ? &dropout_rng : nullptr);
      check_finite(losses.total.item(), step, "pre-training loss");
      graph.backward(scale(losses.total, inv));
      total += losses.total.item();
      offline += losses.offline.item();
      online += losses.online.item();
      diversity += losses.diversity.item();
    }
    const double n = static_cast<double>(batch.size());
    const double norm = global_grad_norm(store);
    const double lr = noam_lr(step, config.train.lr, config.train.warmup);
    adam.step(store, lr, step, clip_factor(norm, config.train.clip));

    Record r;
    r["event"] = "step";
    r["stage"] = "pretrain";
    r["step"] = step;
    r["loss"] = total / n;
    r["loss_offline"] = offline / n;
    r["loss_online"] = online / n;
    r["loss_diversity"] = diversity / n;
    r["lambda"] = config.pretrain.lambda;
    r["diversity_weight"] = config.pretrain.diversity_weight;
    r["chunk"] = chunk.to_string();
    r["temperature"] = temperature;
    r["lr"] = lr;
    r["grad_norm"] = norm;
    log.write(r);
    summary.last_loss = total / n;
    if (options.verbose) std::cerr << r.dump() << "\n";
    if (config.train.checkpoint_every > 0 && step % config.train.checkpoint_every == 0) {
      save(step, false);
    }
  }
  summary.checkpoint = save(std::max(start, config.train.steps), true);
  summary.metrics = log.path();
  summary.steps = config.train.steps;
  return summary;
}

Vocabulary run_vocabulary(const RunConfig& config) {
  const std::string path =
      config.data.vocab.empty()
          ? (fs::path(config.resolve(config.data.labeled)).parent_path() / "vocab.txt").string()
          : config.resolve(config.data.vocab);
  return Vocabulary::load(path);
}

std::string vocabulary_text(const Vocabulary& v) {
  std::string text;
  for (Index i = kReservedSymbols; i < v.size(); ++i) text += v.unit(i) + "\n";
  return text;
}

Vocabulary vocabulary_from_text(const std::string& text) {
  std::vector<std::string> units;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) units.push_back(line);
  }
  return Vocabulary::from_units(units);
}

const char* to_string(Branch b) {
  switch (b) {
    case Branch::kBoth:
      return "both";
    case Branch::kOffline:
      return "offline";
    case Branch::kOnline:
      return "online";
  }
  return "both";
}

template <typename Scalar>
TrainSummary finetune_impl(const RunConfig& config, const RunOptions& options) {
  const std::string manifest = config.resolve(config.data.labeled);
  const Vocabulary vocab = run_vocabulary(config);
  std::optional<Cmvn> cmvn = find_cmvn(manifest);
  std::optional<Checkpoint> pretrained;
  if (options.init) {
    pretrained = Checkpoint::load(*options.init);
    check_encoder_compatible(stored_config(*pretrained), config);
    // Features must be normalised the way the encoder saw them.
    if (auto stored = stored_cmvn(*pretrained)) cmvn = stored;
  }
  auto data = load_dataset<Scalar>(manifest, cmvn, &vocab);
  filter_dataset(
      data,
      [&](const Utterance<Scalar>& u) {
        return u.features.rows() >= EncoderConfig::kMinFrames &&
               config.encoder.output_length(u.features.rows()) >= ctc_min_frames(u.tokens);
      },
      "CTC alignment");

  const DecoderConfig decoder_config = config.decoder_config(vocab.size());
  ParamStore<Scalar> store;
  Rng init = Rng::derive(config.seed, {kInitTag});
  Encoder<Scalar>::init_params(config.encoder, store, init);
  Rng head_init = Rng::derive(config.seed, {kHeadTag});
  AsrHead<Scalar>::init_params(decoder_config, store, head_init);
  if (pretrained) {
    for (const auto& name : store.names("encoder.")) assign(store, name, pretrained->at(name));
  }

  Adam<Scalar> adam;
  Index start = 0;
  if (options.resume) {
    Checkpoint ckpt = load_for_resume(*options.resume, config, "finetune");
    restore_state(ckpt, store, adam);
    start = static_cast<Index>(ckpt.step);
  }
  fs::create_directories(options.out_dir);
  MetricsLog log((fs::path(options.out_dir) / "metrics.jsonl").string(), start == 0);
  if (start == 0) {
    Record r = config_record(config, "finetune");
    r["init"] = options.init ? Record(*options.init) : Record(nullptr);
    log.write(r);
  }

  const Encoder<Scalar> encoder(config.encoder, store);
  const AsrHead<Scalar> head(decoder_config, store);
  const bool use_dropout = config.encoder.dropout > 0;
  TrainSummary summary;
  auto save = [&](Index step, bool final) {
    Checkpoint ckpt;
    store_common(ckpt, config, "finetune", cmvn, step);
    store_state(ckpt, store, adam);
    ckpt.tensors["vocab"] = StoredTensor::from_text(vocabulary_text(vocab));
    const std::string path = checkpoint_path(options, step, final);
    ckpt.save(path);
    return path;
  };
  auto frozen = [](const std::string& name) { return name.rfind("encoder.", 0) == 0; };

  for (Index step = start + 1; step <= config.train.steps; ++step) {
    const ChunkSpec chunk = training_chunk(config, options, step);
    Branch branch = Branch::kBoth;
    if (config.finetune.mode == FinetuneMode::kRandom) {
      Rng rng = Rng::derive(config.seed, {kBranchTag, static_cast<std::uint64_t>(step)});
      branch = rng.bernoulli(0.5) ? Branch::kOffline : Branch::kOnline;
    }
    const auto batch = batch_for_step(static_cast<Index>(data.size()), config.train.batch_size,
                                      config.seed, step);
    const auto inv = static_cast<Scalar>(1.0 / static_cast<double>(batch.size()));
    store.zero_grad();
    double total = 0;
    std::map<std::string, double> parts;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      Rng dropout_rng = utterance_rng(config, kDropoutTag, step, i);
      Graph<Scalar> graph;
      const auto& u = data[batch[i]];
      auto losses = finetune_loss(encoder, head, Tensor<Scalar>(u.features), u.tokens, chunk,
                                  config.finetune, branch, use_dropout ? &dropout_rng : nullptr);
      check_finite(losses.total.item(), step, "fine-tuning loss");
      graph.backward(scale(losses.total, inv));
      total += losses.total.item();
      for (const auto& [name, terms] :
           {std::pair{std::string("offline"), losses.offline},
            std::pair{std::string("online"), losses.online}}) {
        if (!terms) continue;
        parts["loss_" + name] += terms->hybrid.item();
        parts["ctc_" + name] += terms->ctc.item();
        parts["att_" + name] += terms->att.item();
      }
    }
    const double n = static_cast<double>(batch.size());
    const double norm = global_grad_norm(store);
    const double lr = noam_lr(step, config.train.lr, config.train.warmup);
    const bool freeze = step <= config.train.freeze_encoder_steps;
    adam.step(store, lr, step, clip_factor(norm, config.train.clip),
              freeze ? std::function<bool(const std::string&)>(frozen) : nullptr);

    Record r;
    r["event"] = "step";
    r["stage"] = "finetune";
    r["step"] = step;
    r["loss"] = total / n;
    for (const char* key : {"loss_offline", "loss_online", "ctc_offline", "att_offline",
                            "ctc_online", "att_online"}) {
      auto it = parts.find(key);
      r[key] = nullable(it == parts.end() ? std::nullopt : std::optional<double>(it->second / n));
    }
    r["alpha"] = config.finetune.alpha;
    r["epsilon"] = config.finetune.epsilon;
    r["branch"] = to_string(branch);
    r["chunk"] = chunk.to_string();
    r["lr"] = lr;
    r["grad_norm"] = norm;
    log.write(r);
    summary.last_loss = total / n;
    if (options.verbose) std::cerr << r.dump() << "\n";
    if (config.train.checkpoint_every > 0 && step % config.train.checkpoint_every == 0) {
      save(step, false);
    }
  }
  summary.checkpoint = save(std::max(start, config.train.steps), true);
  summary.metrics = log.path();
  summary.steps = config.train.steps;
  return summary;
}

std::string mode_label(const ChunkSpec& chunk, const char* method) {
  return chunk.to_string() + "/" + method;
}

template <typename Scalar>
DecodeSummary decode_impl(const RunConfig& config, const RunOptions& options,
                          const Checkpoint& ckpt) {
  const RunConfig model = stored_config(ckpt);
  UFO2_CHECK(ckpt.contains("ctc.w") && ckpt.contains("vocab"), ErrorKind::kMissingHead,
             *options.init + " has no ASR head; decode needs a fine-tuned checkpoint");
  const Vocabulary vocab = vocabulary_from_text(ckpt.at("vocab").to_text());
  const DecoderConfig decoder_config = model.decoder_config(vocab.size());
  ParamStore<Scalar> store;
  Rng init(0);
  Encoder<Scalar>::init_params(model.encoder, store, init);
  AsrHead<Scalar>::init_params(decoder_config, store, init);
  for (const auto& [name, p] : store.all()) assign(store, name, ckpt.at(name));
  const Encoder<Scalar> encoder(model.encoder, store);
  const AsrHead<Scalar> head(decoder_config, store);

  const ChunkSpec chunk = options.chunk ? *options.chunk : config.decode.chunk;
  const std::string manifest = config.resolve(config.data.test);
  auto data = load_dataset<Scalar>(manifest, stored_cmvn(ckpt), nullptr);
  fs::create_directories(options.out_dir);
  DecodeSummary summary;
  summary.chunk = chunk;
  summary.hyp_path =
      (fs::path(options.out_dir) / ("hyp_" + chunk.to_string() + ".tsv")).string();
  std::ostringstream out;
  out.precision(9);
  NoGradGuard<Scalar> no_grad;
  for (const auto& u : data) {
    UFO2_CHECK(u.features.rows() >= EncoderConfig::kMinFrames, ErrorKind::kLength,
               "utterance " + u.id + " is too short to decode");
    const Tensor<Scalar> context = encoder.encode_single(Tensor<Scalar>(u.features), chunk);
    const Matrix<double> lp = head.ctc_log_probs(context).value().template cast<double>();
    auto hyps = ctc_prefix_beam_search(lp, config.decode.beam);
    if (config.decode.method != DecodeMethod::kAr) {
      out << u.id << '\t' << mode_label(chunk, "cpbs") << '\t' << hyps.front().ctc_log_score
          << '\t' << vocab.detokenize(hyps.front().tokens) << '\n';
    }
    if (config.decode.method != DecodeMethod::kCpbs) {
      auto rescored = attention_rescore(hyps, context, head.decoder(), config.decode.rescore_weight);
      out << u.id << '\t' << mode_label(chunk, "ar") << '\t' << *rescored.front().combined
          << '\t' << vocab.detokenize(rescored.front().tokens) << '\n';
    }
    ++summary.utterances;
  }
  const std::string text = out.str();
  std::ofstream file(summary.hyp_path, std::ios::trunc);
  file << text;
  UFO2_CHECK(file.good(), ErrorKind::kLoad, "cannot write " + summary.hyp_path);
  return summary;
}

}  // namespace

void check_encoder_compatible(const RunConfig& stored, const RunConfig& current) {
  std::string diffs;
  for (const auto& key : encoder_shape_keys()) {
    const std::string a = stored.get(key);
    const std::string b = current.get(key);
    if (a != b) diffs += (diffs.empty() ? "" : ", ") + key + " (checkpoint " + a + ", run " + b + ")";
  }
  UFO2_CHECK(diffs.empty(), ErrorKind::kIncompatible, "encoder config differs: " + diffs);
}

std::string latency_band(const ChunkSpec& chunk) {
  if (chunk.is_unbounded()) return "offline (full utterance)";
  std::ostringstream out;
  out << "[0, " << chunk.max_latency_ms() << "] ms, mean " << chunk.mean_latency_ms() << " ms";
  return out.str();
}

void run_datagen(const RunConfig& config, const RunOptions& options) {
  SynthConfig synth = config.synth;
  synth.feature_dim = config.encoder.feature_dim;
  generate_corpus(options.out_dir, synth, config.counts);
}

TrainSummary run_pretrain(const RunConfig& config, const RunOptions& options) {
  return config.precision == Precision::kFloat64 ? pretrain_impl<double>(config, options)
                                                 : pretrain_impl<float>(config, options);
}

TrainSummary run_finetune(const RunConfig& config, const RunOptions& options) {
  return config.precision == Precision::kFloat64 ? finetune_impl<double>(config, options)
                                                 : finetune_impl<float>(config, options);
}

DecodeSummary run_decode(const RunConfig& config, const RunOptions& options) {
  UFO2_CHECK(options.init.has_value(), ErrorKind::kConfiguration,
             "decode needs a model checkpoint (--init)");
  const Checkpoint ckpt = Checkpoint::load(*options.init);
  const RunConfig model = stored_config(ckpt);
  return model.precision == Precision::kFloat64 ? decode_impl<double>(config, options, ckpt)
                                                : decode_impl<float>(config, options, ckpt);
}

std::vector<EvalLine> evaluate_hypotheses(const std::string& hyp_path,
                                          const std::string& ref_manifest) {
  const Manifest refs = load_manifest(ref_manifest);
  UFO2_CHECK(refs.labeled(), ErrorKind::kLoad, ref_manifest + " has no transcripts");
  std::ifstream in(hyp_path);
  UFO2_CHECK(in.good(), ErrorKind::kLoad, "cannot open hypotheses " + hyp_path);
  std::map<std::string, std::map<std::string, std::string>> by_mode;
  Index rows = 0;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (int i = 0; i < 3; ++i) {
      const auto tab = line.find('\t', start);
      UFO2_CHECK(tab != std::string::npos, ErrorKind::kFormat,
                 hyp_path + ": expected id, mode, score and text columns");
      f.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    f.push_back(line.substr(start));
    UFO2_CHECK(by_mode[f[1]].emplace(f[0], f[3]).second, ErrorKind::kAlignment,
               hyp_path + ": duplicate id " + f[0] + " for mode " + f[1]);
    ++rows;
  }
  UFO2_CHECK(rows > 0, ErrorKind::kAlignment, hyp_path + " has no hypotheses");
  std::vector<EvalLine> out;
  for (const auto& [mode, hyps] : by_mode) {
    EvalLine line;
    line.mode = mode;
    std::set<std::string> ids;
    for (const auto& e : refs.entries) {
      ids.insert(e.id);
      auto it = hyps.find(e.id);
      UFO2_CHECK(it != hyps.end(), ErrorKind::kAlignment,
                 "no " + mode + " hypothesis for utterance " + e.id);
      const auto ref = split_words(*e.transcript);
      line.edits += edit_distance(ref, split_words(it->second));
      line.words += static_cast<Index>(ref.size());
      ++line.utterances;
    }
    for (const auto& [id, text] : hyps) {
      UFO2_CHECK(ids.count(id) > 0, ErrorKind::kAlignment,
                 "hypothesis " + id + " is not in " + ref_manifest);
    }
    UFO2_CHECK(line.words > 0, ErrorKind::kUndefinedMetric, "reference has no words");
    line.wer = static_cast<double>(line.edits) / static_cast<double>(line.words);
    out.push_back(line);
  }
  return out;
}

std::vector<EvalLine> run_eval(const RunConfig& config, const RunOptions& options) {
  UFO2_CHECK(options.hyp.has_value(), ErrorKind::kConfiguration,
             "eval needs a hypothesis file (--hyp)");
  auto lines = evaluate_hypotheses(*options.hyp, config.resolve(config.data.test));
  fs::create_directories(options.out_dir);
  MetricsLog log((fs::path(options.out_dir) / "eval.jsonl").string(), false);
  for (const auto& l : lines) {
    Record r;
    r["event"] = "eval";
    r["mode"] = l.mode;
    r["wer"] = l.wer;
    r["edits"] = l.edits;
    r["words"] = l.words;
    r["utterances"] = l.utterances;
    log.write(r);
  }
  return lines;
}

}  // namespace ufo2
