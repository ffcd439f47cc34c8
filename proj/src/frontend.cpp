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

#include "ufo2/frontend.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include <unsupported/Eigen/FFT>

#include "ufo2/binary_io.h"
#include "ufo2/rng.h"

namespace ufo2 {

namespace fs = std::filesystem;

Wav read_wav(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  ByteReader in(bytes.data(), bytes.size(), path);
  UFO2_CHECK(in.get_string(4) == "RIFF", ErrorKind::kFormat, path + ": missing RIFF tag");
  in.get<std::uint32_t>();
  UFO2_CHECK(in.get_string(4) == "WAVE", ErrorKind::kFormat, path + ": missing WAVE tag");
  bool have_format = false;
  Wav wav;
  while (in.remaining() >= 8) {
    const std::string id = in.get_string(4);
    const auto size = in.get<std::uint32_t>();
    in.require(size);
    if (id == "fmt ") {
      UFO2_CHECK(size >= 16, ErrorKind::kFormat, path + ": fmt chunk too small");
      const auto format = in.get<std::uint16_t>();
      const auto channels = in.get<std::uint16_t>();
      const auto rate = in.get<std::uint32_t>();
      in.get<std::uint32_t>();  // byte rate
      in.get<std::uint16_t>();  // block align
      const auto bits = in.get<std::uint16_t>();
      UFO2_CHECK(format == 1, ErrorKind::kFormat,
                 path + ": audio_format " + std::to_string(format) + " is not PCM");
      UFO2_CHECK(channels == 1, ErrorKind::kFormat,
                 path + ": channels " + std::to_string(channels) + " is not mono");
      UFO2_CHECK(rate == 16000, ErrorKind::kFormat,
                 path + ": sample_rate " + std::to_string(rate) + " is not 16000");
      UFO2_CHECK(bits == 16, ErrorKind::kFormat,
                 path + ": bits_per_sample " + std::to_string(bits) + " is not 16");
      in.get_string(size - 16);
      wav.sample_rate = static_cast<int>(rate);
      have_format = true;
    } else if (id == "data") {
      UFO2_CHECK(have_format, ErrorKind::kFormat, path + ": data chunk before fmt chunk");
      wav.samples.resize(size / 2);
      for (auto& s : wav.samples) s = static_cast<float>(in.get<std::int16_t>()) / 32768.0f;
      return wav;
    } else {
      in.get_string(size);
    }
    if (size % 2 == 1 && in.remaining() > 0) in.get<std::uint8_t>();
  }
  throw Error(ErrorKind::kFormat, path + ": no data chunk");
}

void write_wav(const std::string& path, const Wav& wav) {
  UFO2_CHECK(wav.sample_rate == 16000, ErrorKind::kFormat, "only 16 kHz WAV is written");
  const auto data_size = static_cast<std::uint32_t>(wav.samples.size() * 2);
  ByteWriter out;
  out.put_string("RIFF");
  out.put<std::uint32_t>(36 + data_size);
  out.put_string("WAVEfmt ");
  out.put<std::uint32_t>(16);
  out.put<std::uint16_t>(1);
  out.put<std::uint16_t>(1);
  out.put<std::uint32_t>(16000);
  out.put<std::uint32_t>(32000);
  out.put<std::uint16_t>(2);
  out.put<std::uint16_t>(16);
  out.put_string("data");
  out.put<std::uint32_t>(data_size);
  for (float s : wav.samples) {
    const double scaled = std::round(static_cast<double>(s) * 32768.0);
    out.put<std::int16_t>(static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0)));
  }
  write_file_bytes(path, out.bytes());
}

Index MelConfig::fft_size() const {
  Index n = 1;
  while (n < window) n *= 2;
  return n;
}

Index MelConfig::frame_count(Index samples) const {
  UFO2_CHECK(samples >= window, ErrorKind::kLength,
             "log_mel needs at least " + std::to_string(window) + " samples, got " +
                 std::to_string(samples));
  return 1 + (samples - window) / step;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_band_edges(const MelConfig& c) {
  const double lo = hz_to_mel(c.low_hz);
  const double hi = hz_to_mel(c.high_hz);
  std::vector<double> edges(c.n_mels + 2);
  for (Index i = 0; i < c.n_mels + 2; ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / (c.n_mels + 1));
  }
  return edges;
}

namespace {

Matrix<double> mel_filterbank(const MelConfig& c) {
  const Index bins = c.fft_size() / 2 + 1;
  const double lo = hz_to_mel(c.low_hz);
  const double hi = hz_to_mel(c.high_hz);
  Matrix<double> fb = Matrix<double>::Zero(bins, c.n_mels);
  for (Index k = 0; k < bins; ++k) {
    const double mel = hz_to_mel(static_cast<double>(k) * c.sample_rate / c.fft_size());
    for (Index i = 0; i < c.n_mels; ++i) {
      const double left = lo + (hi - lo) * i / (c.n_mels + 1);
      const double center = lo + (hi - lo) * (i + 1) / (c.n_mels + 1);
      const double right = lo + (hi - lo) * (i + 2) / (c.n_mels + 1);
      if (mel > left && mel <= center) {
        fb(k, i) = (mel - left) / (center - left);
      } else if (mel > center && mel < right) {
        fb(k, i) = (right - mel) / (right - center);
      }
    }
  }
  return fb;
}

}  // namespace

FeatureMatrix log_mel(const std::vector<float>& samples, const MelConfig& c) {
  const Index frames = c.frame_count(static_cast<Index>(samples.size()));
  const Index n_fft = c.fft_size();
  const Index bins = n_fft / 2 + 1;
  const Matrix<double> fb = mel_filterbank(c);
  std::vector<double> hann(c.window);
  for (Index i = 0; i < c.window; ++i) {
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / c.window);
  }
  Eigen::FFT<double> fft;
  std::vector<double> buffer(n_fft);
  std::vector<std::complex<double>> spectrum;
  Matrix<double> magnitude(1, bins);
  FeatureMatrix out(frames, c.n_mels);
  for (Index t = 0; t < frames; ++t) {
    std::fill(buffer.begin(), buffer.end(), 0.0);
    for (Index i = 0; i < c.window; ++i) buffer[i] = samples[t * c.step + i] * hann[i];
    fft.fwd(spectrum, buffer);
    for (Index k = 0; k < bins; ++k) magnitude(0, k) = std::abs(spectrum[k]);
    const Matrix<double> energy = magnitude * fb;
    for (Index i = 0; i < c.n_mels; ++i) {
      out(t, i) = static_cast<float>(std::log(std::max(energy(0, i), c.floor)));
    }
  }
  return out;
}

void write_features(const std::string& path, const FeatureMatrix& features) {
  ByteWriter out;
  out.put_string("UFEA");
  out.put<std::uint32_t>(1);
  out.put<std::uint32_t>(static_cast<std::uint32_t>(features.rows()));
  out.put<std::uint32_t>(static_cast<std::uint32_t>(features.cols()));
  for (Index i = 0; i < features.size(); ++i) out.put<float>(features.data()[i]);
  write_file_bytes(path, out.bytes());
}

FeatureMatrix read_features(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  ByteReader in(bytes.data(), bytes.size(), path);
  UFO2_CHECK(in.get_string(4) == "UFEA", ErrorKind::kFormat, path + ": not a feature file");
  const auto version = in.get<std::uint32_t>();
  UFO2_CHECK(version == 1, ErrorKind::kFormat,
             path + ": unsupported feature version " + std::to_string(version));
  const auto rows = in.get<std::uint32_t>();
  const auto cols = in.get<std::uint32_t>();
  UFO2_CHECK(rows >= 1 && cols >= 1, ErrorKind::kFormat, path + ": empty feature matrix");
  FeatureMatrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) {
    m.data()[i] = in.get<float>();
    UFO2_CHECK(std::isfinite(m.data()[i]), ErrorKind::kFormat, path + ": non-finite feature");
  }
  UFO2_CHECK(in.remaining() == 0, ErrorKind::kFormat, path + ": trailing bytes");
  return m;
}

std::string Manifest::resolve(const ManifestEntry& entry) const {
  const fs::path p(entry.path);
  return p.is_absolute() ? p.string() : (fs::path(directory) / p).string();
}

bool Manifest::labeled() const {
  return !entries.empty() &&
         std::all_of(entries.begin(), entries.end(),
                     [](const ManifestEntry& e) { return e.transcript.has_value(); });
}

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  UFO2_CHECK(in.good(), ErrorKind::kLoad, "cannot open manifest " + path);
  Manifest m;
  m.directory = fs::path(path).parent_path().string();
  std::set<std::string> seen;
  std::string line;
  for (Index number = 1; std::getline(in, line); ++number) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1) {
      fields.push_back(line.substr(start, tab - start));
    }
    fields.push_back(line.substr(start));
    UFO2_CHECK(fields.size() == 2 || fields.size() == 3, ErrorKind::kLoad,
               path + ":" + std::to_string(number) + ": expected 2 or 3 tab-separated fields");
    ManifestEntry e{fields[0], fields[1], std::nullopt};
    if (fields.size() == 3) e.transcript = fields[2];
    UFO2_CHECK(seen.insert(e.id).second, ErrorKind::kLoad,
               path + ":" + std::to_string(number) + ": duplicate id " + e.id);
    m.entries.push_back(std::move(e));
  }
  return m;
}

void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ostringstream out;
  for (const auto& e : entries) {
    out << e.id << '\t' << e.path;
    if (e.transcript) out << '\t' << *e.transcript;
    out << '\n';
  }
  const std::string text = out.str();
  write_file_bytes(path, std::vector<unsigned char>(text.begin(), text.end()));
}

FeatureMatrix load_entry_features(const Manifest& manifest, const ManifestEntry& entry) {
  const std::string path = manifest.resolve(entry);
  if (fs::path(path).extension() == ".wav") return log_mel(read_wav(path).samples);
  return read_features(path);
}

namespace {

const std::vector<std::string> kReserved = {"<blank>", "<unk>", "<sos/eos>"};

// Splits UTF-8 text into code points.
std::vector<std::string> code_points(const std::string& text) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < text.size();) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t n = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : 4;
    n = std::min(n, text.size() - i);
    out.push_back(text.substr(i, n));
    i += n;
  }
  return out;
}

}  // namespace

Vocabulary Vocabulary::from_units(const std::vector<std::string>& units) {
  Vocabulary v;
  for (const auto& r : kReserved) {
    v.ids_[r] = v.size();
    v.units_.push_back(r);
  }
  for (const auto& u : units) {
    UFO2_CHECK(!u.empty() && code_points(u).size() == 1, ErrorKind::kLoad,
               "vocabulary unit '" + u + "' is not a single character");
    UFO2_CHECK(v.ids_.count(u) == 0, ErrorKind::kLoad, "duplicate vocabulary unit '" + u + "'");
    v.ids_[u] = v.size();
    v.units_.push_back(u);
  }
  return v;
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  UFO2_CHECK(in.good(), ErrorKind::kLoad, "cannot open vocabulary " + path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  UFO2_CHECK(lines.size() > kReserved.size() &&
                 std::equal(kReserved.begin(), kReserved.end(), lines.begin()),
             ErrorKind::kLoad, path + ": must start with <blank>, <unk>, <sos/eos>");
  return from_units(std::vector<std::string>(lines.begin() + 3, lines.end()));
}

void Vocabulary::save(const std::string& path) const {
  std::string text;
  for (const auto& u : units_) text += u + "\n";
  write_file_bytes(path, std::vector<unsigned char>(text.begin(), text.end()));
}

const std::string& Vocabulary::unit(Index id) const {
  UFO2_CHECK(id >= 0 && id < size(), ErrorKind::kDimension,
             "token id " + std::to_string(id) + " outside vocabulary");
  return units_[id];
}

Index Vocabulary::id(const std::string& unit) const {
  auto it = ids_.find(unit);
  return it == ids_.end() ? kUnkId : it->second;
}

TokenIds Vocabulary::tokenize(const std::string& text) const {
  TokenIds ids;
  for (const auto& cp : code_points(text)) {
    if (cp.size() == 1 && std::isspace(static_cast<unsigned char>(cp[0]))) continue;
    const Index i = id(cp);
    ids.push_back(i < kReservedSymbols ? kUnkId : i);
  }
  return ids;
}

std::string Vocabulary::detokenize(const TokenIds& ids) const {
  std::string out;
  for (Index i : ids) {
    if (!out.empty()) out += ' ';
    out += unit(i);
  }
  return out;
}

Cmvn Cmvn::compute(const std::vector<FeatureMatrix>& features) {
  UFO2_CHECK(!features.empty(), ErrorKind::kLength, "cmvn over no utterances");
  const Index dim = features.front().cols();
  RowVector<double> sum = RowVector<double>::Zero(dim);
  RowVector<double> sq = RowVector<double>::Zero(dim);
  double frames = 0;
  for (const auto& f : features) {
    UFO2_CHECK(f.cols() == dim, ErrorKind::kDimension, "cmvn: mixed feature dimensions");
    const Matrix<double> d = f.cast<double>();
    sum += d.colwise().sum();
    sq += d.array().square().matrix().colwise().sum();
    frames += static_cast<double>(f.rows());
  }
  Cmvn c;
  const RowVector<double> mean = sum / frames;
  const RowVector<double> var = (sq / frames - mean.array().square().matrix()).cwiseMax(1e-10);
  c.mean = mean.cast<float>();
  c.inv_std = var.array().rsqrt().matrix().cast<float>();
  return c;
}

FeatureMatrix Cmvn::apply(const FeatureMatrix& features) const {
  UFO2_CHECK(features.cols() == mean.cols(), ErrorKind::kDimension,
             "cmvn dimension " + std::to_string(mean.cols()) + " does not match features");
  return ((features.rowwise() - mean).array().rowwise() * inv_std.array()).matrix();
}

void Cmvn::save(const std::string& path) const {
  std::ostringstream out;
  out << std::setprecision(std::numeric_limits<float>::max_digits10);
  out << "mean";
  for (Index i = 0; i < mean.cols(); ++i) out << ' ' << mean(i);
  out << "\ninv_std";
  for (Index i = 0; i < inv_std.cols(); ++i) out << ' ' << inv_std(i);
  out << '\n';
  const std::string text = out.str();
  write_file_bytes(path, std::vector<unsigned char>(text.begin(), text.end()));
}

Cmvn Cmvn::load(const std::string& path) {
  std::ifstream in(path);
  UFO2_CHECK(in.good(), ErrorKind::kLoad, "cannot open cmvn stats " + path);
  auto read_row = [&](const std::string& tag) {
    std::string line;
    std::getline(in, line);
    std::istringstream fields(line);
    std::string name;
    fields >> name;
    UFO2_CHECK(name == tag, ErrorKind::kFormat, path + ": expected '" + tag + "' row");
    std::vector<float> values;
    for (float v; fields >> v;) values.push_back(v);
    RowVector<float> row(static_cast<Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) row(static_cast<Index>(i)) = values[i];
    return row;
  };
  Cmvn c;
  c.mean = read_row("mean");
  c.inv_std = read_row("inv_std");
  UFO2_CHECK(c.mean.cols() == c.inv_std.cols() && c.mean.cols() > 0, ErrorKind::kFormat,
             path + ": mismatched cmvn rows");
  return c;
}

void SynthConfig::validate() const {
  UFO2_CHECK(vocab_size >= 4, ErrorKind::kConfiguration,
             "datagen.vocab_size must be >= 4 (three reserved symbols)");
  UFO2_CHECK(vocab_size - kReservedSymbols <= 26, ErrorKind::kConfiguration,
             "datagen.vocab_size supports at most 26 letters");
  UFO2_CHECK(tokens_min >= 1 && tokens_max >= tokens_min, ErrorKind::kConfiguration,
             "datagen token range must satisfy 1 <= tokens_min <= tokens_max");
  UFO2_CHECK(frames_per_token >= 1 && feature_dim >= 1, ErrorKind::kConfiguration,
             "datagen sizes must be positive");
  UFO2_CHECK(noise >= 0, ErrorKind::kConfiguration, "datagen.noise must be >= 0");
  UFO2_CHECK(successors >= 0 && successors < vocab_size - kReservedSymbols,
             ErrorKind::kConfiguration,
             "datagen.successors must be in [0, letters - 1]");
}

Synthesizer::Synthesizer(const SynthConfig& config) : config_(config) {
  config_.validate();
  Rng rng = Rng::derive(config_.seed, {0});
  templates_.resize(config_.vocab_size, config_.feature_dim);
  for (Index i = 0; i < templates_.size(); ++i) {
    templates_.data()[i] = static_cast<float>(rng.normal());
  }
  if (config_.successors == 0) return;
  Rng table = Rng::derive(config_.seed, {0, 1});
  successors_.resize(config_.vocab_size);
  for (Index t = kReservedSymbols; t < config_.vocab_size; ++t) {
    TokenIds others;
    for (Index u = kReservedSymbols; u < config_.vocab_size; ++u) {
      if (u != t) others.push_back(u);
    }
    std::shuffle(others.begin(), others.end(), table.engine());
    others.resize(config_.successors);
    std::sort(others.begin(), others.end());
    successors_[t] = others;
  }
}

Vocabulary Synthesizer::vocabulary() const {
  std::vector<std::string> units;
  for (Index i = 0; i < config_.vocab_size - kReservedSymbols; ++i) {
    units.push_back(std::string(1, static_cast<char>('a' + i)));
  }
  return Vocabulary::from_units(units);
}

SynthUtterance Synthesizer::utterance(Rng& rng) const {
  const Index n = rng.uniform_int(config_.tokens_min, config_.tokens_max);
  const Index units = config_.vocab_size - kReservedSymbols;
  TokenIds tokens;
  for (Index i = 0; i < n; ++i) {
    if (!successors_.empty() && !tokens.empty()) {
      const TokenIds& next = successors_[tokens.back()];
      tokens.push_back(next[rng.uniform_int(0, static_cast<Index>(next.size()) - 1)]);
      continue;
    }
    Index t = kReservedSymbols + rng.uniform_int(0, units - 1);
    if (units > 1) {
      while (!tokens.empty() && t == tokens.back()) {
        t = kReservedSymbols + rng.uniform_int(0, units - 1);
      }
    }
    tokens.push_back(t);
  }
  return render(tokens, rng);
}

SynthUtterance Synthesizer::render(const TokenIds& tokens, Rng& rng) const {
  SynthUtterance u;
  u.tokens = tokens;
  const Index fpt = config_.frames_per_token;
  u.features.resize(static_cast<Index>(tokens.size()) * fpt, config_.feature_dim);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    UFO2_CHECK(tokens[i] >= kReservedSymbols && tokens[i] < config_.vocab_size,
               ErrorKind::kDimension, "cannot render a reserved or unknown token");
    for (Index f = 0; f < fpt; ++f) {
      u.features.row(static_cast<Index>(i) * fpt + f) = templates_.row(tokens[i]);
    }
  }
  if (config_.noise > 0) {
    for (Index i = 0; i < u.features.size(); ++i) {
      u.features.data()[i] += static_cast<float>(config_.noise * rng.normal());
    }
  }
  return u;
}

void generate_corpus(const std::string& directory, const SynthConfig& config,
                     const CorpusCounts& counts) {
  Synthesizer synth(config);
  const Vocabulary vocab = synth.vocabulary();
  fs::create_directories(fs::path(directory) / "feats");
  vocab.save((fs::path(directory) / "vocab.txt").string());

  std::vector<FeatureMatrix> training;
  auto write_split = [&](const std::string& name, const char prefix, Index count,
                         std::uint64_t tag, bool labeled, bool keep) {
    std::vector<ManifestEntry> entries;
    for (Index i = 0; i < count; ++i) {
      Rng rng = Rng::derive(config.seed, {tag, static_cast<std::uint64_t>(i)});
      SynthUtterance u = synth.utterance(rng);
      std::ostringstream id;
      id << prefix << std::setw(5) << std::setfill('0') << i;
      const std::string rel = "feats/" + id.str() + ".fea";
      write_features((fs::path(directory) / rel).string(), u.features);
      ManifestEntry e{id.str(), rel, std::nullopt};
      if (labeled) e.transcript = vocab.detokenize(u.tokens);
      entries.push_back(e);
      if (keep) training.push_back(std::move(u.features));
    }
    save_manifest((fs::path(directory) / name).string(), entries);
  };
  write_split("unlabeled.tsv", 'u', counts.unlabeled, 1, false, true);
  write_split("labeled.tsv", 'l', counts.labeled, 2, true, true);
  write_split("test.tsv", 't', counts.test, 3, true, false);
  Cmvn::compute(training).save((fs::path(directory) / kCmvnFile).string());
}

}  // namespace ufo2
