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

#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "ufo2/config.h"
#include "ufo2/error.h"
#include "ufo2/gradcheck_suite.h"
#include "ufo2/trainer.h"

namespace {

int gradcheck(const ufo2::RunConfig& config) {
  int failures = 0;
  for (const auto& r : ufo2::run_gradcheck_suite(config.seed)) {
    std::printf("%-26s max_rel_error %.3e  threshold %.0e  %s\n", r.name.c_str(), r.max_rel_error,
                r.threshold, r.passed() ? "ok" : "FAILED");
    if (!r.passed()) ++failures;
  }
  std::printf("%d failure(s)\n", failures);
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ufo2: unified streaming and non-streaming speech recognition"};
  app.require_subcommand(1);

  std::string config_path;
  std::string chunk_text;
  ufo2::RunOptions options;
  std::string init, resume, hyp;
  bool verbose = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration")->required();
    cmd->add_option("--out", options.out_dir, "output directory");
    cmd->add_flag("-v,--verbose", verbose, "print every step record");
  };
  auto* datagen = app.add_subcommand("datagen", "generate the synthetic corpus");
  auto* pretrain = app.add_subcommand("pretrain", "self-supervised pre-training");
  auto* finetune = app.add_subcommand("finetune", "supervised fine-tuning");
  auto* decode = app.add_subcommand("decode", "decode the test manifest");
  auto* eval = app.add_subcommand("eval", "score hypotheses against the test manifest");
  auto* check = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  for (auto* cmd : {datagen, pretrain, finetune, decode, eval, check}) add_common(cmd);
  for (auto* cmd : {pretrain, finetune, decode}) {
    cmd->add_option("--chunk-size", chunk_text, "chunk size in encoder frames, or inf");
  }
  finetune->add_option("--init", init, "pre-trained checkpoint");
  decode->add_option("--init", init, "fine-tuned checkpoint")->required();
  for (auto* cmd : {pretrain, finetune}) {
    cmd->add_option("--resume", resume, "checkpoint of this run to continue from");
  }
  eval->add_option("--hyp", hyp, "hypothesis TSV")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const ufo2::RunConfig config = ufo2::load_config(config_path);
    options.verbose = verbose;
    if (!chunk_text.empty()) options.chunk = ufo2::ChunkSpec::parse(chunk_text);
    if (!init.empty()) options.init = init;
    if (!resume.empty()) options.resume = resume;
    if (!hyp.empty()) options.hyp = hyp;

    if (datagen->parsed()) {
      ufo2::run_datagen(config, options);
      std::cout << "corpus written to " << options.out_dir << "\n";
    } else if (pretrain->parsed() || finetune->parsed()) {
      const auto summary = pretrain->parsed() ? ufo2::run_pretrain(config, options)
                                              : ufo2::run_finetune(config, options);
      std::cout << "steps " << summary.steps << ", last loss " << summary.last_loss << "\n"
                << "checkpoint " << summary.checkpoint << "\n"
                << "metrics " << summary.metrics << "\n";
    } else if (decode->parsed()) {
      const auto summary = ufo2::run_decode(config, options);
      std::cout << "decoded " << summary.utterances << " utterances with chunk "
                << summary.chunk.to_string() << "\n"
                << "latency " << ufo2::latency_band(summary.chunk) << "\n"
                << "hypotheses " << summary.hyp_path << "\n";
    } else if (eval->parsed()) {
      for (const auto& line : ufo2::run_eval(config, options)) {
        std::printf("%-12s WER %6.2f%%  (%ld edits / %ld words, %ld utterances)\n",
                    line.mode.c_str(), 100 * line.wer, static_cast<long>(line.edits),
                    static_cast<long>(line.words), static_cast<long>(line.utterances));
      }
    } else if (check->parsed()) {
      return gradcheck(config);
    }
  } catch (const ufo2::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
