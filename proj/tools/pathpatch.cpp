// Copyright 2026 The Pathpatch Authors. All Rights Reserved.
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

// pathpatch: config-driven path patching experiments.
//
//   pathpatch patch --config configs/induction_story.json [--seed N] [--out DIR] [--jobs N]
//
// Exit codes: 0 ok, 1 unexpected, 2 config, 3 file not found, 4 capacity,
// 5 shape, 6 syntax, 7 binding, 8 structural, 9 format, 10 verification,
// 11 argument, 12 undefined metric, 64 bad command line.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pathpatch/experiment.hpp"

namespace {

int exit_code(pathpatch::ErrorKind kind) {
  using pathpatch::ErrorKind;
  switch (kind) {
    case ErrorKind::kConfig: return 2;
    case ErrorKind::kFileNotFound: return 3;
    case ErrorKind::kCapacity: return 4;
    case ErrorKind::kShape: return 5;
    case ErrorKind::kSyntax: return 6;
    case ErrorKind::kBinding: return 7;
    case ErrorKind::kStructural: return 8;
    case ErrorKind::kFormat: return 9;
    case ErrorKind::kVerification: return 10;
    case ErrorKind::kArgument: return 11;
    case ErrorKind::kUndefinedMetric: return 12;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Path patching experiments over computational graphs"};
  app.require_subcommand(1);

  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> jobs;

  const std::pair<const char*, const char*> commands[] = {
      {"patch", "Score a hypothesis: AUE, ATE and proportion explained"},
      {"attribute", "Per-token loss attribution of a hypothesis"},
      {"greedy", "Greedy attention-head ranking and explained-loss curve"},
      {"rewrite-check", "Apply the config's rewrites and verify each preserves outputs"},
      {"trace", "Patch with Gaussian-noise counterfactuals"},
      {"zero-ablate", "Zero-ablate nodes and report the effect"},
      {"gen-data", "Generate an induction dataset and its frequency table"},
      {"make-model", "Build the configured model and save its weights and graph"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", config, "Experiment config (JSON, comments allowed)")->required();
    sub->add_option("-s,--seed", seed, "Override the config seed");
    sub->add_option("-o,--out", out, "Output directory (overrides output.dir)");
    sub->add_option("-j,--jobs", jobs, "Worker threads for pair scoring")->check(CLI::PositiveNumber);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 64;
  }

  pathpatch::RunOptions opt;
  opt.seed = seed;
  opt.jobs = jobs;
  if (!out.empty()) opt.out_dir = out;
  try {
    pathpatch::run_command(app.get_subcommands().front()->get_name(), config, opt);
  } catch (const pathpatch::Error& e) {
    std::cerr << "pathpatch: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "pathpatch: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
