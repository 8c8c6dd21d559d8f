// Copyright 2026 The cbfllm Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cstdint>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cbfllm/analysis.h"
#include "cbfllm/errors.h"
#include "cbfllm/experiment.h"
#include "cbfllm/remote.h"
#include "verify.h"

namespace {

int RunCommand(const std::string& spec_path, const std::string& out_dir,
               std::size_t parallel, std::optional<std::uint64_t> seed) {
  cbfllm::ExperimentSpec spec;
  try {
    spec = cbfllm::LoadExperimentSpec(spec_path);
  } catch (const cbfllm::SpecError& e) {
    std::cerr << "invalid spec: " << e.what() << '\n';
    return 2;
  }

  cbfllm::ExperimentOptions options;
  if (!out_dir.empty()) options.output_dir = out_dir;
  options.parallelism = parallel;
  options.seed = seed;

  cbfllm::ExperimentResult result;
  try {
    result = cbfllm::RunExperiment(spec, options);
  } catch (const std::exception& e) {
    std::cerr << "experiment failed: " << e.what() << '\n';
    return 1;
  }

  const auto reports = result.reports();
  std::cout << cbfllm::FormatSummaryTable(reports);
  for (const auto& run : result.runs) {
    std::size_t unsafe_starts = 0;
    for (const auto& o : run.outcomes) {
      if (o.record && o.record->started_unsafe) ++unsafe_starts;
      if (!o.record) {
        std::cerr << run.filter.name << " sample seed=" << o.seed << " failed: " << o.error
                  << '\n';
      }
    }
    if (unsafe_starts > 0) {
      std::cerr << "warning: " << run.filter.name << ": " << unsafe_starts
                << " runs started with h(x0) < 0\n";
    }
  }
  std::cout << "wrote " << result.files.size() << " files to "
            << options.output_dir.value_or(spec.output_dir).string() << '\n';
  return result.failures == 0 ? 0 : 1;
}

int VerifyCommand(bool mutate_sign, std::size_t safety_runs) {
  cbfllm::verify::VerifyOptions options;
  options.mutate_sign = mutate_sign;
  options.safety_runs = safety_runs;
  bool all = true;
  for (const auto& check : cbfllm::verify::RunOracleSuite(options)) {
    std::printf("[%s] %s: %s\n", check.passed ? "PASS" : "FAIL", check.name.c_str(),
                check.detail.c_str());
    all = all && check.passed;
  }
  return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Control-barrier-function safety filter for token-level text generation"};
  app.require_subcommand(1);

  std::string spec_path;
  std::string out_dir;
  std::size_t parallel = 0;
  std::optional<std::uint64_t> seed;
  auto* run = app.add_subcommand("run", "Run every filter of an experiment spec");
  run->add_option("spec", spec_path, "Experiment spec (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Output directory (overrides the spec)");
  run->add_option("--parallel", parallel, "Worker threads (0 = all processors)");
  run->add_option("--seed", seed, "Base seed (overrides the spec)");
  run->footer(std::string("Environment: ") + cbfllm::kBridgeEndpointEnv +
              " overrides any bridge endpoint in the spec.");

  bool oracle = false;
  bool mutate_sign = false;
  std::size_t safety_runs = 200;
  auto* verify = app.add_subcommand("verify", "Run the oracle and invariant checks");
  verify->add_flag("--oracle", oracle, "Run the brute-force oracle suite")->required();
  verify->add_flag("--mutate-sign", mutate_sign,
                   "Reverse the barrier inequality in the runs under test (must fail)");
  verify->add_option("--runs", safety_runs, "Runs per alpha for the safety check");

  CLI11_PARSE(app, argc, argv);

  if (run->parsed()) return RunCommand(spec_path, out_dir, parallel, seed);
  return VerifyCommand(mutate_sign, safety_runs);
}
