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

// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "cbfllm/analysis.h"
#include "cbfllm/experiment.h"
#include "verify.h"

namespace {

namespace fs = std::filesystem;
using cbfllm::verify::CheckResult;

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path SyntheticSpecPath() { return fs::path(CBFLLM_SOURCE_DIR) / "configs" / "synthetic.json"; }

CheckResult Safety() {
  const auto start = std::chrono::steady_clock::now();
  CheckResult r = cbfllm::verify::CheckSafetyRecurrence(1000, {0.3, 0.8});
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.passed = r.passed && secs < 30.0;
  r.detail += "; " + std::to_string(secs).substr(0, 5) + " s (limit 30 s)";
  return r;
}

CheckResult NoControlZero() {
  const auto f = cbfllm::verify::MakeSyntheticFixture();
  bool ok = true;
  std::ostringstream ss;
  for (std::uint64_t base : {0u, 1000u, 77777u}) {
    const auto batch = cbfllm::RunBatch(*f.predictor, *f.lcf,
                                        f.Config(cbfllm::FilterKind::kNoControl, 1.0), 100, base);
    const auto report = cbfllm::Summarize("NoControl", batch);
    ok = ok && report.runs == 100 && report.mean_disallowed == 0.0;
    ss << "base_seed " << base << ": mean " << cbfllm::FormatDouble(report.mean_disallowed)
       << "; ";
  }
  return {"nocontrol_zero_disallowed", ok, ss.str()};
}

CheckResult AlphaOrdering() {
  CheckResult r = cbfllm::verify::CheckAlphaMonotonicity(100);
  r.name = "alpha_ordering";
  return r;
}

// Runs the shipped example spec twice and compares every artifact byte for byte.
// Also checks histogram mass against scanned candidates for every batch.
struct ShippedSpecRuns {
  CheckResult determinism{"determinism", false, ""};
  CheckResult conservation{"histogram_conservation", false, ""};
};

ShippedSpecRuns RunShippedSpec() {
  ShippedSpecRuns out;
  const cbfllm::ExperimentSpec spec = cbfllm::LoadExperimentSpec(SyntheticSpecPath());
  const fs::path root = fs::temp_directory_path() / "cbfllm_acceptance";
  fs::remove_all(root);
  const auto a = cbfllm::RunExperiment(spec, {.output_dir = root / "a", .parallelism = 1});
  const auto b = cbfllm::RunExperiment(spec, {.output_dir = root / "b", .parallelism = 0});

  std::size_t compared = 0;
  std::size_t differing = 0;
  for (const auto& entry : fs::directory_iterator(root / "a")) {
    const fs::path other = root / "b" / entry.path().filename();
    ++compared;
    if (!fs::exists(other) || Slurp(entry.path()) != Slurp(other)) ++differing;
  }
  out.determinism.passed = compared == a.files.size() && compared == b.files.size() &&
                           differing == 0 && a.failures == 0;
  out.determinism.detail = std::to_string(compared) + " files compared, " +
                           std::to_string(differing) + " differ";

  bool ok = true;
  std::ostringstream ss;
  for (const auto& run : a.runs) {
    std::vector<cbfllm::TrajectoryRecord> records;
    for (const auto& o : run.outcomes) {
      if (o.record) records.push_back(*o.record);
    }
    const auto scanned = cbfllm::TotalScannedCandidates(records);
    const auto mass = run.report.histogram.Total();
    ok = ok && mass == scanned;
    ss << run.filter.name << ": " << mass << "/" << scanned << "; ";
  }
  const CheckResult fixture = cbfllm::verify::CheckHistogramConservation(100);
  out.conservation.passed = ok && fixture.passed;
  out.conservation.detail = "shipped spec " + ss.str() + "fixture " + fixture.detail;
  fs::remove_all(root);
  return out;
}

}  // namespace

int main() {
  std::vector<std::function<CheckResult()>> checks;
  checks.push_back(Safety);
  checks.push_back([] { return cbfllm::verify::CheckOracleEquivalence(8, 3); });
  checks.push_back([] { return cbfllm::verify::CheckBlacklistEquivalence(10000); });
  checks.push_back(NoControlZero);
  checks.push_back(AlphaOrdering);

  bool all = true;
  const auto print = [&](const CheckResult& r) {
    std::printf("%s %s: %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    std::fflush(stdout);
    all = all && r.passed;
  };
  for (const auto& check : checks) {
    try {
      print(check());
    } catch (const std::exception& e) {
      print({"<check>", false, std::string("exception: ") + e.what()});
    }
  }
  try {
    const ShippedSpecRuns shipped = RunShippedSpec();
    print(shipped.determinism);
    print(shipped.conservation);
  } catch (const std::exception& e) {
    print({"determinism", false, std::string("exception: ") + e.what()});
    print({"histogram_conservation", false, "not run"});
  }
  return all ? 0 : 1;
}
