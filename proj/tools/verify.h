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

#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cbfllm/constraint.h"
#include "cbfllm/pipeline.h"
#include "cbfllm/predictor.h"

namespace cbfllm::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Desk-scale experiment fixture: 50-token vocabulary, bigram model over a
// synthetic Markov corpus, numeric L-CF with mostly small negative drift.
struct SyntheticFixture {
  LogitSourcePtr predictor;
  std::unordered_map<TokenId, double> weights;
  double bias = 0.0;
  LcfPtr lcf;
  Text initial_text;

  GenerationConfig Config(FilterKind kind, double alpha) const;
};

inline constexpr std::size_t kFixtureVocabSize = 50;
SyntheticFixture MakeSyntheticFixture();

// Checks h(x(k)) >= (1 - alpha)^k h(x0) - 1e-9 and h(x(k)) >= -1e-9 at every
// prefix of every run, recomputing h from the generated tokens. With
// `mutate_sign` the runs are generated with the barrier inequality reversed
// (the filter sees -h), which must make this check fail.
CheckResult CheckSafetyRecurrence(std::size_t runs_per_alpha,
                                  const std::vector<double>& alphas,
                                  bool mutate_sign = false);

// Exhaustive: N = 1..max_n, every text reachable within `depth` steps,
// k_top = max_scan = N; the filter's allowed set must equal the brute-force
// set exactly, and a stall must coincide with an empty brute-force set.
CheckResult CheckOracleEquivalence(std::size_t max_n = 8, std::size_t depth = 3,
                                   std::size_t instances_per_n = 6);

// Random (P, h-values) instances: BlacklistFilter and CbfFilter(alpha = 1)
// must return identical vectors and decisions (or both stall identically).
CheckResult CheckBlacklistEquivalence(std::size_t instances, std::uint64_t seed = 2024);

// At every text visited by fixture runs, allowed(0.3) within allowed(0.8)
// within allowed(1.0) with k_top = N. Also checks, for the fixture's own
// k_top, that every token allowed at the smaller alpha and scanned at the
// larger one is allowed there too.
CheckResult CheckAlphaMonotonicity(std::size_t runs);

// Histogram mass equals the number of scanned candidates for every filter.
CheckResult CheckHistogramConservation(std::size_t runs);

// Full-tree replay of a seeded run matches Generate token for token.
CheckResult CheckReplayEquivalence(std::size_t seeds);

struct VerifyOptions {
  bool mutate_sign = false;
  std::size_t safety_runs = 200;
  std::size_t blacklist_instances = 2000;
};

std::vector<CheckResult> RunOracleSuite(const VerifyOptions& options);

}  // namespace cbfllm::verify
