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
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cbfllm/constraint.h"
#include "cbfllm/core.h"
#include "cbfllm/filter.h"
#include "cbfllm/predictor.h"

namespace cbfllm {

enum class FilterKind { kNoControl, kBlacklist, kCbf };
enum class StallPolicy {
  // Keep the partial text generated before the stall.
  kEndSequence,
  // Discard the continuation: final_text reverts to the initial text. Steps
  // are still logged for diagnosis.
  kAbort,
};
enum class Termination { kMaxTokens, kEos, kStalled };

std::string ToString(FilterKind kind);
std::string ToString(StallPolicy policy);
std::string ToString(Termination termination);

struct GenerationConfig {
  Text initial_text;
  double temperature = 1.0;
  std::size_t k_top = 30;
  double alpha = 1.0;  // used only by FilterKind::kCbf
  FilterKind filter_kind = FilterKind::kCbf;
  std::size_t max_new_tokens = 30;
  std::uint64_t seed = 0;
  StallPolicy stall_policy = StallPolicy::kEndSequence;
  std::size_t max_scan = 0;  // 0: filter default

  // Throws DomainError on any out-of-range field.
  void Validate(const Vocabulary& vocab) const;
};

struct TrajectoryStep {
  std::size_t k = 0;
  TokenId token = 0;
  double h_value = 0.0;  // h(x(k+1))
  double delta_h = 0.0;  // h(x(k+1)) - h(x(k))
  FilterDecision decision;

  bool operator==(const TrajectoryStep&) const = default;
};

struct TrajectoryRecord {
  double h_initial = 0.0;
  std::vector<TrajectoryStep> steps;
  Text final_text;
  Termination termination = Termination::kMaxTokens;
  // Filter audit for the step that stalled, if any.
  std::optional<FilterDecision> stalled_decision;
  // A CBF/Blacklist run started from h(x0) < 0. The run proceeds; the
  // barrier condition then only bounds how fast h may keep falling.
  bool started_unsafe = false;

  std::vector<FilterDecision> decisions() const;
  std::size_t disallowed_count() const;

  bool operator==(const TrajectoryRecord&) const = default;
};

// Seeded inverse-CDF token sampler. Each draw consumes exactly one 64-bit
// output of mt19937_64, mapped to u in [0, 1) with 53-bit resolution; the
// selected token is the first (ascending id) whose cumulative mass exceeds u.
class TokenSelector {
 public:
  explicit TokenSelector(std::uint64_t seed);

  // q must be normalized. Never returns a token with zero mass.
  TokenId Select(const ProbabilityVector& q);
  // Advances the engine once and returns the draw in [0, 1).
  double NextUniform();

 private:
  std::mt19937_64 engine_;
};

// Inverse-CDF lookup for a given uniform draw u in [0, 1).
TokenId InverseCdf(const ProbabilityVector& q, double u);

// Runs one closed-loop generation: predict, filter, normalize, sample,
// concatenate. A stall ends the run with Termination::kStalled; other errors
// (constraint evaluation, remote transport) propagate.
TrajectoryRecord Generate(const LogitSource& predictor,
                          const LanguageConstraintFunction& lcf,
                          const GenerationConfig& cfg);

struct SampleOutcome {
  std::uint64_t seed = 0;
  std::optional<TrajectoryRecord> record;
  std::string error;  // non-empty iff record is empty

  bool ok() const { return record.has_value(); }
};

// Sample i runs with seed base_seed + i. Results come back ordered by i and do
// not depend on `parallelism` (0 = hardware concurrency).
std::vector<SampleOutcome> RunBatch(const LogitSource& predictor,
                                    const LanguageConstraintFunction& lcf,
                                    const GenerationConfig& cfg,
                                    std::size_t n_samples,
                                    std::uint64_t base_seed,
                                    std::size_t parallelism = 0);

}  // namespace cbfllm
