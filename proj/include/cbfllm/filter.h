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

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cbfllm/constraint.h"
#include "cbfllm/core.h"
#include "cbfllm/errors.h"

namespace cbfllm {

// Class-K function used in the barrier condition. Only the linear form
// alpha * h ships; the enum keeps room in the config schema.
enum class ClassKFunction { kLinear };

inline constexpr std::size_t kDefaultMaxScanCap = 512;

struct CbfConfig {
  double alpha = 0.5;
  std::size_t k_top = 1;
  // 0 means "use the default": max(k_top, min(N, 512)).
  std::size_t max_scan = 0;
  ClassKFunction class_k = ClassKFunction::kLinear;

  // Throws DomainError unless 0 <= alpha <= 1 and 1 <= k_top <= max_scan <= N
  // (after resolving the default max_scan).
  void Validate(std::size_t vocab_size) const;
  std::size_t EffectiveMaxScan(std::size_t vocab_size) const;
};

struct Candidate {
  TokenId token = 0;
  double prior = 0.0;
  // h(Concat(x, token)); NaN when the filter never evaluated it.
  double h_next = 0.0;
  bool allowed = false;

  bool operator==(const Candidate&) const = default;
};

// Audit record of one filter invocation. Candidates appear in scan order:
// descending prior, ties by ascending token id.
struct FilterDecision {
  std::size_t step = 0;
  std::vector<Candidate> candidates;
  double h_current = 0.0;
  std::size_t scanned = 0;

  std::size_t allowed_count() const;
  std::size_t disallowed_count() const;

  bool operator==(const FilterDecision&) const;
};

struct FilterResult {
  ProbabilityVector filtered;
  FilterDecision decision;
};

// No candidate passed the barrier condition within the scan budget.
class FilterStalled : public Error {
 public:
  explicit FilterStalled(FilterDecision decision);
  const FilterDecision& decision() const { return decision_; }

 private:
  FilterDecision decision_;
};

// The discrete-time barrier condition h_next - h_current >= -alpha h_current.
//
// Note the direction: ">=" as in the discrete CBF constraint and the top-k
// algorithm. Some renderings of the filter write "<=", which would
// admit exactly the tokens that push h toward the unsafe set.
inline bool SatisfiesBarrier(double h_next, double h_current, double alpha) {
  return h_next - h_current >= -alpha * h_current;
}

// Token indices (0-based) of the `count` largest entries of p in descending
// order, ties broken by ascending index.
std::vector<std::size_t> RankByProbability(const ProbabilityVector& p,
                                           std::size_t count);

// CBF filter with top-k sampling. Scans candidates in descending-probability
// order and keeps P[t] for each token whose successor text satisfies the
// barrier condition; everything else is zeroed. Stops after k_top allowed
// tokens, after max_scan examined tokens, or when the vocabulary runs out.
//
// Throws FilterStalled when nothing was allowed, ConstraintEvaluationError
// when h returns NaN.
FilterResult CbfFilter(const ProbabilityVector& p, const Text& x,
                       const LanguageConstraintFunction& h,
                       const CbfConfig& cfg);

// CBF filter with alpha = 1: disallows t exactly when h(Concat(x, t)) < 0.
FilterResult BlacklistFilter(const ProbabilityVector& p, const Text& x,
                             const LanguageConstraintFunction& h,
                             std::size_t k_top, std::size_t max_scan = 0);

// Plain top-k: keeps the k_top largest entries. Candidates carry NaN h_next
// and are all marked allowed.
FilterResult NoControlFilter(const ProbabilityVector& p, std::size_t k_top);

// Total disallowed candidates over all decisions of one run.
std::size_t CountDisallowed(std::span<const FilterDecision> decisions);

}  // namespace cbfllm
