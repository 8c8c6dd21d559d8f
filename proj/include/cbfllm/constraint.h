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

#include <array>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <unordered_map>
#include <vector>

#include "cbfllm/core.h"

namespace cbfllm {

// Language-constraint function h. h(x) >= 0 marks x as desirable, h(x) < 0 as
// undesirable. Implementations must be deterministic and safe for concurrent
// const use.
class LanguageConstraintFunction {
 public:
  virtual ~LanguageConstraintFunction() = default;

  virtual double Evaluate(const Text& x) const = 0;

  // Same values as calling Evaluate on each text in order. Remote scorers
  // override this to batch round-trips.
  virtual std::vector<double> EvaluateMany(std::span<const Text> xs) const;
};

using LcfPtr = std::shared_ptr<const LanguageConstraintFunction>;

// Softmax output of a 3-way sentiment classifier: (negative, neutral,
// positive). Construction validates entries in [0,1] summing to 1 +/- 1e-6.
class ClassScores {
 public:
  ClassScores(double negative, double neutral, double positive);

  double negative() const { return s_[0]; }
  double neutral() const { return s_[1]; }
  double positive() const { return s_[2]; }
  const std::array<double, 3>& values() const { return s_; }

 private:
  std::array<double, 3> s_;
};

// positive - max(negative, neutral); lies in [-1, 1].
double SentimentLcf(const ClassScores& s);

using Scorer = std::function<ClassScores(const Text&)>;
using BatchScorer =
    std::function<std::vector<ClassScores>(std::span<const Text>)>;

// h(x) = SentimentLcf(scorer(x)). Any exception escaping the scorer is
// rethrown as ConstraintEvaluationError.
LcfPtr MakeClassifierLcf(Scorer scorer);
// As above, with EvaluateMany routed through a single batch call.
LcfPtr MakeClassifierLcf(Scorer scorer, BatchScorer batch_scorer);

// h(x) = clamp(bias + sum_{t in x} weights[t], -1, 1). Tokens missing from
// `weights` contribute 0.
LcfPtr MakeNumericLcf(std::unordered_map<TokenId, double> weights, double bias);

// Memoizes another L-CF by token sequence. Thread-safe. A fresh cache is
// created for each generation run so entries never outlive one trajectory.
class CachingLcf final : public LanguageConstraintFunction {
 public:
  explicit CachingLcf(LcfPtr inner) : inner_(std::move(inner)) {}

  double Evaluate(const Text& x) const override;
  std::vector<double> EvaluateMany(std::span<const Text> xs) const override;

  std::size_t hits() const;
  std::size_t misses() const;

 private:
  LcfPtr inner_;
  mutable std::mutex mu_;
  mutable std::unordered_map<Text, double, TextHash> cache_;
  mutable std::size_t hits_ = 0;
  mutable std::size_t misses_ = 0;
};

}  // namespace cbfllm
