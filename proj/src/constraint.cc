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

#include "cbfllm/constraint.h"

#include <algorithm>
#include <cmath>

#include "cbfllm/errors.h"

namespace cbfllm {

std::vector<double> LanguageConstraintFunction::EvaluateMany(
    std::span<const Text> xs) const {
  std::vector<double> out;
  out.reserve(xs.size());
  for (const Text& x : xs) out.push_back(Evaluate(x));
  return out;
}

ClassScores::ClassScores(double negative, double neutral, double positive)
    : s_{negative, neutral, positive} {
  for (double v : s_) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw DomainError("class score outside [0, 1]");
    }
  }
  if (std::abs(s_[0] + s_[1] + s_[2] - 1.0) > 1e-6) {
    throw DomainError("class scores must sum to 1");
  }
}

double SentimentLcf(const ClassScores& s) {
  return s.positive() - std::max(s.negative(), s.neutral());
}

namespace {

class ClassifierLcf final : public LanguageConstraintFunction {
 public:
  ClassifierLcf(Scorer scorer, BatchScorer batch)
      : scorer_(std::move(scorer)), batch_(std::move(batch)) {}

  double Evaluate(const Text& x) const override {
    try {
      return SentimentLcf(scorer_(x));
    } catch (const ConstraintEvaluationError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConstraintEvaluationError(std::string("scorer failed: ") + e.what());
    }
  }

  std::vector<double> EvaluateMany(std::span<const Text> xs) const override {
    if (!batch_) return LanguageConstraintFunction::EvaluateMany(xs);
    std::vector<ClassScores> scores;
    try {
      scores = batch_(xs);
    } catch (const ConstraintEvaluationError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConstraintEvaluationError(std::string("batch scorer failed: ") +
                                      e.what());
    }
    if (scores.size() != xs.size()) {
      throw ConstraintEvaluationError("batch scorer returned " +
                                      std::to_string(scores.size()) +
                                      " results for " +
                                      std::to_string(xs.size()) + " texts");
    }
    std::vector<double> out;
    out.reserve(scores.size());
    for (const auto& s : scores) out.push_back(SentimentLcf(s));
    return out;
  }

 private:
  Scorer scorer_;
  BatchScorer batch_;
};

class NumericLcf final : public LanguageConstraintFunction {
 public:
  NumericLcf(std::unordered_map<TokenId, double> weights, double bias)
      : weights_(std::move(weights)), bias_(bias) {}

  double Evaluate(const Text& x) const override {
    double v = bias_;
    for (TokenId t : x.tokens()) {
      if (auto it = weights_.find(t); it != weights_.end()) v += it->second;
    }
    return std::clamp(v, -1.0, 1.0);
  }

 private:
  std::unordered_map<TokenId, double> weights_;
  double bias_;
};

}  // namespace

LcfPtr MakeClassifierLcf(Scorer scorer) {
  return std::make_shared<ClassifierLcf>(std::move(scorer), BatchScorer{});
}

LcfPtr MakeClassifierLcf(Scorer scorer, BatchScorer batch_scorer) {
  return std::make_shared<ClassifierLcf>(std::move(scorer),
                                         std::move(batch_scorer));
}

LcfPtr MakeNumericLcf(std::unordered_map<TokenId, double> weights, double bias) {
  return std::make_shared<NumericLcf>(std::move(weights), bias);
}

double CachingLcf::Evaluate(const Text& x) const {
  {
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(x); it != cache_.end()) {
      ++hits_;
      return it->second;
    }
  }
  // Evaluate outside the lock; a racing duplicate computes the same value.
  const double v = inner_->Evaluate(x);
  std::lock_guard lock(mu_);
  ++misses_;
  cache_.emplace(x, v);
  return v;
}

std::vector<double> CachingLcf::EvaluateMany(std::span<const Text> xs) const {
  std::vector<double> out(xs.size());
  std::vector<std::size_t> missing;
  {
    std::lock_guard lock(mu_);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (auto it = cache_.find(xs[i]); it != cache_.end()) {
        out[i] = it->second;
        ++hits_;
      } else {
        missing.push_back(i);
      }
    }
  }
  if (missing.empty()) return out;

  std::vector<Text> todo;
  todo.reserve(missing.size());
  for (std::size_t i : missing) todo.push_back(xs[i]);
  std::vector<double> fresh = inner_->EvaluateMany(todo);
  if (fresh.size() != todo.size()) {
    throw ConstraintEvaluationError("EvaluateMany returned wrong length");
  }
  std::lock_guard lock(mu_);
  for (std::size_t j = 0; j < missing.size(); ++j) {
    out[missing[j]] = fresh[j];
    cache_.emplace(todo[j], fresh[j]);
    ++misses_;
  }
  return out;
}

std::size_t CachingLcf::hits() const {
  std::lock_guard lock(mu_);
  return hits_;
}

std::size_t CachingLcf::misses() const {
  std::lock_guard lock(mu_);
  return misses_;
}

}  // namespace cbfllm
