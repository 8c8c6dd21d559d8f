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
#include <cstdint>
#include <initializer_list>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cbfllm {

// Token ids are 1-based: a vocabulary of size N holds tokens {1, ..., N}.
// Dense vectors over the vocabulary (logits, probabilities) store token t at
// index t - 1.
using TokenId = std::int32_t;

inline constexpr std::size_t IndexOf(TokenId t) {
  return static_cast<std::size_t>(t - 1);
}
inline constexpr TokenId TokenAt(std::size_t index) {
  return static_cast<TokenId>(index + 1);
}

class Vocabulary {
 public:
  explicit Vocabulary(std::size_t size, std::set<TokenId> eos_tokens = {},
                      std::map<TokenId, std::string> token_display = {});

  std::size_t size() const { return size_; }
  const std::set<TokenId>& eos_tokens() const { return eos_tokens_; }
  const std::map<TokenId, std::string>& token_display() const {
    return token_display_;
  }

  bool Contains(TokenId t) const {
    return t >= 1 && static_cast<std::size_t>(t) <= size_;
  }
  bool IsEos(TokenId t) const { return eos_tokens_.contains(t); }
  // Display string for `t`, or "<t>" when no display entry exists.
  std::string Display(TokenId t) const;

 private:
  std::size_t size_;
  std::set<TokenId> eos_tokens_;
  std::map<TokenId, std::string> token_display_;
};

// An immutable token sequence. Every generation step produces a new Text.
class Text {
 public:
  Text() = default;
  explicit Text(std::vector<TokenId> tokens) : tokens_(std::move(tokens)) {}
  Text(std::initializer_list<TokenId> tokens) : tokens_(tokens) {}

  std::span<const TokenId> tokens() const { return tokens_; }
  std::size_t size() const { return tokens_.size(); }
  bool empty() const { return tokens_.empty(); }
  TokenId back() const { return tokens_.back(); }
  TokenId operator[](std::size_t i) const { return tokens_[i]; }

  bool operator==(const Text&) const = default;
  auto operator<=>(const Text&) const = default;

 private:
  std::vector<TokenId> tokens_;
};

struct TextHash {
  std::size_t operator()(const Text& x) const noexcept;
};

// Returns x extended by t. Throws DomainError unless 1 <= t <= vocab_size.
Text Concat(const Text& x, TokenId t, std::size_t vocab_size);
inline Text Concat(const Text& x, TokenId t, const Vocabulary& vocab) {
  return Concat(x, t, vocab.size());
}

// Non-negative weights over the vocabulary; index i holds token i + 1.
class ProbabilityVector {
 public:
  ProbabilityVector() = default;
  // Throws DomainError on a negative or non-finite entry.
  explicit ProbabilityVector(std::vector<double> values);
  ProbabilityVector(std::initializer_list<double> values)
      : ProbabilityVector(std::vector<double>(values)) {}

  // Zero vector of length n.
  static ProbabilityVector Zeros(std::size_t n);

  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  double operator[](std::size_t index) const { return values_[index]; }
  double at(TokenId t) const { return values_.at(IndexOf(t)); }
  double Sum() const;

  bool operator==(const ProbabilityVector&) const = default;

 private:
  friend class ProbabilityVectorBuilder;
  std::vector<double> values_;
};

// Mutable staging area used by filters to assemble an output vector one
// entry at a time without re-validating.
class ProbabilityVectorBuilder {
 public:
  explicit ProbabilityVectorBuilder(std::size_t n) : values_(n, 0.0) {}
  void Set(std::size_t index, double value) { values_[index] = value; }
  ProbabilityVector Build() &&;

 private:
  std::vector<double> values_;
};

inline constexpr double kNormalizationTolerance = 1e-9;

// Q[i] = p[i] / sum(p). Throws NormalizationError when p has no positive
// entry.
ProbabilityVector Normalize(const ProbabilityVector& p);

bool IsNormalized(const ProbabilityVector& p,
                  double tolerance = kNormalizationTolerance);

}  // namespace cbfllm
