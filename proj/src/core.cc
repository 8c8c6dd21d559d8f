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

#include "cbfllm/core.h"

#include <cmath>
#include <numeric>

#include "cbfllm/errors.h"

namespace cbfllm {

Vocabulary::Vocabulary(std::size_t size, std::set<TokenId> eos_tokens,
                       std::map<TokenId, std::string> token_display)
    : size_(size),
      eos_tokens_(std::move(eos_tokens)),
      token_display_(std::move(token_display)) {
  if (size_ == 0) throw DomainError("vocabulary size must be >= 1");
  for (TokenId t : eos_tokens_) {
    if (!Contains(t)) {
      throw DomainError("eos token " + std::to_string(t) +
                        " outside vocabulary 1.." + std::to_string(size_));
    }
  }
  for (const auto& [t, _] : token_display_) {
    if (!Contains(t)) {
      throw DomainError("display entry for token " + std::to_string(t) +
                        " outside vocabulary");
    }
  }
}

std::string Vocabulary::Display(TokenId t) const {
  if (auto it = token_display_.find(t); it != token_display_.end()) {
    return it->second;
  }
  return "<" + std::to_string(t) + ">";
}

std::size_t TextHash::operator()(const Text& x) const noexcept {
  // FNV-1a over the raw token ids.
  std::uint64_t h = 14695981039346656037ULL;
  for (TokenId t : x.tokens()) {
    auto v = static_cast<std::uint32_t>(t);
    for (int b = 0; b < 4; ++b) {
      h ^= (v >> (8 * b)) & 0xffU;
      h *= 1099511628211ULL;
    }
  }
  return static_cast<std::size_t>(h);
}

Text Concat(const Text& x, TokenId t, std::size_t vocab_size) {
  if (t < 1 || static_cast<std::size_t>(t) > vocab_size) {
    throw DomainError("token id " + std::to_string(t) +
                      " outside vocabulary 1.." + std::to_string(vocab_size));
  }
  std::vector<TokenId> tokens(x.tokens().begin(), x.tokens().end());
  tokens.push_back(t);
  return Text(std::move(tokens));
}

ProbabilityVector::ProbabilityVector(std::vector<double> values)
    : values_(std::move(values)) {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i]) || values_[i] < 0.0) {
      throw DomainError("probability entry " + std::to_string(i) +
                        " is negative or not finite");
    }
  }
}

ProbabilityVector ProbabilityVector::Zeros(std::size_t n) {
  return ProbabilityVectorBuilder(n).Build();
}

double ProbabilityVector::Sum() const {
  return std::accumulate(values_.begin(), values_.end(), 0.0);
}

ProbabilityVector ProbabilityVectorBuilder::Build() && {
  ProbabilityVector p;
  p.values_ = std::move(values_);
  return p;
}

ProbabilityVector Normalize(const ProbabilityVector& p) {
  const double total = p.Sum();
  if (!(total > 0.0)) {
    throw NormalizationError(
        "cannot normalize a probability vector with no positive entry");
  }
  ProbabilityVectorBuilder out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out.Set(i, p[i] / total);
  return std::move(out).Build();
}

bool IsNormalized(const ProbabilityVector& p, double tolerance) {
  return std::abs(p.Sum() - 1.0) <= tolerance;
}

}  // namespace cbfllm
