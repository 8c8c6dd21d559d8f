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

#include <algorithm>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "cbfllm/errors.h"

namespace cbfllm {
namespace {

TEST(ConcatTest, AppendsToken) {
  EXPECT_EQ(Concat(Text{5, 9}, 2, 10), (Text{5, 9, 2}));
  EXPECT_EQ(Concat(Text{}, 7, 10), (Text{7}));
}

TEST(ConcatTest, HaveANiceDay) {
  const Vocabulary vocab(4, {}, {{1, "Have"}, {2, " a"}, {3, " nice"}, {4, " day"}});
  const Text have_a_nice{1, 2, 3};
  const Text out = Concat(have_a_nice, 4, vocab);
  std::string rendered;
  for (TokenId t : out.tokens()) rendered += vocab.Display(t);
  EXPECT_EQ(rendered, "Have a nice day");
  EXPECT_EQ(have_a_nice.size(), 3u);
}

TEST(ConcatTest, RejectsOutOfRangeToken) {
  EXPECT_THROW(Concat(Text{1}, 0, 5), DomainError);
  EXPECT_THROW(Concat(Text{1}, 6, 5), DomainError);
  EXPECT_THROW(Concat(Text{1}, -3, 5), DomainError);
}

TEST(ConcatTest, LengthAndPrefixProperty) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng() % 40;
    std::vector<TokenId> tokens(rng() % 25);
    for (auto& t : tokens) t = static_cast<TokenId>(1 + rng() % n);
    const Text x(tokens);
    const auto t = static_cast<TokenId>(1 + rng() % n);
    const Text y = Concat(x, t, n);
    ASSERT_EQ(y.size(), x.size() + 1);
    ASSERT_TRUE(std::equal(x.tokens().begin(), x.tokens().end(), y.tokens().begin()));
    ASSERT_EQ(y.back(), t);
    ASSERT_EQ(x, Text(tokens));
  }
}

TEST(VocabularyTest, Invariants) {
  EXPECT_THROW(Vocabulary(0), DomainError);
  EXPECT_THROW(Vocabulary(3, {4}), DomainError);
  EXPECT_THROW(Vocabulary(3, {0}), DomainError);
  const Vocabulary v(3, {3});
  EXPECT_TRUE(v.IsEos(3));
  EXPECT_FALSE(v.IsEos(2));
  EXPECT_EQ(v.Display(2), "<2>");
}

TEST(ProbabilityVectorTest, RejectsNegativeAndNonFinite) {
  EXPECT_THROW(ProbabilityVector({0.5, -0.1}), DomainError);
  EXPECT_THROW(ProbabilityVector({0.5, std::nan("")}), DomainError);
}

TEST(NormalizeTest, Examples) {
  const ProbabilityVector q = Normalize({0.2, 0.2, 0.0});
  EXPECT_DOUBLE_EQ(q[0], 0.5);
  EXPECT_DOUBLE_EQ(q[1], 0.5);
  EXPECT_EQ(q[2], 0.0);
  EXPECT_EQ(Normalize({1.0, 0.0}), ProbabilityVector({1.0, 0.0}));
  EXPECT_THROW(Normalize({0.0, 0.0}), NormalizationError);
}

TEST(NormalizeTest, IdempotentAndRankPreserving) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> v(1 + rng() % 64);
    for (double& x : v) x = rng() % 4 == 0 ? 0.0 : u(rng);
    v[rng() % v.size()] = 0.5;
    const ProbabilityVector p(v);
    const ProbabilityVector q = Normalize(p);
    const ProbabilityVector qq = Normalize(q);
    ASSERT_TRUE(IsNormalized(q));
    for (std::size_t i = 0; i < v.size(); ++i) {
      ASSERT_NEAR(q[i], qq[i], 1e-12);
      ASSERT_EQ(v[i] == 0.0, q[i] == 0.0);
      for (std::size_t j = 0; j < v.size(); ++j) {
        if (v[i] < v[j]) ASSERT_LE(q[i], q[j]);
      }
    }
    const auto argmax = [](std::span<const double> s) {
      return std::max_element(s.begin(), s.end()) - s.begin();
    };
    ASSERT_EQ(argmax(p.values()), argmax(q.values()));
  }
}

TEST(TextHashTest, EqualTextsHashEqual) {
  EXPECT_EQ(TextHash{}(Text{1, 2, 3}), TextHash{}(Text{1, 2, 3}));
  EXPECT_NE(TextHash{}(Text{1, 2, 3}), TextHash{}(Text{3, 2, 1}));
}

}  // namespace
}  // namespace cbfllm
