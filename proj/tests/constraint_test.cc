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

#include <atomic>
#include <stdexcept>
#include <thread>
#include <vector>

#include <gtest/gtest.h>

#include "cbfllm/errors.h"

namespace cbfllm {
namespace {

TEST(ClassScoresTest, Validation) {
  EXPECT_NO_THROW(ClassScores(0.2, 0.3, 0.5));
  EXPECT_THROW(ClassScores(0.5, 0.5, 0.5), DomainError);
  EXPECT_THROW(ClassScores(-0.1, 0.6, 0.5), DomainError);
  EXPECT_THROW(ClassScores(1.1, 0.0, -0.1), DomainError);
}

TEST(SentimentLcfTest, Examples) {
  EXPECT_NEAR(SentimentLcf({0.1, 0.2, 0.7}), 0.5, 1e-15);
  EXPECT_EQ(SentimentLcf({1.0 / 3, 1.0 / 3, 1.0 / 3}), 0.0);
  EXPECT_NEAR(SentimentLcf({0.6, 0.1, 0.3}), -0.3, 1e-15);
  EXPECT_DOUBLE_EQ(SentimentLcf({1.0, 0.0, 0.0}), -1.0);
  EXPECT_DOUBLE_EQ(SentimentLcf({0.0, 0.0, 1.0}), 1.0);
}

TEST(SentimentLcfTest, RangeAndSign) {
  for (int a = 0; a <= 20; ++a) {
    for (int b = 0; a + b <= 20; ++b) {
      const double neg = a / 20.0;
      const double neu = b / 20.0;
      const double pos = 1.0 - neg - neu;
      const double h = SentimentLcf({neg, neu, std::max(0.0, pos)});
      ASSERT_GE(h, -1.0);
      ASSERT_LE(h, 1.0);
      if (pos > std::max(neg, neu) + 1e-12) ASSERT_GT(h, 0.0);
    }
  }
}

TEST(ClassifierLcfTest, WrapsScorerFailures) {
  auto ok = MakeClassifierLcf([](const Text&) { return ClassScores(0.1, 0.2, 0.7); });
  EXPECT_NEAR(ok->Evaluate(Text{1}), 0.5, 1e-15);
  auto bad = MakeClassifierLcf([](const Text&) -> ClassScores {
    throw std::runtime_error("backend down");
  });
  EXPECT_THROW(bad->Evaluate(Text{1}), ConstraintEvaluationError);
}

TEST(ClassifierLcfTest, BatchScorerIsUsedForEvaluateMany) {
  std::atomic<int> single{0};
  std::atomic<int> batch{0};
  auto lcf = MakeClassifierLcf(
      [&](const Text&) {
        ++single;
        return ClassScores(0.0, 0.0, 1.0);
      },
      [&](std::span<const Text> xs) {
        ++batch;
        return std::vector<ClassScores>(xs.size(), ClassScores(1.0, 0.0, 0.0));
      });
  const std::vector<Text> xs{Text{1}, Text{2}, Text{3}};
  EXPECT_EQ(lcf->EvaluateMany(xs), (std::vector<double>{-1.0, -1.0, -1.0}));
  EXPECT_EQ(batch.load(), 1);
  EXPECT_EQ(single.load(), 0);
}

TEST(ClassifierLcfTest, BatchSizeMismatchIsAnError) {
  auto lcf = MakeClassifierLcf([](const Text&) { return ClassScores(0, 0, 1); },
                               [](std::span<const Text>) {
                                 return std::vector<ClassScores>{ClassScores(0, 0, 1)};
                               });
  const std::vector<Text> xs{Text{1}, Text{2}};
  EXPECT_THROW(lcf->EvaluateMany(xs), ConstraintEvaluationError);
}

TEST(NumericLcfTest, Examples) {
  auto h = MakeNumericLcf({{1, 0.1}, {2, -0.3}}, 0.2);
  EXPECT_NEAR(h->Evaluate(Text{1, 1}), 0.4, 1e-15);
  EXPECT_DOUBLE_EQ(h->Evaluate(Text{2, 2, 2, 2, 2}), -1.0);
  EXPECT_DOUBLE_EQ(h->Evaluate(Text{}), 0.2);
}

TEST(NumericLcfTest, SumsWeightsAndClamps) {
  auto h = MakeNumericLcf({{1, 0.25}, {2, -0.5}}, 0.1);
  EXPECT_DOUBLE_EQ(h->Evaluate(Text{}), 0.1);
  EXPECT_DOUBLE_EQ(h->Evaluate(Text{1, 3}), 0.35);
  EXPECT_DOUBLE_EQ(h->Evaluate(Text{2, 2, 2}), -1.0);
  EXPECT_DOUBLE_EQ(h->Evaluate(Text{1, 1, 1, 1, 1}), 1.0);
}

TEST(NumericLcfTest, EvaluateManyMatchesEvaluate) {
  auto h = MakeNumericLcf({{1, 0.3}, {2, -0.2}}, 0.0);
  const std::vector<Text> xs{Text{1}, Text{2, 2}, Text{}};
  const auto many = h->EvaluateMany(xs);
  ASSERT_EQ(many.size(), 3u);
  for (std::size_t i = 0; i < xs.size(); ++i) EXPECT_EQ(many[i], h->Evaluate(xs[i]));
}

class CountingLcf final : public LanguageConstraintFunction {
 public:
  double Evaluate(const Text& x) const override {
    ++calls;
    return static_cast<double>(x.size());
  }
  mutable std::atomic<int> calls{0};
};

TEST(CachingLcfTest, MemoizesByText) {
  auto inner = std::make_shared<CountingLcf>();
  CachingLcf cache(inner);
  EXPECT_EQ(cache.Evaluate(Text{1, 2}), 2.0);
  EXPECT_EQ(cache.Evaluate(Text{1, 2}), 2.0);
  EXPECT_EQ(cache.Evaluate(Text{2}), 1.0);
  EXPECT_EQ(inner->calls.load(), 2);
  EXPECT_EQ(cache.hits(), 1u);
  EXPECT_EQ(cache.misses(), 2u);

  const std::vector<Text> xs{Text{1, 2}, Text{3, 3, 3}};
  EXPECT_EQ(cache.EvaluateMany(xs), (std::vector<double>{2.0, 3.0}));
  EXPECT_EQ(inner->calls.load(), 3);
}

TEST(CachingLcfTest, ConcurrentUse) {
  auto inner = std::make_shared<CountingLcf>();
  CachingLcf cache(inner);
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&] {
      for (int i = 0; i < 200; ++i) {
        const Text x(std::vector<TokenId>(1 + i % 10, 1));
        ASSERT_EQ(cache.Evaluate(x), static_cast<double>(x.size()));
      }
    });
  }
  for (auto& th : threads) th.join();
  EXPECT_EQ(cache.hits() + cache.misses(), 800u);
}

}  // namespace
}  // namespace cbfllm
