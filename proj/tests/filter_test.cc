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

#include "cbfllm/filter.h"

#include <cmath>
#include <limits>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "cbfllm/errors.h"
#include "lcf_doubles.h"

namespace cbfllm {
namespace {

using testing::FunctionLcf;
using testing::StepLcf;

const Text kX{1};
const ProbabilityVector kP{0.5, 0.3, 0.2};
const StepLcf kH(kX, 0.5, {{1, 0.40}, {2, 0.30}, {3, 0.60}});

std::set<TokenId> Allowed(const FilterDecision& d) {
  std::set<TokenId> out;
  for (const auto& c : d.candidates) {
    if (c.allowed) out.insert(c.token);
  }
  return out;
}

TEST(CbfFilterTest, AlphaPointThree) {
  const FilterResult r = CbfFilter(kP, kX, kH, {.alpha = 0.3, .k_top = 3});
  EXPECT_EQ(r.filtered, ProbabilityVector({0.5, 0.0, 0.2}));
  EXPECT_EQ(Allowed(r.decision), (std::set<TokenId>{1, 3}));
  EXPECT_EQ(r.decision.h_current, 0.5);
  EXPECT_EQ(r.decision.scanned, 3u);
  EXPECT_EQ(r.decision.disallowed_count(), 1u);
}

TEST(CbfFilterTest, AlphaOneAllowsNonNegative) {
  const FilterResult r = CbfFilter(kP, kX, kH, {.alpha = 1.0, .k_top = 3});
  EXPECT_EQ(r.filtered, kP);
  EXPECT_EQ(r.decision.allowed_count(), 3u);
}

TEST(CbfFilterTest, AlphaZeroRequiresNonDecreasing) {
  const FilterResult r = CbfFilter(kP, kX, kH, {.alpha = 0.0, .k_top = 3});
  EXPECT_EQ(r.filtered, ProbabilityVector({0.0, 0.0, 0.2}));
}

TEST(CbfFilterTest, StallsWhenNothingPasses) {
  const StepLcf h(kX, 0.1, {{1, -1.0}, {2, -1.0}, {3, -1.0}});
  for (double alpha : {0.0, 0.3, 1.0}) {
    try {
      CbfFilter(kP, kX, h, {.alpha = alpha, .k_top = 2});
      FAIL() << "expected FilterStalled";
    } catch (const FilterStalled& e) {
      EXPECT_EQ(e.decision().scanned, 3u);
      EXPECT_EQ(e.decision().allowed_count(), 0u);
    }
  }
}

TEST(CbfFilterTest, ScanOrderAndEarlyStop) {
  // Ties broken by ascending id; stops once k_top tokens are allowed.
  const ProbabilityVector p{0.1, 0.3, 0.3, 0.3};
  const StepLcf h(kX, 0.5, {{1, 0.9}, {2, 0.9}, {3, -0.5}, {4, 0.9}});
  const FilterResult r = CbfFilter(p, kX, h, {.alpha = 0.5, .k_top = 2});
  ASSERT_EQ(r.decision.candidates.size(), 3u);
  EXPECT_EQ(r.decision.candidates[0].token, 2);
  EXPECT_EQ(r.decision.candidates[1].token, 3);
  EXPECT_EQ(r.decision.candidates[2].token, 4);
  EXPECT_EQ(r.filtered, ProbabilityVector({0.0, 0.3, 0.0, 0.3}));
}

TEST(CbfFilterTest, MaxScanBoundsTheScan) {
  const ProbabilityVector p{0.4, 0.3, 0.2, 0.1};
  const StepLcf h(kX, 0.5, {{1, -1.0}, {2, -1.0}, {3, 0.9}, {4, 0.9}});
  EXPECT_THROW(CbfFilter(p, kX, h, {.alpha = 0.5, .k_top = 1, .max_scan = 2}), FilterStalled);
  const FilterResult r = CbfFilter(p, kX, h, {.alpha = 0.5, .k_top = 1, .max_scan = 3});
  EXPECT_EQ(r.filtered, ProbabilityVector({0.0, 0.0, 0.2, 0.0}));
}

TEST(CbfFilterTest, ReturnsPartialSetWhenVocabularyRunsOut) {
  const StepLcf h(kX, 0.5, {{1, 0.9}, {2, -1.0}, {3, -1.0}});
  const FilterResult r = CbfFilter(kP, kX, h, {.alpha = 0.5, .k_top = 3});
  EXPECT_EQ(r.filtered, ProbabilityVector({0.5, 0.0, 0.0}));
  EXPECT_EQ(r.decision.scanned, 3u);
}

TEST(CbfFilterTest, NanIsAnError) {
  const StepLcf h(kX, 0.5, {{1, std::nan("")}});
  EXPECT_THROW(CbfFilter(kP, kX, h, {.alpha = 0.5, .k_top = 1}), ConstraintEvaluationError);
}

TEST(CbfFilterTest, ConfigValidation) {
  EXPECT_THROW(CbfFilter(kP, kX, kH, {.alpha = 1.5, .k_top = 1}), DomainError);
  EXPECT_THROW(CbfFilter(kP, kX, kH, {.alpha = -0.1, .k_top = 1}), DomainError);
  EXPECT_THROW(CbfFilter(kP, kX, kH, {.alpha = 0.5, .k_top = 0}), DomainError);
  EXPECT_THROW(CbfFilter(kP, kX, kH, {.alpha = 0.5, .k_top = 4}), DomainError);
  EXPECT_THROW(CbfFilter(kP, kX, kH, {.alpha = 0.5, .k_top = 2, .max_scan = 1}), DomainError);
  EXPECT_EQ((CbfConfig{.alpha = 0.5, .k_top = 2}).EffectiveMaxScan(3), 3u);
  EXPECT_EQ((CbfConfig{.alpha = 0.5, .k_top = 2}).EffectiveMaxScan(1000), 512u);
  EXPECT_EQ((CbfConfig{.alpha = 0.5, .k_top = 600}).EffectiveMaxScan(1000), 600u);
}

TEST(BlacklistFilterTest, Example) {
  const StepLcf h(kX, 0.3, {{1, -0.1}, {2, 0.2}});
  const FilterResult r = BlacklistFilter({0.6, 0.4}, kX, h, 2);
  EXPECT_EQ(r.filtered, ProbabilityVector({0.0, 0.4}));
}

TEST(BlacklistFilterTest, NonNegativeCandidatesGiveTopK) {
  const StepLcf h(kX, 0.3, {{1, 0.0}, {2, 0.2}, {3, 0.9}});
  EXPECT_EQ(BlacklistFilter(kP, kX, h, 2).filtered, ProbabilityVector({0.5, 0.3, 0.0}));
}

TEST(NoControlFilterTest, Examples) {
  EXPECT_EQ(NoControlFilter(kP, 2).filtered, ProbabilityVector({0.5, 0.3, 0.0}));
  EXPECT_EQ(NoControlFilter(kP, 3).filtered, kP);
  EXPECT_EQ(NoControlFilter({0.4, 0.4, 0.2}, 1).filtered, ProbabilityVector({0.4, 0.0, 0.0}));
}

TEST(NoControlFilterTest, DecisionHasNoDisallowed) {
  const FilterResult r = NoControlFilter(kP, 2);
  EXPECT_EQ(r.decision.disallowed_count(), 0u);
  ASSERT_EQ(r.decision.candidates.size(), 2u);
  EXPECT_TRUE(std::isnan(r.decision.candidates[0].h_next));
  EXPECT_THROW(NoControlFilter(kP, 0), DomainError);
  EXPECT_THROW(NoControlFilter(kP, 4), DomainError);
}

TEST(CountDisallowedTest, Examples) {
  EXPECT_EQ(CountDisallowed({}), 0u);
  FilterDecision d;
  d.candidates = {{1, 0.5, 0.1, true}, {2, 0.3, -0.1, false}, {3, 0.2, 0.2, true}};
  d.scanned = 3;
  const std::vector<FilterDecision> one{d};
  EXPECT_EQ(CountDisallowed(one), 1u);
  const std::vector<FilterDecision> two{d, d};
  EXPECT_EQ(CountDisallowed(two), 2u);
}

struct Instance {
  ProbabilityVector p;
  Text x;
  std::vector<double> h_next;
  double h_current;
};

Instance RandomInstance(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_real_distribution<double> hv(-1.0, 1.0);
  std::vector<double> p(n);
  for (double& v : p) v = rng() % 5 == 0 ? 0.0 : std::floor(u(rng) * 8) / 8;
  p[rng() % n] = 0.5;
  Instance in{ProbabilityVector(p), Text{1}, std::vector<double>(n), hv(rng)};
  for (double& v : in.h_next) v = std::round(hv(rng) * 20) / 20;
  return in;
}

LcfPtr InstanceLcf(const Instance& in) {
  return std::make_shared<FunctionLcf>([in](const Text& x) {
    return x == in.x ? in.h_current : in.h_next[IndexOf(x.back())];
  });
}

TEST(FilterPropertyTest, MaskingNeverRescales) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + rng() % 20;
    const Instance in = RandomInstance(rng, n);
    const auto h = InstanceLcf(in);
    const CbfConfig cfg{.alpha = (rng() % 11) / 10.0, .k_top = 1 + rng() % n};
    try {
      const FilterResult r = CbfFilter(in.p, in.x, *h, cfg);
      for (std::size_t i = 0; i < n; ++i) {
        ASSERT_TRUE(r.filtered[i] == 0.0 || r.filtered[i] == in.p[i]);
      }
      for (const auto& c : r.decision.candidates) {
        ASSERT_EQ(c.allowed, SatisfiesBarrier(c.h_next, in.h_current, cfg.alpha));
        ASSERT_EQ(c.prior, in.p[IndexOf(c.token)]);
      }
    } catch (const FilterStalled&) {
    }
  }
}

TEST(FilterPropertyTest, BlacklistEqualsCbfAlphaOne) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng() % 20;
    const Instance in = RandomInstance(rng, n);
    const auto h = InstanceLcf(in);
    const std::size_t k = 1 + rng() % n;
    std::optional<FilterResult> a, b;
    std::optional<FilterDecision> sa, sb;
    try {
      a = BlacklistFilter(in.p, in.x, *h, k);
    } catch (const FilterStalled& e) {
      sa = e.decision();
    }
    try {
      b = CbfFilter(in.p, in.x, *h, {.alpha = 1.0, .k_top = k});
    } catch (const FilterStalled& e) {
      sb = e.decision();
    }
    ASSERT_EQ(a.has_value(), b.has_value());
    if (a) {
      ASSERT_EQ(a->filtered, b->filtered);
      ASSERT_EQ(a->decision, b->decision);
    } else {
      ASSERT_EQ(*sa, *sb);
    }
  }
}

TEST(FilterPropertyTest, AllowedSetGrowsWithAlphaAtFullScan) {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng() % 12;
    Instance in = RandomInstance(rng, n);
    in.h_current = std::abs(in.h_current);
    const auto h = InstanceLcf(in);
    std::set<TokenId> prev;
    for (int a = 0; a <= 10; ++a) {
      std::set<TokenId> cur;
      try {
        cur = Allowed(CbfFilter(in.p, in.x, *h, {.alpha = a / 10.0, .k_top = n}).decision);
      } catch (const FilterStalled&) {
      }
      ASSERT_TRUE(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
      prev = std::move(cur);
    }
  }
}

TEST(RankByProbabilityTest, DescendingWithIdTieBreak) {
  const ProbabilityVector p{0.2, 0.5, 0.2, 0.1};
  EXPECT_EQ(RankByProbability(p, 4), (std::vector<std::size_t>{1, 0, 2, 3}));
  EXPECT_EQ(RankByProbability(p, 2), (std::vector<std::size_t>{1, 0}));
}

}  // namespace
}  // namespace cbfllm
