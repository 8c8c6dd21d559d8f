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

#include "verify.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "brute_force.h"
#include "cbfllm/analysis.h"
#include "cbfllm/experiment.h"
#include "cbfllm/filter.h"

namespace cbfllm::verify {

namespace {

constexpr double kSafetyTolerance = 1e-9;

double Uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::size_t UniformCount(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

oracle::Tokens TokensOf(const Text& x) {
  return oracle::Tokens(x.tokens().begin(), x.tokens().end());
}

std::set<TokenId> AllowedSet(const FilterDecision& d) {
  std::set<TokenId> out;
  for (const auto& c : d.candidates) {
    if (c.allowed) out.insert(c.token);
  }
  return out;
}

// Allowed set of the CBF filter, empty on a stall.
std::set<TokenId> FilterAllowed(const ProbabilityVector& p, const Text& x,
                                const LanguageConstraintFunction& h,
                                const CbfConfig& cfg,
                                FilterDecision* decision_out = nullptr) {
  try {
    FilterResult r = CbfFilter(p, x, h, cfg);
    if (decision_out) *decision_out = r.decision;
    return AllowedSet(r.decision);
  } catch (const FilterStalled& s) {
    if (decision_out) *decision_out = s.decision();
    return {};
  }
}

// h(x) = h0 on the base text, values[t] on base + [t].
class TableLcf final : public LanguageConstraintFunction {
 public:
  TableLcf(std::size_t base_len, double h0, std::vector<double> values)
      : base_len_(base_len), h0_(h0), values_(std::move(values)) {}

  double Evaluate(const Text& x) const override {
    if (x.size() == base_len_) return h0_;
    return values_.at(IndexOf(x.back()));
  }

 private:
  std::size_t base_len_;
  double h0_;
  std::vector<double> values_;
};

class NegatedLcf final : public LanguageConstraintFunction {
 public:
  explicit NegatedLcf(LcfPtr inner) : inner_(std::move(inner)) {}
  double Evaluate(const Text& x) const override { return -inner_->Evaluate(x); }

 private:
  LcfPtr inner_;
};

LogitSourcePtr RandomTablePredictor(std::size_t n, std::mt19937_64& rng) {
  auto random_logits = [&] {
    std::vector<double> v(n);
    for (double& x : v) x = Uniform(rng, -3.0, 3.0);
    return v;
  };
  std::vector<SuffixEntry> table;
  for (std::size_t t = 1; t <= n; ++t) {
    table.push_back({{static_cast<TokenId>(t)}, random_logits()});
  }
  return MakeTablePredictor(Vocabulary(n), std::move(table), random_logits());
}

std::vector<TrajectoryRecord> Successful(const std::vector<SampleOutcome>& batch) {
  std::vector<TrajectoryRecord> out;
  for (const auto& s : batch) {
    if (s.record) out.push_back(*s.record);
  }
  return out;
}

}  // namespace

GenerationConfig SyntheticFixture::Config(FilterKind kind, double alpha) const {
  GenerationConfig cfg;
  cfg.initial_text = initial_text;
  cfg.temperature = 1.0;
  cfg.k_top = 30;
  cfg.max_new_tokens = 30;
  cfg.filter_kind = kind;
  cfg.alpha = kind == FilterKind::kCbf ? alpha : 1.0;
  cfg.stall_policy = StallPolicy::kEndSequence;
  return cfg;
}

SyntheticFixture MakeSyntheticFixture() {
  SyntheticFixture f;
  const std::vector<Text> corpus =
      SyntheticCorpus(kFixtureVocabSize, SyntheticCorpusSpec{.texts = 200,
                                                             .length = 20,
                                                             .branching = 3,
                                                             .stickiness = 0.85,
                                                             .seed = 7});
  f.predictor = MakeNgramPredictor(Vocabulary(kFixtureVocabSize), corpus, 2, 0.05);
  f.weights = RandomWeights(kFixtureVocabSize, -0.12, 0.08, 11);
  f.bias = 0.3;
  f.lcf = MakeNumericLcf(f.weights, f.bias);
  f.initial_text = Text{1, 2, 3};
  return f;
}

CheckResult CheckSafetyRecurrence(std::size_t runs_per_alpha,
                                  const std::vector<double>& alphas,
                                  bool mutate_sign) {
  CheckResult result{"safety_recurrence", true, ""};
  const SyntheticFixture f = MakeSyntheticFixture();
  const LcfPtr filter_lcf =
      mutate_sign ? LcfPtr(std::make_shared<NegatedLcf>(f.lcf)) : f.lcf;
  const oracle::Tokens x0 = TokensOf(f.initial_text);
  const double h0 = oracle::NumericH(f.weights, f.bias, x0);

  std::size_t violations = 0;
  std::size_t steps_checked = 0;
  std::size_t runs = 0;
  std::string first;
  if (h0 < 0.0) {
    return {"safety_recurrence", false, "fixture starts with h(x0) < 0"};
  }
  for (double alpha : alphas) {
    GenerationConfig cfg = f.Config(FilterKind::kCbf, alpha);
    const auto batch = RunBatch(*f.predictor, *filter_lcf, cfg, runs_per_alpha, 0);
    for (const auto& s : batch) {
      if (!s.record) {
        ++violations;
        if (first.empty()) first = "run failed: " + s.error;
        continue;
      }
      ++runs;
      oracle::Tokens x = x0;
      for (std::size_t k = 0; k < s.record->steps.size(); ++k) {
        x.push_back(s.record->steps[k].token);
        const double h = oracle::NumericH(f.weights, f.bias, x);
        const double logged = s.record->steps[k].h_value;
        const double bound = std::pow(1.0 - alpha, static_cast<double>(k + 1)) * h0;
        ++steps_checked;
        const bool ok = std::abs(logged - h) <= 1e-12 && h >= bound - kSafetyTolerance &&
                        h >= -kSafetyTolerance && logged >= bound - kSafetyTolerance;
        if (!ok) {
          ++violations;
          if (first.empty()) {
            std::ostringstream ss;
            ss << "alpha=" << alpha << " seed=" << s.seed << " k=" << k + 1
               << " h=" << h << " logged=" << logged << " bound=" << bound;
            first = ss.str();
          }
        }
      }
    }
  }
  std::ostringstream ss;
  ss << runs << " runs, " << steps_checked << " steps, " << violations << " violations";
  if (!first.empty()) ss << " (first: " << first << ")";
  result.passed = violations == 0;
  result.detail = ss.str();
  return result;
}

CheckResult CheckOracleEquivalence(std::size_t max_n, std::size_t depth,
                                   std::size_t instances_per_n) {
  const double grid[] = {-0.5, -0.25, 0.0, 0.25, 0.5};
  const double alpha_cycle[] = {0.0, 0.3, 0.8, 1.0};
  std::size_t texts = 0;
  std::size_t mismatches = 0;
  std::string first;

  for (std::size_t n = 1; n <= max_n; ++n) {
    for (std::size_t inst = 0; inst < instances_per_n; ++inst) {
      std::mt19937_64 rng(1000 * n + inst);
      std::unordered_map<TokenId, double> weights;
      for (std::size_t t = 1; t <= n; ++t) {
        weights[static_cast<TokenId>(t)] =
            inst % 2 == 0 ? grid[UniformCount(rng, 0, 4)] : Uniform(rng, -0.6, 0.4);
      }
      const double bias = inst % 2 == 0 ? 0.25 * static_cast<double>(UniformCount(rng, 0, 4))
                                        : Uniform(rng, 0.0, 1.0);
      const double alpha = inst < 4 ? alpha_cycle[inst] : Uniform(rng, 0.0, 1.0);
      const LogitSourcePtr predictor = RandomTablePredictor(n, rng);
      const LcfPtr lcf = MakeNumericLcf(weights, bias);
      const oracle::HFunction h = [&](const oracle::Tokens& x) {
        return oracle::NumericH(weights, bias, x);
      };
      const CbfConfig cfg{.alpha = alpha, .k_top = n, .max_scan = n};

      std::vector<Text> frontier{Text{}};
      for (std::size_t d = 0; d <= depth; ++d) {
        std::vector<Text> next;
        for (const Text& x : frontier) {
          ++texts;
          const ProbabilityVector p = Predict(*predictor, x, {1.0});
          FilterDecision decision;
          const std::set<TokenId> got = FilterAllowed(p, x, *lcf, cfg, &decision);
          const auto expected_vec = oracle::AllowedTokens(h, TokensOf(x), n, alpha);
          const std::set<TokenId> expected(expected_vec.begin(), expected_vec.end());
          const bool scanned_all = decision.scanned == n;
          if (got != expected || !scanned_all) {
            ++mismatches;
            if (first.empty()) {
              first = "N=" + std::to_string(n) + " instance=" + std::to_string(inst) +
                      " depth=" + std::to_string(d);
            }
          }
          if (d < depth) {
            for (TokenId t : expected) next.push_back(Concat(x, t, n));
          }
        }
        frontier = std::move(next);
      }
    }
  }
  std::ostringstream ss;
  ss << texts << " reachable texts checked, " << mismatches << " mismatches";
  if (!first.empty()) ss << " (first: " << first << ")";
  return {"oracle_equivalence", mismatches == 0, ss.str()};
}

CheckResult CheckBlacklistEquivalence(std::size_t instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::size_t mismatches = 0;
  std::size_t stalls = 0;
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t n = UniformCount(rng, 1, 16);
    std::vector<double> p(n);
    const bool coarse = i % 3 == 0;  // coarse values force probability ties
    for (double& v : p) {
      v = coarse ? 0.1 * static_cast<double>(UniformCount(rng, 0, 3)) : Uniform(rng, 0.0, 1.0);
    }
    std::vector<double> values(n);
    for (double& v : values) {
      v = coarse ? 0.5 * (static_cast<double>(UniformCount(rng, 0, 4)) - 2.0)
                 : Uniform(rng, -1.0, 1.0);
    }
    const std::size_t base_len = UniformCount(rng, 0, 3);
    std::vector<TokenId> base_tokens(base_len);
    for (auto& t : base_tokens) t = static_cast<TokenId>(UniformCount(rng, 1, n));
    const Text x(base_tokens);
    const double h0 = Uniform(rng, -0.5, 1.0);
    const TableLcf lcf(base_len, h0, values);
    const std::size_t k_top = UniformCount(rng, 1, n);
    const std::size_t max_scan = UniformCount(rng, k_top, n);
    const ProbabilityVector prob(p);

    std::optional<FilterResult> a, b;
    std::optional<FilterDecision> stall_a, stall_b;
    try {
      a = BlacklistFilter(prob, x, lcf, k_top, max_scan);
    } catch (const FilterStalled& s) {
      stall_a = s.decision();
    }
    try {
      b = CbfFilter(prob, x, lcf, CbfConfig{.alpha = 1.0, .k_top = k_top, .max_scan = max_scan});
    } catch (const FilterStalled& s) {
      stall_b = s.decision();
    }
    bool same = false;
    if (a && b) {
      same = a->filtered == b->filtered && a->decision == b->decision;
    } else if (stall_a && stall_b) {
      same = *stall_a == *stall_b;
      ++stalls;
    }
    if (!same) ++mismatches;
  }
  std::ostringstream ss;
  ss << instances << " instances (" << stalls << " stalls on both sides), " << mismatches
     << " mismatches";
  return {"blacklist_equals_cbf_alpha_1", mismatches == 0, ss.str()};
}

CheckResult CheckAlphaMonotonicity(std::size_t runs) {
  const SyntheticFixture f = MakeSyntheticFixture();
  const std::size_t n = kFixtureVocabSize;
  const double alphas[] = {0.3, 0.8, 1.0};

  // Texts visited by runs of every filter, restricted to h(x) >= 0.
  std::set<Text> texts;
  const std::pair<FilterKind, double> kinds[] = {{FilterKind::kNoControl, 1.0},
                                                 {FilterKind::kBlacklist, 1.0},
                                                 {FilterKind::kCbf, 0.8},
                                                 {FilterKind::kCbf, 0.3}};
  for (auto [kind, alpha] : kinds) {
    for (const auto& r : Successful(RunBatch(*f.predictor, *f.lcf, f.Config(kind, alpha), runs, 0))) {
      Text x = f.initial_text;
      texts.insert(x);
      for (const auto& s : r.steps) {
        x = Concat(x, s.token, n);
        texts.insert(x);
      }
    }
  }

  std::size_t checked = 0;
  std::size_t failures = 0;
  for (const Text& x : texts) {
    if (f.lcf->Evaluate(x) < 0.0) continue;
    ++checked;
    const ProbabilityVector p = Predict(*f.predictor, x, {1.0});
    std::set<TokenId> full[3];
    std::set<TokenId> topk[3];
    std::set<TokenId> scanned[3];
    for (int i = 0; i < 3; ++i) {
      full[i] = FilterAllowed(p, x, *f.lcf, CbfConfig{.alpha = alphas[i], .k_top = n, .max_scan = n});
      FilterDecision d;
      topk[i] = FilterAllowed(p, x, *f.lcf, CbfConfig{.alpha = alphas[i], .k_top = 30}, &d);
      for (const auto& c : d.candidates) scanned[i].insert(c.token);
    }
    bool ok = std::includes(full[1].begin(), full[1].end(), full[0].begin(), full[0].end()) &&
              std::includes(full[2].begin(), full[2].end(), full[1].begin(), full[1].end());
    for (int lo = 0; lo < 3 && ok; ++lo) {
      for (int hi = lo + 1; hi < 3; ++hi) {
        for (TokenId t : topk[lo]) {
          if (scanned[hi].contains(t) && !topk[hi].contains(t)) ok = false;
        }
      }
    }
    if (!ok) ++failures;
  }
  std::ostringstream ss;
  ss << checked << " steps with h >= 0 checked, " << failures << " violations";
  return {"alpha_monotonicity", failures == 0 && checked > 0, ss.str()};
}

CheckResult CheckHistogramConservation(std::size_t runs) {
  const SyntheticFixture f = MakeSyntheticFixture();
  const std::pair<FilterKind, double> kinds[] = {{FilterKind::kNoControl, 1.0},
                                                 {FilterKind::kBlacklist, 1.0},
                                                 {FilterKind::kCbf, 0.8},
                                                 {FilterKind::kCbf, 0.3}};
  std::ostringstream ss;
  bool ok = true;
  for (auto [kind, alpha] : kinds) {
    const auto records =
        Successful(RunBatch(*f.predictor, *f.lcf, f.Config(kind, alpha), runs, 0));
    std::uint64_t scanned = 0;
    for (const auto& r : records) {
      for (const auto& d : r.decisions()) scanned += d.scanned;
    }
    const std::uint64_t mass = AttractorHistogram(records, HistogramSpec{}).Total();
    ok = ok && mass == scanned && records.size() == runs;
    ss << ToString(kind) << (kind == FilterKind::kCbf ? "(" + FormatDouble(alpha) + ")" : "")
       << ": " << mass << "/" << scanned << "; ";
  }
  return {"histogram_conservation", ok, ss.str()};
}

CheckResult CheckReplayEquivalence(std::size_t seeds) {
  constexpr std::size_t kN = 5;
  constexpr std::size_t kDepth = 3;
  std::mt19937_64 rng(77);
  const LogitSourcePtr predictor = RandomTablePredictor(kN, rng);
  std::unordered_map<TokenId, double> weights;
  for (std::size_t t = 1; t <= kN; ++t) weights[static_cast<TokenId>(t)] = Uniform(rng, -0.3, 0.2);
  const double bias = 0.4;
  const LcfPtr lcf = MakeNumericLcf(weights, bias);
  const oracle::HFunction h = [&](const oracle::Tokens& x) {
    return oracle::NumericH(weights, bias, x);
  };
  const oracle::LogitFunction logits = [&](const oracle::Tokens& x) {
    return predictor->Evaluate(Text(x));
  };

  std::size_t mismatches = 0;
  std::size_t nodes = 0;
  for (std::size_t seed = 0; seed < seeds; ++seed) {
    GenerationConfig cfg;
    cfg.filter_kind = FilterKind::kCbf;
    cfg.alpha = 0.3;
    cfg.k_top = 3;
    cfg.max_new_tokens = kDepth;
    cfg.temperature = 1.0;
    cfg.seed = seed;
    const TrajectoryRecord got = Generate(*predictor, *lcf, cfg);
    const oracle::ReplayResult want = oracle::ReplayGeneration(
        logits, h, {}, oracle::StepParams{.temperature = 1.0, .k_top = 3, .alpha = 0.3},
        kDepth, seed);
    nodes += want.tree_nodes;
    bool same = got.steps.size() == want.tokens.size() &&
                (got.termination == Termination::kStalled) == want.stalled;
    for (std::size_t k = 0; same && k < got.steps.size(); ++k) {
      same = got.steps[k].token == want.tokens[k] &&
             std::abs(got.steps[k].h_value - want.h_values[k]) <= 1e-12;
    }
    if (!same) ++mismatches;
  }
  std::ostringstream ss;
  ss << seeds << " seeds replayed over " << nodes << " tree nodes, " << mismatches
     << " mismatches";
  return {"replay_equivalence", mismatches == 0, ss.str()};
}

std::vector<CheckResult> RunOracleSuite(const VerifyOptions& options) {
  std::vector<CheckResult> results;
  results.push_back(CheckOracleEquivalence());
  results.push_back(CheckReplayEquivalence(200));
  results.push_back(
      CheckSafetyRecurrence(options.safety_runs, {0.3, 0.8}, options.mutate_sign));
  results.push_back(CheckBlacklistEquivalence(options.blacklist_instances));
  results.push_back(CheckAlphaMonotonicity(50));
  results.push_back(CheckHistogramConservation(50));
  return results;
}

}  // namespace cbfllm::verify
