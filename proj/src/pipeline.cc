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

#include "cbfllm/pipeline.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

namespace cbfllm {

std::string ToString(FilterKind kind) {
  switch (kind) {
    case FilterKind::kNoControl: return "nocontrol";
    case FilterKind::kBlacklist: return "blacklist";
    case FilterKind::kCbf: return "cbf";
  }
  return "?";
}

std::string ToString(StallPolicy policy) {
  switch (policy) {
    case StallPolicy::kEndSequence: return "end_sequence";
    case StallPolicy::kAbort: return "abort";
  }
  return "?";
}

std::string ToString(Termination termination) {
  switch (termination) {
    case Termination::kMaxTokens: return "max_tokens";
    case Termination::kEos: return "eos";
    case Termination::kStalled: return "stalled";
  }
  return "?";
}

void GenerationConfig::Validate(const Vocabulary& vocab) const {
  if (max_new_tokens < 1) throw DomainError("max_new_tokens must be >= 1");
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    throw DomainError("temperature must be a finite value >= 0");
  }
  for (TokenId t : initial_text.tokens()) {
    if (!vocab.Contains(t)) {
      throw DomainError("initial text token " + std::to_string(t) +
                        " outside vocabulary");
    }
  }
  if (filter_kind == FilterKind::kNoControl) {
    if (k_top < 1 || k_top > vocab.size()) {
      throw DomainError("k_top must lie in [1, N]");
    }
  } else {
    CbfConfig{.alpha = filter_kind == FilterKind::kCbf ? alpha : 1.0,
              .k_top = k_top,
              .max_scan = max_scan}
        .Validate(vocab.size());
  }
}

std::vector<FilterDecision> TrajectoryRecord::decisions() const {
  std::vector<FilterDecision> out;
  out.reserve(steps.size() + 1);
  for (const auto& s : steps) out.push_back(s.decision);
  if (stalled_decision) out.push_back(*stalled_decision);
  return out;
}

std::size_t TrajectoryRecord::disallowed_count() const {
  const auto all = decisions();
  return CountDisallowed(all);
}

TokenSelector::TokenSelector(std::uint64_t seed) : engine_(seed) {}

double TokenSelector::NextUniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

TokenId TokenSelector::Select(const ProbabilityVector& q) {
  return InverseCdf(q, NextUniform());
}

TokenId InverseCdf(const ProbabilityVector& q, double u) {
  double cumulative = 0.0;
  std::size_t last_positive = q.size();
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (q[i] <= 0.0) continue;
    last_positive = i;
    cumulative += q[i];
    if (u < cumulative) return TokenAt(i);
  }
  if (last_positive == q.size()) {
    throw NormalizationError("cannot sample from a vector with no mass");
  }
  // Rounding left u just above the accumulated total.
  return TokenAt(last_positive);
}

namespace {

FilterResult ApplyFilter(const ProbabilityVector& p, const Text& x,
                         const LanguageConstraintFunction& h,
                         const GenerationConfig& cfg) {
  switch (cfg.filter_kind) {
    case FilterKind::kCbf:
      return CbfFilter(p, x, h,
                       CbfConfig{.alpha = cfg.alpha, .k_top = cfg.k_top,
                                 .max_scan = cfg.max_scan});
    case FilterKind::kBlacklist:
      return BlacklistFilter(p, x, h, cfg.k_top, cfg.max_scan);
    case FilterKind::kNoControl: {
      // The filter itself ignores h; h values are attached afterwards purely
      // for instrumentation (trajectory and histogram exports).
      FilterResult r = NoControlFilter(p, cfg.k_top);
      r.decision.h_current = h.Evaluate(x);
      std::vector<Text> successors;
      successors.reserve(r.decision.candidates.size());
      for (const auto& c : r.decision.candidates) {
        successors.push_back(Concat(x, c.token, p.size()));
      }
      const std::vector<double> values = h.EvaluateMany(successors);
      for (std::size_t i = 0; i < values.size(); ++i) {
        r.decision.candidates[i].h_next = values[i];
      }
      return r;
    }
  }
  throw DomainError("unknown filter kind");
}

}  // namespace

TrajectoryRecord Generate(const LogitSource& predictor,
                          const LanguageConstraintFunction& lcf,
                          const GenerationConfig& cfg) {
  const Vocabulary& vocab = predictor.vocabulary();
  cfg.Validate(vocab);

  // Non-owning handle; the cache lives only for this run.
  const CachingLcf h(LcfPtr(LcfPtr{}, &lcf));
  TokenSelector selector(cfg.seed);

  TrajectoryRecord record;
  Text x = cfg.initial_text;
  double h_prev = h.Evaluate(x);
  if (std::isnan(h_prev)) {
    throw ConstraintEvaluationError("L-CF returned NaN for the initial text");
  }
  record.h_initial = h_prev;
  record.started_unsafe = cfg.filter_kind != FilterKind::kNoControl && h_prev < 0.0;
  record.termination = Termination::kMaxTokens;

  for (std::size_t k = 0; k < cfg.max_new_tokens; ++k) {
    const ProbabilityVector p =
        Predict(predictor, x, TemperatureConfig{cfg.temperature});

    FilterResult filtered;
    try {
      filtered = ApplyFilter(p, x, h, cfg);
    } catch (const FilterStalled& stall) {
      FilterDecision d = stall.decision();
      d.step = k;
      record.stalled_decision = std::move(d);
      record.termination = Termination::kStalled;
      if (cfg.stall_policy == StallPolicy::kAbort) x = cfg.initial_text;
      break;
    }
    filtered.decision.step = k;

    const ProbabilityVector q = Normalize(filtered.filtered);
    const TokenId token = selector.Select(q);

    // The filter already evaluated h on every candidate; reuse that value.
    const auto& cands = filtered.decision.candidates;
    auto chosen = std::find_if(cands.begin(), cands.end(),
                               [token](const Candidate& c) { return c.token == token; });
    x = Concat(x, token, vocab);
    const double h_next = chosen != cands.end() && !std::isnan(chosen->h_next)
                              ? chosen->h_next
                              : h.Evaluate(x);

    record.steps.push_back(TrajectoryStep{.k = k,
                                          .token = token,
                                          .h_value = h_next,
                                          .delta_h = h_next - h_prev,
                                          .decision = std::move(filtered.decision)});
    h_prev = h_next;

    if (vocab.IsEos(token)) {
      record.termination = Termination::kEos;
      break;
    }
  }
  record.final_text = std::move(x);
  return record;
}

std::vector<SampleOutcome> RunBatch(const LogitSource& predictor,
                                    const LanguageConstraintFunction& lcf,
                                    const GenerationConfig& cfg,
                                    std::size_t n_samples,
                                    std::uint64_t base_seed,
                                    std::size_t parallelism) {
  if (n_samples < 1) throw DomainError("n_samples must be >= 1");
  cfg.Validate(predictor.vocabulary());

  std::vector<SampleOutcome> results(n_samples);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n_samples; i = next++) {
      GenerationConfig sample_cfg = cfg;
      sample_cfg.seed = base_seed + i;
      results[i].seed = sample_cfg.seed;
      try {
        results[i].record = Generate(predictor, lcf, sample_cfg);
      } catch (const std::exception& e) {
        results[i].error = e.what();
      }
    }
  };

  if (parallelism == 0) {
    parallelism = std::max(1u, std::thread::hardware_concurrency());
  }
  parallelism = std::min(parallelism, n_samples);
  if (parallelism == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(parallelism);
    for (std::size_t t = 0; t < parallelism; ++t) pool.emplace_back(worker);
  }
  return results;
}

}  // namespace cbfllm
