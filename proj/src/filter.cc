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

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace cbfllm {

void CbfConfig::Validate(std::size_t vocab_size) const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw DomainError("alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
  if (k_top < 1) throw DomainError("k_top must be >= 1");
  const std::size_t scan = EffectiveMaxScan(vocab_size);
  if (k_top > scan) {
    throw DomainError("k_top (" + std::to_string(k_top) +
                      ") exceeds max_scan (" + std::to_string(scan) + ")");
  }
  if (scan > vocab_size) {
    throw DomainError("max_scan (" + std::to_string(scan) +
                      ") exceeds vocabulary size " + std::to_string(vocab_size));
  }
}

std::size_t CbfConfig::EffectiveMaxScan(std::size_t vocab_size) const {
  if (max_scan != 0) return max_scan;
  return std::max(k_top, std::min(vocab_size, kDefaultMaxScanCap));
}

std::size_t FilterDecision::allowed_count() const {
  return static_cast<std::size_t>(
      std::count_if(candidates.begin(), candidates.end(),
                    [](const Candidate& c) { return c.allowed; }));
}

std::size_t FilterDecision::disallowed_count() const {
  return candidates.size() - allowed_count();
}

bool FilterDecision::operator==(const FilterDecision& o) const {
  if (step != o.step || scanned != o.scanned ||
      candidates.size() != o.candidates.size()) {
    return false;
  }
  // NaN-aware: unevaluated h values compare equal to each other.
  auto same = [](double a, double b) {
    return a == b || (std::isnan(a) && std::isnan(b));
  };
  if (!same(h_current, o.h_current)) return false;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Candidate& a = candidates[i];
    const Candidate& b = o.candidates[i];
    if (a.token != b.token || a.prior != b.prior || a.allowed != b.allowed ||
        !same(a.h_next, b.h_next)) {
      return false;
    }
  }
  return true;
}

FilterStalled::FilterStalled(FilterDecision decision)
    : Error("filter stalled: no candidate satisfied the barrier condition after "
            "scanning " +
            std::to_string(decision.scanned) + " tokens"),
      decision_(std::move(decision)) {}

std::vector<std::size_t> RankByProbability(const ProbabilityVector& p,
                                           std::size_t count) {
  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  count = std::min(count, order.size());
  auto before = [&p](std::size_t a, std::size_t b) {
    return p[a] > p[b] || (p[a] == p[b] && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count),
                    order.end(), before);
  order.resize(count);
  return order;
}

FilterResult CbfFilter(const ProbabilityVector& p, const Text& x,
                       const LanguageConstraintFunction& h,
                       const CbfConfig& cfg) {
  const std::size_t n = p.size();
  cfg.Validate(n);
  const std::size_t max_scan = cfg.EffectiveMaxScan(n);

  FilterDecision decision;
  decision.h_current = h.Evaluate(x);
  if (std::isnan(decision.h_current)) {
    throw ConstraintEvaluationError("L-CF returned NaN for the current text");
  }

  const std::vector<std::size_t> order = RankByProbability(p, max_scan);
  ProbabilityVectorBuilder out(n);
  std::size_t allowed = 0;
  std::size_t next = 0;

  // Evaluate in batches no larger than the number of tokens still needed, so
  // the k_top-th allowed token can only be the last of a batch and nothing
  // past the stopping point is ever evaluated.
  while (allowed < cfg.k_top && next < order.size()) {
    const std::size_t batch = std::min(cfg.k_top - allowed, order.size() - next);
    std::vector<Text> successors;
    successors.reserve(batch);
    for (std::size_t j = next; j < next + batch; ++j) {
      successors.push_back(Concat(x, TokenAt(order[j]), n));
    }
    const std::vector<double> h_next = h.EvaluateMany(successors);
    if (h_next.size() != batch) {
      throw ConstraintEvaluationError("EvaluateMany returned wrong length");
    }
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t index = order[next + b];
      if (std::isnan(h_next[b])) {
        throw ConstraintEvaluationError("L-CF returned NaN for candidate token " +
                                        std::to_string(TokenAt(index)));
      }
      const bool ok = SatisfiesBarrier(h_next[b], decision.h_current, cfg.alpha);
      decision.candidates.push_back({TokenAt(index), p[index], h_next[b], ok});
      if (ok) {
        out.Set(index, p[index]);
        ++allowed;
      }
    }
    next += batch;
  }
  decision.scanned = decision.candidates.size();

  if (allowed == 0) throw FilterStalled(std::move(decision));
  return {std::move(out).Build(), std::move(decision)};
}

FilterResult BlacklistFilter(const ProbabilityVector& p, const Text& x,
                             const LanguageConstraintFunction& h,
                             std::size_t k_top, std::size_t max_scan) {
  return CbfFilter(p, x, h, CbfConfig{.alpha = 1.0, .k_top = k_top, .max_scan = max_scan});
}

FilterResult NoControlFilter(const ProbabilityVector& p, std::size_t k_top) {
  if (k_top < 1 || k_top > p.size()) {
    throw DomainError("k_top must lie in [1, N]");
  }
  FilterDecision decision;
  decision.h_current = std::numeric_limits<double>::quiet_NaN();
  ProbabilityVectorBuilder out(p.size());
  for (std::size_t index : RankByProbability(p, k_top)) {
    out.Set(index, p[index]);
    decision.candidates.push_back({TokenAt(index), p[index],
                                   std::numeric_limits<double>::quiet_NaN(), true});
  }
  decision.scanned = decision.candidates.size();
  return {std::move(out).Build(), std::move(decision)};
}

std::size_t CountDisallowed(std::span<const FilterDecision> decisions) {
  std::size_t total = 0;
  for (const auto& d : decisions) total += d.disallowed_count();
  return total;
}

}  // namespace cbfllm
