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

#include "brute_force.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace cbfllm::oracle {

double NumericH(const std::unordered_map<TokenId, double>& weights, double bias,
                const Tokens& x) {
  double v = bias;
  for (TokenId t : x) {
    auto it = weights.find(t);
    if (it != weights.end()) v += it->second;
  }
  return std::min(1.0, std::max(-1.0, v));
}

std::vector<TokenId> AllowedTokens(const HFunction& h, const Tokens& x,
                                   std::size_t n, double alpha) {
  const double hx = h(x);
  std::vector<TokenId> allowed;
  for (std::size_t i = 1; i <= n; ++i) {
    Tokens next = x;
    next.push_back(static_cast<TokenId>(i));
    if (h(next) - hx >= -alpha * hx) allowed.push_back(static_cast<TokenId>(i));
  }
  return allowed;
}

std::vector<double> ReferenceSoftmax(const std::vector<double>& logits,
                                     double temperature) {
  std::vector<double> p(logits.size(), 0.0);
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  if (temperature == 0.0) {
    p[best] = 1.0;
    return p;
  }
  std::vector<long double> e(logits.size());
  long double total = 0.0L;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    e[i] = std::exp((static_cast<long double>(logits[i]) - logits[best]) /
                    static_cast<long double>(temperature));
    total += e[i];
  }
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = static_cast<double>(e[i] / total);
  }
  return p;
}

std::optional<std::vector<double>> ReferenceStep(const LogitFunction& logits,
                                                 const HFunction& h,
                                                 const Tokens& x,
                                                 const StepParams& params) {
  const std::vector<double> p = ReferenceSoftmax(logits(x), params.temperature);
  const std::size_t n = p.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&p](std::size_t a, std::size_t b) { return p[a] > p[b]; });

  std::vector<double> kept(n, 0.0);
  std::size_t allowed = 0;
  const std::size_t scan_limit = params.max_scan == 0 ? n : std::min(n, params.max_scan);
  const double hx = params.alpha ? h(x) : 0.0;
  for (std::size_t j = 0; j < scan_limit && allowed < params.k_top; ++j) {
    const std::size_t i = order[j];
    bool ok = true;
    if (params.alpha) {
      Tokens next = x;
      next.push_back(static_cast<TokenId>(i + 1));
      ok = h(next) - hx >= -*params.alpha * hx;
    }
    if (ok) {
      kept[i] = p[i];
      ++allowed;
    }
  }
  if (allowed == 0) return std::nullopt;
  const double total = std::accumulate(kept.begin(), kept.end(), 0.0);
  for (double& v : kept) v /= total;
  return kept;
}

ReplayResult ReplayGeneration(const LogitFunction& logits, const HFunction& h,
                              const Tokens& x0, const StepParams& params,
                              std::size_t depth, std::uint64_t seed,
                              const std::vector<TokenId>& eos) {
  // Full tree: distribution at every reachable text, keyed by the text.
  std::map<Tokens, std::optional<std::vector<double>>> tree;
  std::vector<Tokens> frontier{x0};
  for (std::size_t d = 0; d <= depth && !frontier.empty(); ++d) {
    std::vector<Tokens> next_frontier;
    for (const Tokens& x : frontier) {
      auto q = ReferenceStep(logits, h, x, params);
      if (d < depth && q) {
        for (std::size_t i = 0; i < q->size(); ++i) {
          if ((*q)[i] <= 0.0) continue;
          const auto t = static_cast<TokenId>(i + 1);
          if (std::find(eos.begin(), eos.end(), t) != eos.end()) continue;
          Tokens child = x;
          child.push_back(t);
          next_frontier.push_back(std::move(child));
        }
      }
      tree.emplace(x, std::move(q));
    }
    frontier = std::move(next_frontier);
  }

  ReplayResult result;
  result.tree_nodes = tree.size();
  std::mt19937_64 engine(seed);
  Tokens x = x0;
  for (std::size_t k = 0; k < depth; ++k) {
    const auto& q = tree.at(x);
    if (!q) {
      result.stalled = true;
      break;
    }
    const double u = static_cast<double>(engine() >> 11) * 0x1.0p-53;
    double cumulative = 0.0;
    std::size_t pick = q->size();
    for (std::size_t i = 0; i < q->size(); ++i) {
      if ((*q)[i] <= 0.0) continue;
      pick = i;
      cumulative += (*q)[i];
      if (u < cumulative) break;
    }
    const auto t = static_cast<TokenId>(pick + 1);
    x.push_back(t);
    result.tokens.push_back(t);
    result.h_values.push_back(h(x));
    if (std::find(eos.begin(), eos.end(), t) != eos.end()) break;
  }
  return result;
}

}  // namespace cbfllm::oracle
