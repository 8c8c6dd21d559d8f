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

// Reference implementations used only by tests, the acceptance suite and
// `cbfllm verify`. Nothing here calls into the filter or pipeline code; the
// only shared pieces are the data types.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <unordered_map>
#include <vector>

#include "cbfllm/core.h"

namespace cbfllm::oracle {

using Tokens = std::vector<TokenId>;
using HFunction = std::function<double(const Tokens&)>;
using LogitFunction = std::function<std::vector<double>(const Tokens&)>;

// clamp(bias + sum of weights, -1, 1), summed left to right.
double NumericH(const std::unordered_map<TokenId, double>& weights, double bias,
                const Tokens& x);

// Tokens t in 1..n whose successor satisfies h(x+t) - h(x) >= -alpha h(x),
// checked one by one over the whole vocabulary.
std::vector<TokenId> AllowedTokens(const HFunction& h, const Tokens& x,
                                   std::size_t n, double alpha);

// Softmax in long double precision; T == 0 is one-hot on the first maximum.
std::vector<double> ReferenceSoftmax(const std::vector<double>& logits,
                                     double temperature);

struct StepParams {
  double temperature = 1.0;
  std::size_t k_top = 1;
  std::size_t max_scan = 0;  // 0: whole vocabulary
  // nullopt: no control (plain top-k).
  std::optional<double> alpha;
};

// Filtered and normalized next-token distribution at x, or nullopt when no
// token is allowed. Candidates are ordered with a full stable sort and
// scanned linearly.
std::optional<std::vector<double>> ReferenceStep(const LogitFunction& logits,
                                                 const HFunction& h,
                                                 const Tokens& x,
                                                 const StepParams& params);

struct ReplayResult {
  Tokens tokens;               // generated continuation
  std::vector<double> h_values;  // h after each generated token
  bool stalled = false;
  std::size_t tree_nodes = 0;  // texts visited while enumerating the tree
};

// Enumerates every text reachable within `depth` steps from x0, computes the
// reference distribution at each, then walks the tree with the draws
// u_k = (mt19937_64(seed)() >> 11) * 2^-53 using inverse-CDF selection in
// ascending token order. Stops early on an eos token.
ReplayResult ReplayGeneration(const LogitFunction& logits, const HFunction& h,
                              const Tokens& x0, const StepParams& params,
                              std::size_t depth, std::uint64_t seed,
                              const std::vector<TokenId>& eos = {});

}  // namespace cbfllm::oracle
