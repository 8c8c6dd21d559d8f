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

#include <memory>
#include <utility>
#include <vector>

#include "cbfllm/core.h"

namespace cbfllm {

// Deterministic map from a Text to N raw next-token scores. Implementations
// must be safe for concurrent const use.
class LogitSource {
 public:
  virtual ~LogitSource() = default;

  // Returns a vector of length vocabulary().size(); entry i scores token i+1.
  virtual std::vector<double> Evaluate(const Text& x) const = 0;
  virtual const Vocabulary& vocabulary() const = 0;
};

using LogitSourcePtr = std::shared_ptr<const LogitSource>;

struct TemperatureConfig {
  // 0 selects the greedy limit: one-hot on the argmax, lowest id on ties.
  double temperature = 1.0;
};

// Temperature softmax of source.Evaluate(x). Throws ContractError when the
// source returns the wrong length or a NaN/inf logit, DomainError for a
// negative temperature.
ProbabilityVector Predict(const LogitSource& source, const Text& x,
                          TemperatureConfig cfg);

// Softmax over an explicit logit vector; shared by Predict and the bindings.
ProbabilityVector SoftmaxWithTemperature(const std::vector<double>& logits,
                                         double temperature);

struct SuffixEntry {
  std::vector<TokenId> suffix;
  std::vector<double> logits;
};

// Test double: Evaluate(x) returns the logits of the longest entry whose
// suffix matches the tail of x, else `default_logits`.
LogitSourcePtr MakeTablePredictor(Vocabulary vocab,
                                  std::vector<SuffixEntry> table,
                                  std::vector<double> default_logits);

// Add-k smoothed n-gram model:
//   logit[t] = log((count(ctx, t) + k) / (count(ctx) + k N))
// where ctx is the last (order - 1) tokens of x. Texts shorter than that use
// the whole text as context, which lines up with how sequence-initial
// positions are counted in the corpus.
LogitSourcePtr MakeNgramPredictor(Vocabulary vocab,
                                  const std::vector<Text>& corpus, int order,
                                  double smoothing);

}  // namespace cbfllm
