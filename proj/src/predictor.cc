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

#include "cbfllm/predictor.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include "cbfllm/errors.h"

namespace cbfllm {

ProbabilityVector SoftmaxWithTemperature(const std::vector<double>& logits,
                                         double temperature) {
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    throw DomainError("temperature must be a finite value >= 0");
  }
  if (logits.empty()) throw ContractError("empty logit vector");
  for (double v : logits) {
    if (!std::isfinite(v)) throw ContractError("non-finite logit");
  }

  const auto argmax = static_cast<std::size_t>(
      std::max_element(logits.begin(), logits.end()) - logits.begin());
  ProbabilityVectorBuilder out(logits.size());
  if (temperature == 0.0) {
    // max_element returns the first maximum, i.e. the lowest token id.
    out.Set(argmax, 1.0);
    return std::move(out).Build();
  }

  const double shift = logits[argmax];
  std::vector<double> e(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    e[i] = std::exp((logits[i] - shift) / temperature);
    total += e[i];
  }
  for (std::size_t i = 0; i < logits.size(); ++i) out.Set(i, e[i] / total);
  return std::move(out).Build();
}

ProbabilityVector Predict(const LogitSource& source, const Text& x,
                          TemperatureConfig cfg) {
  std::vector<double> logits = source.Evaluate(x);
  if (logits.size() != source.vocabulary().size()) {
    throw ContractError("logit source returned " +
                        std::to_string(logits.size()) +
                        " scores for a vocabulary of " +
                        std::to_string(source.vocabulary().size()));
  }
  return SoftmaxWithTemperature(logits, cfg.temperature);
}

namespace {

void CheckLength(const std::vector<double>& logits, const Vocabulary& vocab,
                 const char* what) {
  if (logits.size() != vocab.size()) {
    throw DomainError(std::string(what) + " has length " +
                      std::to_string(logits.size()) + ", expected " +
                      std::to_string(vocab.size()));
  }
}

class TablePredictor final : public LogitSource {
 public:
  TablePredictor(Vocabulary vocab, std::vector<SuffixEntry> table,
                 std::vector<double> default_logits)
      : vocab_(std::move(vocab)), default_(std::move(default_logits)) {
    CheckLength(default_, vocab_, "default logits");
    for (auto& entry : table) {
      CheckLength(entry.logits, vocab_, "table logits");
      for (TokenId t : entry.suffix) {
        if (!vocab_.Contains(t)) throw DomainError("table suffix token out of range");
      }
      max_suffix_ = std::max(max_suffix_, entry.suffix.size());
      table_[Text(std::move(entry.suffix))] = std::move(entry.logits);
    }
  }

  std::vector<double> Evaluate(const Text& x) const override {
    const std::size_t longest = std::min(max_suffix_, x.size());
    auto tokens = x.tokens();
    for (std::size_t len = longest; len > 0; --len) {
      Text suffix(std::vector<TokenId>(tokens.end() - static_cast<std::ptrdiff_t>(len),
                                       tokens.end()));
      if (auto it = table_.find(suffix); it != table_.end()) return it->second;
    }
    // An empty suffix key matches every text.
    if (auto it = table_.find(Text{}); it != table_.end()) return it->second;
    return default_;
  }

  const Vocabulary& vocabulary() const override { return vocab_; }

 private:
  Vocabulary vocab_;
  std::map<Text, std::vector<double>> table_;
  std::vector<double> default_;
  std::size_t max_suffix_ = 0;
};

class NgramPredictor final : public LogitSource {
 public:
  NgramPredictor(Vocabulary vocab, const std::vector<Text>& corpus, int order,
                 double smoothing)
      : vocab_(std::move(vocab)), order_(order), k_(smoothing) {
    if (order_ < 1) throw DomainError("n-gram order must be >= 1");
    if (!(k_ > 0.0) || !std::isfinite(k_)) {
      throw DomainError("smoothing constant must be > 0");
    }
    const auto ctx_len = static_cast<std::size_t>(order_ - 1);
    for (const Text& text : corpus) {
      auto tokens = text.tokens();
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (!vocab_.Contains(tokens[i])) {
          throw DomainError("corpus token " + std::to_string(tokens[i]) +
                            " outside vocabulary");
        }
        const std::size_t start = i >= ctx_len ? i - ctx_len : 0;
        Text ctx(std::vector<TokenId>(tokens.begin() + static_cast<std::ptrdiff_t>(start),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i)));
        auto& counts = contexts_[ctx];
        if (counts.next.empty()) counts.next.assign(vocab_.size(), 0.0);
        counts.next[IndexOf(tokens[i])] += 1.0;
        counts.total += 1.0;
      }
    }
  }

  std::vector<double> Evaluate(const Text& x) const override {
    const auto ctx_len = static_cast<std::size_t>(order_ - 1);
    auto tokens = x.tokens();
    const std::size_t start = tokens.size() >= ctx_len ? tokens.size() - ctx_len : 0;
    Text ctx(std::vector<TokenId>(tokens.begin() + static_cast<std::ptrdiff_t>(start),
                                  tokens.end()));
    const double kn = k_ * static_cast<double>(vocab_.size());
    auto it = contexts_.find(ctx);
    if (it == contexts_.end()) {
      return std::vector<double>(vocab_.size(), std::log(k_ / kn));
    }
    const Counts& c = it->second;
    std::vector<double> logits(vocab_.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
      logits[i] = std::log((c.next[i] + k_) / (c.total + kn));
    }
    return logits;
  }

  const Vocabulary& vocabulary() const override { return vocab_; }

 private:
  struct Counts {
    std::vector<double> next;
    double total = 0.0;
  };

  Vocabulary vocab_;
  int order_;
  double k_;
  std::unordered_map<Text, Counts, TextHash> contexts_;
};

}  // namespace

LogitSourcePtr MakeTablePredictor(Vocabulary vocab,
                                  std::vector<SuffixEntry> table,
                                  std::vector<double> default_logits) {
  return std::make_shared<TablePredictor>(std::move(vocab), std::move(table),
                                          std::move(default_logits));
}

LogitSourcePtr MakeNgramPredictor(Vocabulary vocab,
                                  const std::vector<Text>& corpus, int order,
                                  double smoothing) {
  return std::make_shared<NgramPredictor>(std::move(vocab), corpus, order,
                                          smoothing);
}

}  // namespace cbfllm
