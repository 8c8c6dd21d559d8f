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

#include <chrono>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cbfllm/constraint.h"
#include "cbfllm/core.h"
#include "cbfllm/predictor.h"

namespace cbfllm {

// Wire protocol of the inference bridge (HTTP/1.1, JSON bodies, 1-based
// token ids):
//
//   GET  /meta    -> {"vocab_size": N, "eos_tokens": [int]}
//   POST /logits  {"tokens": [int], "top_m": M}
//                 -> {"entries": [{"token": int, "logit": float}], "vocab_size": N}
//                    entries sorted by descending logit, at most M of them
//   POST /scores  {"tokens": [int]}       -> {"scores": [neg, neu, pos]}
//                 {"texts": [[int], ...]} -> {"scores": [[neg, neu, pos], ...]}

// Environment variable that overrides any configured bridge endpoint.
inline constexpr const char* kBridgeEndpointEnv = "CBFLLM_BRIDGE_URL";

// Logit assigned to tokens the bridge did not return.
inline constexpr double kMissingLogit = -1e9;
inline constexpr std::size_t kDefaultTopLogits = 100;

struct LogitEntry {
  TokenId token = 0;
  double logit = 0.0;
};

struct LogitsResponse {
  std::vector<LogitEntry> entries;
  std::size_t vocab_size = 0;
};

struct BridgeMeta {
  std::size_t vocab_size = 0;
  std::vector<TokenId> eos_tokens;
};

std::string EncodeLogitsRequest(const Text& x, std::size_t top_m);
// Throws ProtocolError on malformed JSON, unsorted entries, out-of-range ids
// or more than top_m entries.
LogitsResponse DecodeLogitsResponse(const std::string& body, std::size_t top_m);
// Dense logit vector of length vocab_size with kMissingLogit for unreturned
// tokens.
std::vector<double> ExpandLogits(const LogitsResponse& response,
                                 std::size_t vocab_size);

std::string EncodeScoreRequest(const Text& x);
std::string EncodeScoreRequest(std::span<const Text> xs);
ClassScores DecodeScoreResponse(const std::string& body);
std::vector<ClassScores> DecodeBatchScoreResponse(const std::string& body,
                                                  std::size_t expected);
BridgeMeta DecodeMeta(const std::string& body);

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{100};  // doubles per retry
  std::chrono::milliseconds connect_timeout{2000};
  std::chrono::milliseconds read_timeout{60000};
};

// Blocking HTTP client with retry. Transport failures and 5xx responses are
// retried; 4xx fails immediately. Each request opens its own connection, so
// one client may be shared across threads.
class BridgeClient {
 public:
  explicit BridgeClient(std::string endpoint, RetryPolicy policy = {});

  std::string Get(const std::string& path) const;
  std::string Post(const std::string& path, const std::string& body) const;

  const std::string& endpoint() const { return endpoint_; }

 private:
  template <typename Call>
  std::string WithRetry(const std::string& what, Call call) const;

  std::string endpoint_;
  std::string scheme_host_port_;
  std::string base_path_;
  RetryPolicy policy_;
};

// Returns the environment override when set, else `configured`.
std::string ResolveBridgeEndpoint(const std::string& configured);

// Fetches /meta once to build the vocabulary. When `expected` is given its
// size must match the bridge. Throws DomainError if top_logits > N.
LogitSourcePtr MakeRemotePredictor(const std::string& endpoint,
                                   std::size_t top_logits = kDefaultTopLogits,
                                   std::optional<Vocabulary> expected = std::nullopt,
                                   RetryPolicy policy = {});

// Sentiment L-CF backed by POST /scores; EvaluateMany issues one batch call.
LcfPtr MakeRemoteClassifierLcf(const std::string& endpoint,
                               RetryPolicy policy = {});

}  // namespace cbfllm
