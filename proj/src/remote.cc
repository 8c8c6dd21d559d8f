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

#include "cbfllm/remote.h"

#include <cmath>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "cbfllm/errors.h"

namespace cbfllm {

using nlohmann::json;

namespace {

json ParseBody(const std::string& body) {
  try {
    return json::parse(body);
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed bridge response: ") + e.what());
  }
}

std::vector<int> TokensOf(const Text& x) {
  return std::vector<int>(x.tokens().begin(), x.tokens().end());
}

ClassScores ScoresFrom(const json& triple) {
  if (!triple.is_array() || triple.size() != 3) {
    throw ProtocolError("score entry must be a 3-element array");
  }
  try {
    return ClassScores(triple[0].get<double>(), triple[1].get<double>(),
                       triple[2].get<double>());
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("non-numeric score: ") + e.what());
  } catch (const DomainError& e) {
    throw ProtocolError(std::string("invalid score triple: ") + e.what());
  }
}

}  // namespace

std::string EncodeLogitsRequest(const Text& x, std::size_t top_m) {
  return json{{"tokens", TokensOf(x)}, {"top_m", top_m}}.dump();
}

LogitsResponse DecodeLogitsResponse(const std::string& body, std::size_t top_m) {
  const json j = ParseBody(body);
  LogitsResponse r;
  try {
    r.vocab_size = j.at("vocab_size").get<std::size_t>();
    const json& entries = j.at("entries");
    if (!entries.is_array()) throw ProtocolError("'entries' must be an array");
    for (const json& e : entries) {
      r.entries.push_back({e.at("token").get<TokenId>(), e.at("logit").get<double>()});
    }
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("bad logits response: ") + e.what());
  }
  if (r.entries.size() > top_m) {
    throw ProtocolError("bridge returned more than top_m entries");
  }
  for (std::size_t i = 0; i < r.entries.size(); ++i) {
    const LogitEntry& e = r.entries[i];
    if (e.token < 1 || static_cast<std::size_t>(e.token) > r.vocab_size) {
      throw ProtocolError("token id " + std::to_string(e.token) +
                          " outside 1.." + std::to_string(r.vocab_size));
    }
    if (!std::isfinite(e.logit)) throw ProtocolError("non-finite logit");
    if (i > 0 && r.entries[i - 1].logit < e.logit) {
      throw ProtocolError("entries not sorted by descending logit");
    }
  }
  return r;
}

std::vector<double> ExpandLogits(const LogitsResponse& response,
                                 std::size_t vocab_size) {
  if (response.vocab_size != vocab_size) {
    throw ProtocolError("bridge vocab_size " + std::to_string(response.vocab_size) +
                        " does not match " + std::to_string(vocab_size));
  }
  std::vector<double> logits(vocab_size, kMissingLogit);
  std::vector<bool> seen(vocab_size, false);
  for (const auto& e : response.entries) {
    if (seen[IndexOf(e.token)]) {
      throw ProtocolError("duplicate token " + std::to_string(e.token));
    }
    seen[IndexOf(e.token)] = true;
    logits[IndexOf(e.token)] = e.logit;
  }
  return logits;
}

std::string EncodeScoreRequest(const Text& x) {
  return json{{"tokens", TokensOf(x)}}.dump();
}

std::string EncodeScoreRequest(std::span<const Text> xs) {
  json texts = json::array();
  for (const Text& x : xs) texts.push_back(TokensOf(x));
  return json{{"texts", texts}}.dump();
}

ClassScores DecodeScoreResponse(const std::string& body) {
  const json j = ParseBody(body);
  if (!j.contains("scores")) throw ProtocolError("missing 'scores'");
  return ScoresFrom(j["scores"]);
}

std::vector<ClassScores> DecodeBatchScoreResponse(const std::string& body,
                                                  std::size_t expected) {
  const json j = ParseBody(body);
  if (!j.contains("scores") || !j["scores"].is_array()) {
    throw ProtocolError("missing 'scores' array");
  }
  if (j["scores"].size() != expected) {
    throw ProtocolError("expected " + std::to_string(expected) +
                        " score triples, got " + std::to_string(j["scores"].size()));
  }
  std::vector<ClassScores> out;
  out.reserve(expected);
  for (const json& triple : j["scores"]) out.push_back(ScoresFrom(triple));
  return out;
}

BridgeMeta DecodeMeta(const std::string& body) {
  const json j = ParseBody(body);
  BridgeMeta meta;
  try {
    meta.vocab_size = j.at("vocab_size").get<std::size_t>();
    meta.eos_tokens = j.value("eos_tokens", std::vector<TokenId>{});
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("bad meta response: ") + e.what());
  }
  if (meta.vocab_size == 0) throw ProtocolError("vocab_size must be >= 1");
  return meta;
}

BridgeClient::BridgeClient(std::string endpoint, RetryPolicy policy)
    : endpoint_(std::move(endpoint)), policy_(policy) {
  const auto scheme = endpoint_.find("://");
  const auto path_start =
      endpoint_.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  scheme_host_port_ = endpoint_.substr(0, path_start);
  if (path_start != std::string::npos) {
    base_path_ = endpoint_.substr(path_start);
    while (!base_path_.empty() && base_path_.back() == '/') base_path_.pop_back();
  }
  if (policy_.attempts < 1) throw DomainError("retry attempts must be >= 1");
}

template <typename Call>
std::string BridgeClient::WithRetry(const std::string& what, Call call) const {
  auto backoff = policy_.initial_backoff;
  std::string last_error;
  for (int attempt = 1; attempt <= policy_.attempts; ++attempt) {
    httplib::Client client(scheme_host_port_);
    client.set_connection_timeout(policy_.connect_timeout);
    client.set_read_timeout(policy_.read_timeout);
    httplib::Result res = call(client);
    if (!res) {
      last_error = httplib::to_string(res.error());
    } else if (res->status == 200) {
      return res->body;
    } else if (res->status < 500) {
      throw RemoteError(what + " rejected with HTTP " + std::to_string(res->status) +
                        ": " + res->body);
    } else {
      last_error = "HTTP " + std::to_string(res->status);
    }
    if (attempt < policy_.attempts) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
  throw RemoteError(what + " to " + endpoint_ + " failed after " +
                    std::to_string(policy_.attempts) + " attempts: " + last_error);
}

std::string BridgeClient::Get(const std::string& path) const {
  const std::string full = base_path_ + path;
  return WithRetry("GET " + path, [&](httplib::Client& c) { return c.Get(full); });
}

std::string BridgeClient::Post(const std::string& path, const std::string& body) const {
  const std::string full = base_path_ + path;
  return WithRetry("POST " + path, [&](httplib::Client& c) {
    return c.Post(full, body, "application/json");
  });
}

std::string ResolveBridgeEndpoint(const std::string& configured) {
  if (const char* env = std::getenv(kBridgeEndpointEnv); env && *env) return env;
  return configured;
}

namespace {

class RemotePredictor final : public LogitSource {
 public:
  RemotePredictor(BridgeClient client, Vocabulary vocab, std::size_t top_logits)
      : client_(std::move(client)), vocab_(std::move(vocab)), top_(top_logits) {}

  std::vector<double> Evaluate(const Text& x) const override {
    const std::string body = client_.Post("/logits", EncodeLogitsRequest(x, top_));
    return ExpandLogits(DecodeLogitsResponse(body, top_), vocab_.size());
  }

  const Vocabulary& vocabulary() const override { return vocab_; }

 private:
  BridgeClient client_;
  Vocabulary vocab_;
  std::size_t top_;
};

}  // namespace

LogitSourcePtr MakeRemotePredictor(const std::string& endpoint,
                                   std::size_t top_logits,
                                   std::optional<Vocabulary> expected,
                                   RetryPolicy policy) {
  BridgeClient client(endpoint, policy);
  const BridgeMeta meta = DecodeMeta(client.Get("/meta"));
  if (expected && expected->size() != meta.vocab_size) {
    throw DomainError("configured vocabulary size " + std::to_string(expected->size()) +
                      " does not match bridge vocab_size " +
                      std::to_string(meta.vocab_size));
  }
  if (top_logits < 1 || top_logits > meta.vocab_size) {
    throw DomainError("top_logits must lie in [1, vocab_size]");
  }
  std::set<TokenId> eos(meta.eos_tokens.begin(), meta.eos_tokens.end());
  Vocabulary vocab = expected ? Vocabulary(meta.vocab_size, std::move(eos),
                                           expected->token_display())
                              : Vocabulary(meta.vocab_size, std::move(eos));
  return std::make_shared<RemotePredictor>(std::move(client), std::move(vocab),
                                           top_logits);
}

LcfPtr MakeRemoteClassifierLcf(const std::string& endpoint, RetryPolicy policy) {
  auto client = std::make_shared<BridgeClient>(endpoint, policy);
  Scorer single = [client](const Text& x) {
    return DecodeScoreResponse(client->Post("/scores", EncodeScoreRequest(x)));
  };
  BatchScorer batch = [client](std::span<const Text> xs) {
    return DecodeBatchScoreResponse(client->Post("/scores", EncodeScoreRequest(xs)),
                                    xs.size());
  };
  return MakeClassifierLcf(std::move(single), std::move(batch));
}

}  // namespace cbfllm
