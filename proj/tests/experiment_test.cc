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

#include "cbfllm/experiment.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "cbfllm/errors.h"
#include "fake_bridge.h"

namespace cbfllm {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json SmallSpec() {
  return json::parse(R"({
    "vocabulary": {"size": 4, "eos_tokens": [4], "display": {"1": "a", "2": "b"}},
    "predictor": {"kind": "table", "default": [1, 1, 1, 0],
                  "entries": [{"suffix": [1], "logits": [0, 2, 1, 0]}]},
    "lcf": {"kind": "numeric", "bias": 0.4, "weights": {"1": 0.05, "3": -0.3}},
    "filters": [{"kind": "nocontrol"}, {"kind": "cbf", "alpha": 0.5}],
    "generation": {"initial_text": [1], "k_top": 2, "max_new_tokens": 5, "samples": 4,
                   "seed": 9},
    "output_dir": "unused"
  })");
}

std::string ErrorOf(const json& spec) {
  try {
    ParseExperimentSpec(spec.dump());
  } catch (const SpecError& e) {
    return e.what();
  }
  return "";
}

fs::path TempDir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cbfllm_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

TEST(ParseSpecTest, ShippedSyntheticConfig) {
  const ExperimentSpec spec =
      LoadExperimentSpec(fs::path(CBFLLM_SOURCE_DIR) / "configs" / "synthetic.json");
  EXPECT_EQ(spec.vocab_size, 50u);
  ASSERT_EQ(spec.filters.size(), 4u);
  EXPECT_EQ(spec.filters[0].Slug(), "nocontrol");
  EXPECT_EQ(spec.filters[2].name, "CBF(0.8)");
  EXPECT_EQ(spec.filters[2].Slug(), "cbf_0.8");
  EXPECT_EQ(spec.generation.k_top, 30u);
  EXPECT_EQ(spec.samples, 100u);
  EXPECT_EQ(spec.histogram.bins_h, 61u);
}

TEST(ParseSpecTest, ShippedRemoteConfig) {
  const ExperimentSpec spec =
      LoadExperimentSpec(fs::path(CBFLLM_SOURCE_DIR) / "configs" / "llm_sentiment.json");
  EXPECT_EQ(spec.predictor.kind, PredictorSpec::Kind::kRemote);
  EXPECT_EQ(spec.lcf.kind, LcfSpec::Kind::kRemoteClassifier);
  EXPECT_TRUE(spec.initial_prompt.has_value());
  EXPECT_EQ(spec.generation.max_new_tokens, 30u);
  EXPECT_EQ(spec.generation.temperature, 1.0);
}

TEST(ParseSpecTest, SmallSpecFields) {
  const ExperimentSpec spec = ParseExperimentSpec(SmallSpec().dump());
  EXPECT_EQ(spec.eos_tokens, (std::set<TokenId>{4}));
  EXPECT_EQ(spec.token_display.at(2), "b");
  EXPECT_EQ(spec.lcf.weights.at(3), -0.3);
  EXPECT_EQ(spec.generation.seed, 9u);
  EXPECT_EQ(spec.samples, 4u);
}

TEST(ParseSpecTest, ErrorsNameTheField) {
  json s = SmallSpec();
  s["filters"][1]["alpha"] = 1.5;
  EXPECT_NE(ErrorOf(s).find("filters[1].alpha"), std::string::npos) << ErrorOf(s);

  s = SmallSpec();
  s["generation"]["k_top"] = 9;
  EXPECT_NE(ErrorOf(s).find("generation.k_top"), std::string::npos) << ErrorOf(s);

  s = SmallSpec();
  s["predictor"]["entries"][0]["logits"] = {1, 2};
  EXPECT_NE(ErrorOf(s).find("predictor.entries[0].logits"), std::string::npos) << ErrorOf(s);

  s = SmallSpec();
  s["generation"]["stall_policy"] = "retry";
  EXPECT_NE(ErrorOf(s).find("generation.stall_policy"), std::string::npos) << ErrorOf(s);

  s = SmallSpec();
  s["bogus"] = 1;
  EXPECT_NE(ErrorOf(s).find("bogus"), std::string::npos) << ErrorOf(s);

  s = SmallSpec();
  s["filters"].push_back({{"kind", "cbf"}, {"alpha", 0.5}});
  EXPECT_NE(ErrorOf(s).find("filters[2]"), std::string::npos) << ErrorOf(s);

  s = SmallSpec();
  s["generation"]["initial_text"] = {0};
  EXPECT_NE(ErrorOf(s).find("generation.initial_text[0]"), std::string::npos) << ErrorOf(s);
}

TEST(ParseSpecTest, SyntaxErrorsReportPosition) {
  try {
    ParseExperimentSpec("{\n  \"vocabulary\": {\"size\": 4,,}\n}");
    FAIL();
  } catch (const SpecError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(ParseSpecTest, InitialPromptNeedsRemotePredictor) {
  json s = SmallSpec();
  s["generation"].erase("initial_text");
  s["generation"]["initial_prompt"] = "hello";
  EXPECT_FALSE(ErrorOf(s).empty());
}

TEST(RunExperimentTest, WritesEveryArtifact) {
  const ExperimentSpec spec = ParseExperimentSpec(SmallSpec().dump());
  const fs::path dir = TempDir("artifacts");
  const ExperimentResult r = RunExperiment(spec, {.output_dir = dir, .parallelism = 2});
  EXPECT_EQ(r.failures, 0u);
  ASSERT_EQ(r.runs.size(), 2u);
  EXPECT_EQ(r.files.size(), 9u);
  for (const char* f : {"nocontrol_trajectories.csv", "nocontrol_fan.csv",
                        "nocontrol_histogram.json", "nocontrol_report.json",
                        "cbf_0.5_trajectories.csv", "report.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const json combined = json::parse(Slurp(dir / "report.json"));
  ASSERT_EQ(combined.size(), 2u);
  EXPECT_EQ(combined[0]["filter"], "NoControl");
  EXPECT_EQ(combined[0]["mean_disallowed"], 0.0);
  EXPECT_EQ(combined[1]["runs"], 4);
  fs::remove_all(dir);
}

TEST(RunExperimentTest, OutputIsByteIdenticalAcrossParallelism) {
  const ExperimentSpec spec = ParseExperimentSpec(SmallSpec().dump());
  const fs::path a = TempDir("det_a");
  const fs::path b = TempDir("det_b");
  RunExperiment(spec, {.output_dir = a, .parallelism = 1});
  RunExperiment(spec, {.output_dir = b, .parallelism = 3});
  std::size_t compared = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    EXPECT_EQ(Slurp(entry.path()), Slurp(b / entry.path().filename()));
    ++compared;
  }
  EXPECT_EQ(compared, 9u);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(RunExperimentTest, SeedOverrideChangesRuns) {
  const ExperimentSpec spec = ParseExperimentSpec(SmallSpec().dump());
  const auto a = RunExperiment(spec, {.output_dir = TempDir("seed_a"), .seed = 1});
  const auto b = RunExperiment(spec, {.output_dir = TempDir("seed_b"), .seed = 1});
  EXPECT_EQ(a.runs[1].outcomes[0].seed, 1u);
  EXPECT_EQ(a.runs[1].outcomes[0].record, b.runs[1].outcomes[0].record);
  fs::remove_all(TempDir("seed_a"));
  fs::remove_all(TempDir("seed_b"));
}

TEST(RunExperimentTest, RemoteSpecAgainstFakeBridge) {
  testing::FakeBridge bridge;
  bridge.OnGet("/meta", [](const auto&, auto& res) {
    testing::FakeBridge::Json(res, R"({"vocab_size": 3, "eos_tokens": []})");
  });
  bridge.OnPost("/tokenize", [](const auto&, auto& res) {
    testing::FakeBridge::Json(res, R"({"tokens": [1, 2]})");
  });
  bridge.OnPost("/logits", [](const auto&, auto& res) {
    testing::FakeBridge::Json(
        res, R"({"vocab_size": 3, "entries": [{"token": 3, "logit": 2.0}, {"token": 1, "logit": 1.0}]})");
  });
  bridge.OnPost("/scores", [](const httplib::Request& req, auto& res) {
    const json body = json::parse(req.body);
    if (body.contains("texts")) {
      json scores = json::array();
      for (std::size_t i = 0; i < body["texts"].size(); ++i) scores.push_back({0.1, 0.2, 0.7});
      testing::FakeBridge::Json(res, json{{"scores", scores}}.dump());
    } else {
      testing::FakeBridge::Json(res, R"({"scores": [0.1, 0.2, 0.7]})");
    }
  });
  bridge.Start();

  json s = {
      {"vocabulary", {{"size", 3}}},
      {"predictor", {{"kind", "remote"}, {"endpoint", bridge.url()}, {"top_logits", 2}}},
      {"lcf", {{"kind", "remote_classifier"}, {"endpoint", bridge.url()}}},
      {"filters", {{{"kind", "cbf"}, {"alpha", 0.3}}}},
      {"generation",
       {{"initial_prompt", "hi"}, {"k_top", 2}, {"max_new_tokens", 3}, {"samples", 2}}},
      {"output_dir", TempDir("remote").string()}};
  const ExperimentSpec spec = ParseExperimentSpec(s.dump());
  const ExperimentResult r = RunExperiment(spec);
  ASSERT_EQ(r.failures, 0u);
  const auto& rec = *r.runs[0].outcomes[0].record;
  EXPECT_EQ(rec.final_text[0], 1);
  EXPECT_EQ(rec.final_text[1], 2);
  EXPECT_EQ(rec.steps.size(), 3u);
  for (const auto& step : rec.steps) EXPECT_NE(step.token, 2);
  fs::remove_all(TempDir("remote"));
}

TEST(SyntheticCorpusTest, DeterministicAndInRange) {
  const SyntheticCorpusSpec cs{.texts = 10, .length = 7, .seed = 5};
  const auto a = SyntheticCorpus(12, cs);
  EXPECT_EQ(a, SyntheticCorpus(12, cs));
  ASSERT_EQ(a.size(), 10u);
  for (const Text& t : a) {
    ASSERT_EQ(t.size(), 7u);
    for (TokenId tok : t.tokens()) ASSERT_TRUE(tok >= 1 && tok <= 12);
  }
  const auto w = RandomWeights(12, -0.1, 0.2, 3);
  EXPECT_EQ(w.size(), 12u);
  for (const auto& [t, v] : w) EXPECT_TRUE(v >= -0.1 && v <= 0.2);
}

}  // namespace
}  // namespace cbfllm
