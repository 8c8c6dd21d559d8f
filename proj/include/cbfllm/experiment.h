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

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cbfllm/analysis.h"
#include "cbfllm/constraint.h"
#include "cbfllm/pipeline.h"
#include "cbfllm/predictor.h"

namespace cbfllm {

// Deterministic Markov-chain corpus used by the desk-scale experiments. Each
// token gets `branching` preferred successors; a walk follows one of them
// with probability `stickiness` and otherwise jumps uniformly.
struct SyntheticCorpusSpec {
  std::size_t texts = 200;
  std::size_t length = 20;
  std::size_t branching = 3;
  double stickiness = 0.85;
  std::uint64_t seed = 1;
};

std::vector<Text> SyntheticCorpus(std::size_t vocab_size,
                                  const SyntheticCorpusSpec& spec);

// Per-token weights drawn uniformly from [min, max].
std::unordered_map<TokenId, double> RandomWeights(std::size_t vocab_size,
                                                  double min, double max,
                                                  std::uint64_t seed);

struct PredictorSpec {
  enum class Kind { kTable, kNgram, kRemote } kind = Kind::kNgram;
  // table
  std::vector<SuffixEntry> table;
  std::vector<double> default_logits;
  // ngram
  int order = 2;
  double smoothing = 0.01;
  std::vector<Text> corpus;
  // remote
  std::string endpoint;
  std::size_t top_logits = 100;
};

struct LcfSpec {
  enum class Kind { kNumeric, kRemoteClassifier } kind = Kind::kNumeric;
  std::unordered_map<TokenId, double> weights;
  double bias = 0.0;
  std::string endpoint;
};

struct FilterSpec {
  std::string name;  // display name, e.g. "CBF(0.3)"
  FilterKind kind = FilterKind::kCbf;
  double alpha = 1.0;

  // File-name stem derived from `name`.
  std::string Slug() const;
};

struct ExperimentSpec {
  std::size_t vocab_size = 0;
  std::set<TokenId> eos_tokens;
  std::map<TokenId, std::string> token_display;
  PredictorSpec predictor;
  LcfSpec lcf;
  std::vector<FilterSpec> filters;
  // Filter-specific fields (kind, alpha) are taken from each FilterSpec.
  GenerationConfig generation;
  // Text resolved through the bridge's /tokenize when initial_text is absent.
  std::optional<std::string> initial_prompt;
  std::size_t samples = 100;
  HistogramSpec histogram;
  std::filesystem::path output_dir = "out";
};

// Parses and validates a JSON experiment spec. Errors are SpecError with a
// message naming the field path (e.g. "filters[2].alpha") or, for syntax
// errors, the line and column.
ExperimentSpec ParseExperimentSpec(const std::string& json_text);
ExperimentSpec LoadExperimentSpec(const std::filesystem::path& path);

struct ExperimentOptions {
  std::optional<std::filesystem::path> output_dir;
  std::optional<std::uint64_t> seed;
  std::size_t parallelism = 0;
};

struct FilterRun {
  FilterSpec filter;
  std::vector<SampleOutcome> outcomes;
  FilterReport report;
};

struct ExperimentResult {
  std::vector<FilterRun> runs;
  std::vector<std::filesystem::path> files;
  std::size_t failures = 0;

  std::vector<FilterReport> reports() const;
};

LogitSourcePtr BuildPredictor(const ExperimentSpec& spec);
LcfPtr BuildLcf(const ExperimentSpec& spec);

// Runs every filter's batch (same base seed for each filter) and writes
// <slug>_trajectories.csv, <slug>_fan.csv, <slug>_histogram.json and
// <slug>_report.json per filter plus a combined report.json.
ExperimentResult RunExperiment(const ExperimentSpec& spec,
                               const ExperimentOptions& options = {});

}  // namespace cbfllm
