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

#include <cctype>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "cbfllm/errors.h"
#include "cbfllm/remote.h"

namespace cbfllm {

using nlohmann::json;

namespace {

double Uniform01(std::mt19937_64& engine) {
  return static_cast<double>(engine() >> 11) * 0x1.0p-53;
}

std::size_t UniformIndex(std::mt19937_64& engine, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(Uniform01(engine) * static_cast<double>(n)));
}

// A JSON node plus the dotted path used in diagnostics.
class Node {
 public:
  Node(const json& j, std::string path) : j_(j), path_(std::move(path)) {}

  const json& value() const { return j_; }
  const std::string& path() const { return path_; }

  [[noreturn]] void Fail(const std::string& msg) const {
    throw SpecError(path_ + ": " + msg);
  }

  bool Has(const std::string& key) const { return j_.is_object() && j_.contains(key); }

  Node At(const std::string& key) const {
    if (!j_.is_object()) Fail("expected an object");
    if (!j_.contains(key)) throw SpecError(Join(key) + ": required field missing");
    return Node(j_.at(key), Join(key));
  }

  Node At(std::size_t i) const {
    return Node(j_.at(i), path_ + "[" + std::to_string(i) + "]");
  }

  std::vector<Node> Items() const {
    if (!j_.is_array()) Fail("expected an array");
    std::vector<Node> out;
    for (std::size_t i = 0; i < j_.size(); ++i) out.push_back(At(i));
    return out;
  }

  void OnlyKeys(std::initializer_list<const char*> allowed) const {
    if (!j_.is_object()) Fail("expected an object");
    for (const auto& [key, _] : j_.items()) {
      bool ok = false;
      for (const char* a : allowed) ok = ok || key == a;
      if (!ok) throw SpecError(Join(key) + ": unknown field");
    }
  }

  template <typename T>
  T As() const {
    try {
      return j_.get<T>();
    } catch (const json::exception&) {
      Fail("wrong type");
    }
  }

  double Real() const {
    if (!j_.is_number()) Fail("expected a number");
    return j_.get<double>();
  }

  std::size_t Count() const {
    if (!j_.is_number_integer() || j_.get<long long>() < 0) {
      Fail("expected a non-negative integer");
    }
    return j_.get<std::size_t>();
  }

  std::string String() const {
    if (!j_.is_string()) Fail("expected a string");
    return j_.get<std::string>();
  }

  template <typename T>
  T Get(const std::string& key, T fallback) const {
    return Has(key) ? At(key).template As<T>() : fallback;
  }
  double RealOr(const std::string& key, double fallback) const {
    return Has(key) ? At(key).Real() : fallback;
  }
  std::size_t CountOr(const std::string& key, std::size_t fallback) const {
    return Has(key) ? At(key).Count() : fallback;
  }

 private:
  std::string Join(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  const json& j_;
  std::string path_;
};

Text ParseText(const Node& n, std::size_t vocab_size) {
  std::vector<TokenId> tokens;
  for (const Node& item : n.Items()) {
    const std::size_t t = item.Count();
    if (t < 1 || t > vocab_size) {
      item.Fail("token id outside 1.." + std::to_string(vocab_size));
    }
    tokens.push_back(static_cast<TokenId>(t));
  }
  return Text(std::move(tokens));
}

std::vector<double> ParseLogits(const Node& n, std::size_t vocab_size) {
  std::vector<double> v;
  for (const Node& item : n.Items()) v.push_back(item.Real());
  if (v.size() != vocab_size) {
    n.Fail("expected " + std::to_string(vocab_size) + " logits, got " +
           std::to_string(v.size()));
  }
  return v;
}

TokenId ParseTokenKey(const Node& n, const std::string& key, std::size_t vocab_size) {
  std::size_t t = 0;
  try {
    std::size_t used = 0;
    t = std::stoul(key, &used);
    if (used != key.size()) throw std::invalid_argument(key);
  } catch (const std::exception&) {
    n.Fail("key '" + key + "' is not a token id");
  }
  if (t < 1 || t > vocab_size) n.Fail("token id " + key + " outside vocabulary");
  return static_cast<TokenId>(t);
}

std::unordered_map<TokenId, double> ParseWeights(const Node& n, std::size_t vocab_size) {
  if (!n.value().is_object()) n.Fail("expected an object mapping token id to weight");
  std::unordered_map<TokenId, double> out;
  for (const auto& [key, _] : n.value().items()) {
    out[ParseTokenKey(n, key, vocab_size)] = n.At(key).Real();
  }
  return out;
}

PredictorSpec ParsePredictor(const Node& n, std::size_t vocab_size) {
  PredictorSpec p;
  const std::string kind = n.At("kind").String();
  if (kind == "table") {
    n.OnlyKeys({"kind", "default", "entries"});
    p.kind = PredictorSpec::Kind::kTable;
    p.default_logits = ParseLogits(n.At("default"), vocab_size);
    if (n.Has("entries")) {
      for (const Node& e : n.At("entries").Items()) {
        e.OnlyKeys({"suffix", "logits"});
        Text suffix = ParseText(e.At("suffix"), vocab_size);
        p.table.push_back({std::vector<TokenId>(suffix.tokens().begin(), suffix.tokens().end()),
                           ParseLogits(e.At("logits"), vocab_size)});
      }
    }
  } else if (kind == "ngram") {
    n.OnlyKeys({"kind", "order", "smoothing", "corpus", "synthetic_corpus"});
    p.kind = PredictorSpec::Kind::kNgram;
    p.order = static_cast<int>(n.CountOr("order", 2));
    if (p.order < 1) n.At("order").Fail("must be >= 1");
    p.smoothing = n.RealOr("smoothing", 0.01);
    if (!(p.smoothing > 0.0)) n.At("smoothing").Fail("must be > 0");
    if (n.Has("corpus") == n.Has("synthetic_corpus")) {
      n.Fail("exactly one of 'corpus' or 'synthetic_corpus' is required");
    }
    if (n.Has("corpus")) {
      for (const Node& t : n.At("corpus").Items()) p.corpus.push_back(ParseText(t, vocab_size));
    } else {
      const Node s = n.At("synthetic_corpus");
      s.OnlyKeys({"texts", "length", "branching", "stickiness", "seed"});
      SyntheticCorpusSpec cs;
      cs.texts = s.CountOr("texts", cs.texts);
      cs.length = s.CountOr("length", cs.length);
      cs.branching = s.CountOr("branching", cs.branching);
      cs.stickiness = s.RealOr("stickiness", cs.stickiness);
      cs.seed = s.Get<std::uint64_t>("seed", cs.seed);
      if (!(cs.stickiness >= 0.0 && cs.stickiness <= 1.0)) {
        s.At("stickiness").Fail("must lie in [0, 1]");
      }
      if (cs.branching < 1) s.At("branching").Fail("must be >= 1");
      p.corpus = SyntheticCorpus(vocab_size, cs);
    }
  } else if (kind == "remote") {
    n.OnlyKeys({"kind", "endpoint", "top_logits"});
    p.kind = PredictorSpec::Kind::kRemote;
    p.endpoint = n.At("endpoint").String();
    p.top_logits = n.CountOr("top_logits", kDefaultTopLogits);
    if (p.top_logits < 1 || p.top_logits > vocab_size) {
      n.At("top_logits").Fail("must lie in [1, vocabulary.size]");
    }
  } else {
    n.At("kind").Fail("unknown predictor kind '" + kind + "' (table|ngram|remote)");
  }
  return p;
}

LcfSpec ParseLcf(const Node& n, std::size_t vocab_size) {
  LcfSpec l;
  const std::string kind = n.At("kind").String();
  if (kind == "numeric") {
    n.OnlyKeys({"kind", "bias", "weights", "random_weights"});
    l.kind = LcfSpec::Kind::kNumeric;
    l.bias = n.RealOr("bias", 0.0);
    if (n.Has("weights") && n.Has("random_weights")) {
      n.Fail("'weights' and 'random_weights' are mutually exclusive");
    }
    if (n.Has("weights")) l.weights = ParseWeights(n.At("weights"), vocab_size);
    if (n.Has("random_weights")) {
      const Node r = n.At("random_weights");
      r.OnlyKeys({"min", "max", "seed"});
      const double lo = r.At("min").Real();
      const double hi = r.At("max").Real();
      if (!(hi >= lo)) r.At("max").Fail("must be >= min");
      l.weights = RandomWeights(vocab_size, lo, hi, r.Get<std::uint64_t>("seed", 1));
    }
  } else if (kind == "remote_classifier") {
    n.OnlyKeys({"kind", "endpoint"});
    l.kind = LcfSpec::Kind::kRemoteClassifier;
    l.endpoint = n.At("endpoint").String();
  } else {
    n.At("kind").Fail("unknown lcf kind '" + kind + "' (numeric|remote_classifier)");
  }
  return l;
}

std::string DefaultFilterName(FilterKind kind, double alpha) {
  switch (kind) {
    case FilterKind::kNoControl: return "NoControl";
    case FilterKind::kBlacklist: return "Blacklist";
    case FilterKind::kCbf: return "CBF(" + FormatDouble(alpha) + ")";
  }
  return "?";
}

FilterSpec ParseFilter(const Node& n) {
  n.OnlyKeys({"kind", "alpha", "name"});
  FilterSpec f;
  const std::string kind = n.At("kind").String();
  if (kind == "nocontrol") {
    f.kind = FilterKind::kNoControl;
  } else if (kind == "blacklist") {
    f.kind = FilterKind::kBlacklist;
    f.alpha = 1.0;
  } else if (kind == "cbf") {
    f.kind = FilterKind::kCbf;
    f.alpha = n.At("alpha").Real();
    if (!(f.alpha >= 0.0 && f.alpha <= 1.0)) {
      n.At("alpha").Fail("must lie in [0, 1], got " + FormatDouble(f.alpha));
    }
  } else {
    n.At("kind").Fail("unknown filter kind '" + kind + "' (nocontrol|blacklist|cbf)");
  }
  if (f.kind != FilterKind::kCbf && n.Has("alpha")) {
    n.At("alpha").Fail("only cbf filters take alpha");
  }
  f.name = n.Has("name") ? n.At("name").String() : DefaultFilterName(f.kind, f.alpha);
  return f;
}

void WriteFile(const std::filesystem::path& path, const std::string& content,
               std::vector<std::filesystem::path>& files) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
  files.push_back(path);
}

}  // namespace

std::vector<Text> SyntheticCorpus(std::size_t vocab_size,
                                  const SyntheticCorpusSpec& spec) {
  if (vocab_size == 0) throw DomainError("vocabulary size must be >= 1");
  std::mt19937_64 engine(spec.seed);
  std::vector<std::vector<TokenId>> successors(vocab_size);
  for (auto& s : successors) {
    for (std::size_t b = 0; b < spec.branching; ++b) {
      s.push_back(TokenAt(UniformIndex(engine, vocab_size)));
    }
  }
  std::vector<Text> corpus;
  corpus.reserve(spec.texts);
  for (std::size_t i = 0; i < spec.texts; ++i) {
    std::vector<TokenId> tokens;
    TokenId t = TokenAt(UniformIndex(engine, vocab_size));
    for (std::size_t j = 0; j < spec.length; ++j) {
      tokens.push_back(t);
      const auto& next = successors[IndexOf(t)];
      t = Uniform01(engine) < spec.stickiness && !next.empty()
              ? next[UniformIndex(engine, next.size())]
              : TokenAt(UniformIndex(engine, vocab_size));
    }
    corpus.emplace_back(std::move(tokens));
  }
  return corpus;
}

std::unordered_map<TokenId, double> RandomWeights(std::size_t vocab_size,
                                                  double min, double max,
                                                  std::uint64_t seed) {
  std::mt19937_64 engine(seed);
  std::unordered_map<TokenId, double> w;
  for (std::size_t i = 0; i < vocab_size; ++i) {
    w[TokenAt(i)] = min + (max - min) * Uniform01(engine);
  }
  return w;
}

std::string FilterSpec::Slug() const {
  std::string out;
  for (char c : name) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u) || c == '.' || c == '-') {
      out += static_cast<char>(std::tolower(u));
    } else if (!out.empty() && out.back() != '_') {
      out += '_';
    }
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out.empty() ? "filter" : out;
}

ExperimentSpec ParseExperimentSpec(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw SpecError(std::string("syntax error: ") + e.what());
  }
  const Node root(doc, "");
  root.OnlyKeys({"description", "vocabulary", "predictor", "lcf", "filters",
                 "generation", "histogram", "output_dir"});

  ExperimentSpec spec;
  const Node vocab = root.At("vocabulary");
  vocab.OnlyKeys({"size", "eos_tokens", "display"});
  spec.vocab_size = vocab.At("size").Count();
  if (spec.vocab_size < 1) vocab.At("size").Fail("must be >= 1");
  if (vocab.Has("eos_tokens")) {
    const Text eos = ParseText(vocab.At("eos_tokens"), spec.vocab_size);
    spec.eos_tokens.insert(eos.tokens().begin(), eos.tokens().end());
  }
  if (vocab.Has("display")) {
    const Node d = vocab.At("display");
    if (!d.value().is_object()) d.Fail("expected an object mapping token id to string");
    for (const auto& [key, _] : d.value().items()) {
      spec.token_display[ParseTokenKey(d, key, spec.vocab_size)] = d.At(key).String();
    }
  }

  spec.predictor = ParsePredictor(root.At("predictor"), spec.vocab_size);
  spec.lcf = ParseLcf(root.At("lcf"), spec.vocab_size);

  const Node filters = root.At("filters");
  for (const Node& f : filters.Items()) spec.filters.push_back(ParseFilter(f));
  if (spec.filters.empty()) filters.Fail("at least one filter is required");
  for (std::size_t i = 0; i < spec.filters.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (spec.filters[i].Slug() == spec.filters[j].Slug()) {
        filters.At(i).Fail("duplicate filter name '" + spec.filters[i].name + "'");
      }
    }
  }

  const Node gen = root.At("generation");
  gen.OnlyKeys({"initial_text", "initial_prompt", "temperature", "k_top",
                "max_new_tokens", "max_scan", "stall_policy", "samples", "seed"});
  GenerationConfig& g = spec.generation;
  if (gen.Has("initial_text") && gen.Has("initial_prompt")) {
    gen.Fail("'initial_text' and 'initial_prompt' are mutually exclusive");
  }
  if (gen.Has("initial_text")) g.initial_text = ParseText(gen.At("initial_text"), spec.vocab_size);
  if (gen.Has("initial_prompt")) {
    if (spec.predictor.kind != PredictorSpec::Kind::kRemote) {
      gen.At("initial_prompt").Fail("requires a remote predictor (the bridge tokenizes it)");
    }
    spec.initial_prompt = gen.At("initial_prompt").String();
  }
  g.temperature = gen.RealOr("temperature", 1.0);
  if (!(g.temperature >= 0.0)) gen.At("temperature").Fail("must be >= 0");
  g.k_top = gen.CountOr("k_top", 30);
  if (g.k_top < 1 || g.k_top > spec.vocab_size) {
    gen.At("k_top").Fail("must lie in [1, vocabulary.size]");
  }
  if (spec.predictor.kind == PredictorSpec::Kind::kRemote &&
      g.k_top > spec.predictor.top_logits) {
    (gen.Has("k_top") ? gen.At("k_top") : gen).Fail("must not exceed predictor.top_logits (" +
                         std::to_string(spec.predictor.top_logits) + ")");
  }
  g.max_new_tokens = gen.CountOr("max_new_tokens", 30);
  if (g.max_new_tokens < 1) gen.At("max_new_tokens").Fail("must be >= 1");
  g.max_scan = gen.CountOr("max_scan", 0);
  if (g.max_scan != 0 && (g.max_scan < g.k_top || g.max_scan > spec.vocab_size)) {
    gen.At("max_scan").Fail("must lie in [k_top, vocabulary.size]");
  }
  const std::string policy = gen.Has("stall_policy") ? gen.At("stall_policy").String()
                                                     : "end_sequence";
  if (policy == "end_sequence") {
    g.stall_policy = StallPolicy::kEndSequence;
  } else if (policy == "abort") {
    g.stall_policy = StallPolicy::kAbort;
  } else {
    gen.At("stall_policy").Fail("must be 'end_sequence' or 'abort'");
  }
  spec.samples = gen.CountOr("samples", 100);
  if (spec.samples < 1) gen.At("samples").Fail("must be >= 1");
  g.seed = gen.Get<std::uint64_t>("seed", 0);

  if (root.Has("histogram")) {
    const Node h = root.At("histogram");
    h.OnlyKeys({"bins_h", "bins_dh", "h_range", "dh_range"});
    spec.histogram.bins_h = h.CountOr("bins_h", spec.histogram.bins_h);
    spec.histogram.bins_dh = h.CountOr("bins_dh", spec.histogram.bins_dh);
    auto range = [&](const char* key, double& lo, double& hi) {
      if (!h.Has(key)) return;
      const Node r = h.At(key);
      const auto items = r.Items();
      if (items.size() != 2) r.Fail("expected [min, max]");
      lo = items[0].Real();
      hi = items[1].Real();
    };
    range("h_range", spec.histogram.h_min, spec.histogram.h_max);
    range("dh_range", spec.histogram.dh_min, spec.histogram.dh_max);
    try {
      spec.histogram.Validate();
    } catch (const DomainError& e) {
      h.Fail(e.what());
    }
  }
  if (root.Has("output_dir")) spec.output_dir = root.At("output_dir").String();
  return spec;
}

ExperimentSpec LoadExperimentSpec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SpecError("cannot open spec file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return ParseExperimentSpec(ss.str());
  } catch (const SpecError& e) {
    throw SpecError(path.string() + ": " + e.what());
  }
}

std::vector<FilterReport> ExperimentResult::reports() const {
  std::vector<FilterReport> out;
  for (const auto& r : runs) out.push_back(r.report);
  return out;
}

LogitSourcePtr BuildPredictor(const ExperimentSpec& spec) {
  Vocabulary vocab(spec.vocab_size, spec.eos_tokens, spec.token_display);
  const PredictorSpec& p = spec.predictor;
  switch (p.kind) {
    case PredictorSpec::Kind::kTable:
      return MakeTablePredictor(std::move(vocab), p.table, p.default_logits);
    case PredictorSpec::Kind::kNgram:
      return MakeNgramPredictor(std::move(vocab), p.corpus, p.order, p.smoothing);
    case PredictorSpec::Kind::kRemote:
      return MakeRemotePredictor(ResolveBridgeEndpoint(p.endpoint), p.top_logits,
                                 std::move(vocab));
  }
  throw SpecError("unknown predictor kind");
}

LcfPtr BuildLcf(const ExperimentSpec& spec) {
  switch (spec.lcf.kind) {
    case LcfSpec::Kind::kNumeric:
      return MakeNumericLcf(spec.lcf.weights, spec.lcf.bias);
    case LcfSpec::Kind::kRemoteClassifier:
      return MakeRemoteClassifierLcf(ResolveBridgeEndpoint(spec.lcf.endpoint));
  }
  throw SpecError("unknown lcf kind");
}

namespace {

Text ResolveInitialText(const ExperimentSpec& spec) {
  if (!spec.initial_prompt) return spec.generation.initial_text;
  BridgeClient client(ResolveBridgeEndpoint(spec.predictor.endpoint));
  const std::string body =
      client.Post("/tokenize", json{{"text", *spec.initial_prompt}}.dump());
  json j;
  try {
    j = json::parse(body);
    return Text(j.at("tokens").get<std::vector<TokenId>>());
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("bad /tokenize response: ") + e.what());
  }
}

}  // namespace

ExperimentResult RunExperiment(const ExperimentSpec& spec,
                               const ExperimentOptions& options) {
  const LogitSourcePtr predictor = BuildPredictor(spec);
  const LcfPtr lcf = BuildLcf(spec);
  const std::filesystem::path out_dir = options.output_dir.value_or(spec.output_dir);
  std::filesystem::create_directories(out_dir);

  GenerationConfig base = spec.generation;
  base.initial_text = ResolveInitialText(spec);
  const std::uint64_t seed = options.seed.value_or(base.seed);

  ExperimentResult result;
  for (const FilterSpec& f : spec.filters) {
    GenerationConfig cfg = base;
    cfg.filter_kind = f.kind;
    cfg.alpha = f.alpha;

    FilterRun run;
    run.filter = f;
    run.outcomes = RunBatch(*predictor, *lcf, cfg, spec.samples, seed, options.parallelism);
    run.report = Summarize(f.name, run.outcomes, spec.histogram);
    result.failures += run.report.failures;

    const std::string stem = f.Slug();
    std::ostringstream traj;
    WriteTrajectoryCsv(traj, TrajectoryTable(run.outcomes));
    WriteFile(out_dir / (stem + "_trajectories.csv"), traj.str(), result.files);
    std::ostringstream fan;
    WriteFanCsv(fan, PredictedFan(run.outcomes));
    WriteFile(out_dir / (stem + "_fan.csv"), fan.str(), result.files);
    WriteFile(out_dir / (stem + "_histogram.json"),
              HistogramToJson(run.report.histogram) + "\n", result.files);
    WriteFile(out_dir / (stem + "_report.json"), ReportToJson(run.report) + "\n",
              result.files);
    result.runs.push_back(std::move(run));
  }
  const auto reports = result.reports();
  WriteFile(out_dir / "report.json", ReportsToJson(reports) + "\n", result.files);
  return result;
}

}  // namespace cbfllm
