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

#include <cstdint>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cbfllm/analysis.h"
#include "cbfllm/constraint.h"
#include "cbfllm/core.h"
#include "cbfllm/errors.h"
#include "cbfllm/experiment.h"
#include "cbfllm/filter.h"
#include "cbfllm/pipeline.h"
#include "cbfllm/predictor.h"
#include "cbfllm/remote.h"

namespace py = pybind11;

namespace cbfllm {
namespace {

using Tokens = std::vector<TokenId>;

Tokens ToTokens(const Text& x) { return {x.tokens().begin(), x.tokens().end()}; }
std::vector<double> ToList(const ProbabilityVector& p) {
  return {p.values().begin(), p.values().end()};
}

// Calls into Python from any thread; Python errors surface as cbfllm errors
// so batch workers can record them without holding the GIL.
template <typename R, typename... Args>
R CallPython(const py::function& f, Args&&... args) {
  py::gil_scoped_acquire gil;
  try {
    return f(std::forward<Args>(args)...).template cast<R>();
  } catch (py::error_already_set& e) {
    throw Error(e.what());
  } catch (const py::cast_error& e) {
    throw ContractError(std::string("callback returned the wrong type: ") + e.what());
  }
}

class PyLogitSource final : public LogitSource {
 public:
  PyLogitSource(Vocabulary vocab, py::function f) : vocab_(std::move(vocab)), f_(std::move(f)) {}
  ~PyLogitSource() override {
    py::gil_scoped_acquire gil;
    f_ = py::function();
  }

  std::vector<double> Evaluate(const Text& x) const override {
    return CallPython<std::vector<double>>(f_, ToTokens(x));
  }
  const Vocabulary& vocabulary() const override { return vocab_; }

 private:
  Vocabulary vocab_;
  py::function f_;
};

class PyLcf final : public LanguageConstraintFunction {
 public:
  explicit PyLcf(py::function f) : f_(std::move(f)) {}
  ~PyLcf() override {
    py::gil_scoped_acquire gil;
    f_ = py::function();
  }

  double Evaluate(const Text& x) const override {
    try {
      return CallPython<double>(f_, ToTokens(x));
    } catch (const Error& e) {
      throw ConstraintEvaluationError(e.what());
    }
  }

 private:
  py::function f_;
};

// Keeps the Python callable alive with correct GIL handling on release.
std::shared_ptr<py::function> HoldCallable(py::function f) {
  return std::shared_ptr<py::function>(new py::function(std::move(f)), [](py::function* p) {
    py::gil_scoped_acquire gil;
    delete p;
  });
}

py::tuple FilterOut(const FilterResult& r) { return py::make_tuple(ToList(r.filtered), r.decision); }

ProbabilityVector ToVector(const std::vector<double>& p) { return ProbabilityVector(p); }

std::vector<TrajectoryRecord> RecordsOf(const std::vector<SampleOutcome>& batch) {
  std::vector<TrajectoryRecord> out;
  for (const auto& o : batch) {
    if (o.record) out.push_back(*o.record);
  }
  return out;
}

}  // namespace
}  // namespace cbfllm

PYBIND11_MODULE(_core, m) {
  using namespace cbfllm;
  m.doc() = "Control-barrier-function safety filter for token-level text generation";

  auto& error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DomainError>(m, "DomainError", error.ptr());
  py::register_exception<ContractError>(m, "ContractError", error.ptr());
  py::register_exception<NormalizationError>(m, "NormalizationError", error.ptr());
  py::register_exception<ConstraintEvaluationError>(m, "ConstraintEvaluationError", error.ptr());
  py::register_exception<RemoteError>(m, "RemoteError", error.ptr());
  py::register_exception<ProtocolError>(m, "ProtocolError", error.ptr());
  py::register_exception<SpecError>(m, "SpecError", error.ptr());
  py::register_exception<FilterStalled>(m, "FilterStalled", error.ptr());

  // core
  py::class_<Vocabulary>(m, "Vocabulary")
      .def(py::init<std::size_t, std::set<TokenId>, std::map<TokenId, std::string>>(),
           py::arg("size"), py::arg("eos_tokens") = std::set<TokenId>{},
           py::arg("token_display") = std::map<TokenId, std::string>{})
      .def_property_readonly("size", &Vocabulary::size)
      .def_property_readonly("eos_tokens", &Vocabulary::eos_tokens)
      .def("display", &Vocabulary::Display)
      .def("__len__", &Vocabulary::size);

  m.def("concat", [](const Tokens& x, TokenId t, std::size_t vocab_size) {
    return ToTokens(Concat(Text(x), t, vocab_size));
  }, py::arg("x"), py::arg("token"), py::arg("vocab_size"));
  m.def("normalize", [](const std::vector<double>& p) { return ToList(Normalize(ToVector(p))); },
        py::arg("p"));

  // predictor
  py::class_<LogitSource, std::shared_ptr<LogitSource>>(m, "LogitSource")
      .def("evaluate", [](const LogitSource& s, const Tokens& x) { return s.Evaluate(Text(x)); },
           py::arg("x"), py::call_guard<py::gil_scoped_release>())
      .def_property_readonly("vocabulary", &LogitSource::vocabulary,
                             py::return_value_policy::reference_internal);

  m.def("softmax", [](const std::vector<double>& logits, double temperature) {
    return ToList(SoftmaxWithTemperature(logits, temperature));
  }, py::arg("logits"), py::arg("temperature") = 1.0);
  m.def("predict", [](const LogitSource& s, const Tokens& x, double temperature) {
    return ToList(Predict(s, Text(x), {temperature}));
  }, py::arg("source"), py::arg("x"), py::arg("temperature") = 1.0,
     py::call_guard<py::gil_scoped_release>());
  m.def("make_table_predictor",
        [](const Vocabulary& vocab, const std::vector<std::pair<Tokens, std::vector<double>>>& table,
           const std::vector<double>& default_logits) {
          std::vector<SuffixEntry> entries;
          for (const auto& [suffix, logits] : table) entries.push_back({suffix, logits});
          return std::const_pointer_cast<LogitSource>(
              MakeTablePredictor(vocab, std::move(entries), default_logits));
        },
        py::arg("vocabulary"), py::arg("table"), py::arg("default_logits"));
  m.def("make_ngram_predictor",
        [](const Vocabulary& vocab, const std::vector<Tokens>& corpus, int order, double k) {
          std::vector<Text> texts;
          for (const auto& t : corpus) texts.emplace_back(t);
          return std::const_pointer_cast<LogitSource>(MakeNgramPredictor(vocab, texts, order, k));
        },
        py::arg("vocabulary"), py::arg("corpus"), py::arg("order"), py::arg("smoothing"));
  m.def("make_callable_predictor",
        [](const Vocabulary& vocab, py::function f) {
          return std::shared_ptr<LogitSource>(std::make_shared<PyLogitSource>(vocab, std::move(f)));
        },
        py::arg("vocabulary"), py::arg("logits"),
        "Wraps a Python callable mapping a token list to a logit list.");
  m.def("make_remote_predictor",
        [](const std::string& endpoint, std::size_t top_logits) {
          return std::const_pointer_cast<LogitSource>(
              MakeRemotePredictor(ResolveBridgeEndpoint(endpoint), top_logits));
        },
        py::arg("endpoint"), py::arg("top_logits") = kDefaultTopLogits);

  // constraint
  py::class_<LanguageConstraintFunction, std::shared_ptr<LanguageConstraintFunction>>(
      m, "LanguageConstraintFunction")
      .def("evaluate",
           [](const LanguageConstraintFunction& h, const Tokens& x) { return h.Evaluate(Text(x)); },
           py::arg("x"), py::call_guard<py::gil_scoped_release>())
      .def("__call__",
           [](const LanguageConstraintFunction& h, const Tokens& x) { return h.Evaluate(Text(x)); },
           py::arg("x"), py::call_guard<py::gil_scoped_release>());

  m.def("sentiment_lcf", [](double neg, double neu, double pos) {
    return SentimentLcf(ClassScores(neg, neu, pos));
  }, py::arg("negative"), py::arg("neutral"), py::arg("positive"));
  m.def("make_numeric_lcf",
        [](std::unordered_map<TokenId, double> weights, double bias) {
          return std::const_pointer_cast<LanguageConstraintFunction>(
              MakeNumericLcf(std::move(weights), bias));
        },
        py::arg("weights"), py::arg("bias") = 0.0);
  m.def("make_callable_lcf",
        [](py::function f) {
          return std::shared_ptr<LanguageConstraintFunction>(std::make_shared<PyLcf>(std::move(f)));
        },
        py::arg("h"), "Wraps a Python callable mapping a token list to a real.");
  m.def("make_classifier_lcf",
        [](py::function scorer) {
          auto held = HoldCallable(std::move(scorer));
          return std::const_pointer_cast<LanguageConstraintFunction>(
              MakeClassifierLcf([held](const Text& x) {
                const auto s = CallPython<std::tuple<double, double, double>>(*held, ToTokens(x));
                return ClassScores(std::get<0>(s), std::get<1>(s), std::get<2>(s));
              }));
        },
        py::arg("scorer"),
        "Composes a (negative, neutral, positive) scorer with the sentiment L-CF.");
  m.def("make_remote_classifier_lcf",
        [](const std::string& endpoint) {
          return std::const_pointer_cast<LanguageConstraintFunction>(
              MakeRemoteClassifierLcf(ResolveBridgeEndpoint(endpoint)));
        },
        py::arg("endpoint"));

  // filter
  py::class_<Candidate>(m, "Candidate")
      .def_readonly("token", &Candidate::token)
      .def_readonly("prior", &Candidate::prior)
      .def_readonly("h_next", &Candidate::h_next)
      .def_readonly("allowed", &Candidate::allowed)
      .def("__repr__", [](const Candidate& c) {
        std::ostringstream s;
        s << "Candidate(token=" << c.token << ", prior=" << c.prior << ", h_next=" << c.h_next
          << ", allowed=" << (c.allowed ? "True" : "False") << ")";
        return s.str();
      });
  py::class_<FilterDecision>(m, "FilterDecision")
      .def_readonly("step", &FilterDecision::step)
      .def_readonly("candidates", &FilterDecision::candidates)
      .def_readonly("h_current", &FilterDecision::h_current)
      .def_readonly("scanned", &FilterDecision::scanned)
      .def_property_readonly("allowed_count", &FilterDecision::allowed_count)
      .def_property_readonly("disallowed_count", &FilterDecision::disallowed_count)
      .def("__eq__", &FilterDecision::operator==);

  m.def("satisfies_barrier", &SatisfiesBarrier, py::arg("h_next"), py::arg("h_current"),
        py::arg("alpha"));
  m.def("cbf_filter",
        [](const std::vector<double>& p, const Tokens& x, const LanguageConstraintFunction& h,
           double alpha, std::size_t k_top, std::size_t max_scan) {
          FilterResult r;
          {
            py::gil_scoped_release release;
            r = CbfFilter(ToVector(p), Text(x), h, {.alpha = alpha, .k_top = k_top,
                                                    .max_scan = max_scan});
          }
          return FilterOut(r);
        },
        py::arg("p"), py::arg("x"), py::arg("h"), py::arg("alpha"), py::arg("k_top"),
        py::arg("max_scan") = 0, "Returns (filtered, decision).");
  m.def("blacklist_filter",
        [](const std::vector<double>& p, const Tokens& x, const LanguageConstraintFunction& h,
           std::size_t k_top, std::size_t max_scan) {
          FilterResult r;
          {
            py::gil_scoped_release release;
            r = BlacklistFilter(ToVector(p), Text(x), h, k_top, max_scan);
          }
          return FilterOut(r);
        },
        py::arg("p"), py::arg("x"), py::arg("h"), py::arg("k_top"), py::arg("max_scan") = 0);
  m.def("nocontrol_filter",
        [](const std::vector<double>& p, std::size_t k_top) {
          return FilterOut(NoControlFilter(ToVector(p), k_top));
        },
        py::arg("p"), py::arg("k_top"));
  m.def("count_disallowed",
        [](const std::vector<FilterDecision>& d) { return CountDisallowed(d); },
        py::arg("decisions"));

  // pipeline
  py::enum_<FilterKind>(m, "FilterKind")
      .value("NO_CONTROL", FilterKind::kNoControl)
      .value("BLACKLIST", FilterKind::kBlacklist)
      .value("CBF", FilterKind::kCbf);
  py::enum_<StallPolicy>(m, "StallPolicy")
      .value("END_SEQUENCE", StallPolicy::kEndSequence)
      .value("ABORT", StallPolicy::kAbort);
  py::enum_<Termination>(m, "Termination")
      .value("MAX_TOKENS", Termination::kMaxTokens)
      .value("EOS", Termination::kEos)
      .value("STALLED", Termination::kStalled);

  py::class_<GenerationConfig>(m, "GenerationConfig")
      .def(py::init([](const Tokens& initial_text, double temperature, std::size_t k_top,
                       double alpha, FilterKind filter_kind, std::size_t max_new_tokens,
                       std::uint64_t seed, StallPolicy stall_policy, std::size_t max_scan) {
             GenerationConfig c;
             c.initial_text = Text(initial_text);
             c.temperature = temperature;
             c.k_top = k_top;
             c.alpha = alpha;
             c.filter_kind = filter_kind;
             c.max_new_tokens = max_new_tokens;
             c.seed = seed;
             c.stall_policy = stall_policy;
             c.max_scan = max_scan;
             return c;
           }),
           py::kw_only(), py::arg("initial_text"), py::arg("temperature") = 1.0,
           py::arg("k_top") = 30, py::arg("alpha") = 1.0, py::arg("filter_kind") = FilterKind::kCbf,
           py::arg("max_new_tokens") = 30, py::arg("seed") = 0,
           py::arg("stall_policy") = StallPolicy::kEndSequence, py::arg("max_scan") = 0)
      .def_property("initial_text", [](const GenerationConfig& c) { return ToTokens(c.initial_text); },
                    [](GenerationConfig& c, const Tokens& x) { c.initial_text = Text(x); })
      .def_readwrite("temperature", &GenerationConfig::temperature)
      .def_readwrite("k_top", &GenerationConfig::k_top)
      .def_readwrite("alpha", &GenerationConfig::alpha)
      .def_readwrite("filter_kind", &GenerationConfig::filter_kind)
      .def_readwrite("max_new_tokens", &GenerationConfig::max_new_tokens)
      .def_readwrite("seed", &GenerationConfig::seed)
      .def_readwrite("stall_policy", &GenerationConfig::stall_policy)
      .def_readwrite("max_scan", &GenerationConfig::max_scan);

  py::class_<TrajectoryStep>(m, "TrajectoryStep")
      .def_readonly("k", &TrajectoryStep::k)
      .def_readonly("token", &TrajectoryStep::token)
      .def_readonly("h_value", &TrajectoryStep::h_value)
      .def_readonly("delta_h", &TrajectoryStep::delta_h)
      .def_readonly("decision", &TrajectoryStep::decision);
  py::class_<TrajectoryRecord>(m, "TrajectoryRecord")
      .def_readonly("h_initial", &TrajectoryRecord::h_initial)
      .def_readonly("steps", &TrajectoryRecord::steps)
      .def_property_readonly("final_text",
                             [](const TrajectoryRecord& r) { return ToTokens(r.final_text); })
      .def_readonly("termination", &TrajectoryRecord::termination)
      .def_readonly("stalled_decision", &TrajectoryRecord::stalled_decision)
      .def_readonly("started_unsafe", &TrajectoryRecord::started_unsafe)
      .def("decisions", &TrajectoryRecord::decisions)
      .def_property_readonly("disallowed_count", &TrajectoryRecord::disallowed_count)
      .def("__eq__", &TrajectoryRecord::operator==);
  py::class_<SampleOutcome>(m, "SampleOutcome")
      .def_readonly("seed", &SampleOutcome::seed)
      .def_readonly("record", &SampleOutcome::record)
      .def_readonly("error", &SampleOutcome::error)
      .def_property_readonly("ok", &SampleOutcome::ok);

  m.def("generate", &Generate, py::arg("predictor"), py::arg("lcf"), py::arg("config"),
        py::call_guard<py::gil_scoped_release>());
  m.def("run_batch", &RunBatch, py::arg("predictor"), py::arg("lcf"), py::arg("config"),
        py::arg("n_samples"), py::arg("base_seed"), py::arg("parallelism") = 0,
        py::call_guard<py::gil_scoped_release>());

  // analysis
  py::class_<HistogramSpec>(m, "HistogramSpec")
      .def(py::init([](std::pair<double, double> h_range, std::pair<double, double> dh_range,
                       std::size_t bins_h, std::size_t bins_dh) {
             HistogramSpec s{h_range.first, h_range.second, dh_range.first, dh_range.second,
                             bins_h, bins_dh};
             s.Validate();
             return s;
           }),
           py::arg("h_range") = std::pair{-1.0, 1.0}, py::arg("dh_range") = std::pair{-1.0, 1.0},
           py::arg("bins_h") = 61, py::arg("bins_dh") = 61)
      .def_readonly("bins_h", &HistogramSpec::bins_h)
      .def_readonly("bins_dh", &HistogramSpec::bins_dh);
  py::class_<Histogram>(m, "Histogram")
      .def_readonly("h_edges", &Histogram::h_edges)
      .def_readonly("dh_edges", &Histogram::dh_edges)
      .def_readonly("counts", &Histogram::counts)
      .def_property_readonly("total", &Histogram::Total);
  py::class_<FilterReport>(m, "FilterReport")
      .def_readonly("filter", &FilterReport::filter)
      .def_readonly("runs", &FilterReport::runs)
      .def_readonly("failures", &FilterReport::failures)
      .def_readonly("stalls", &FilterReport::stalls)
      .def_readonly("mean_disallowed", &FilterReport::mean_disallowed)
      .def_readonly("per_run_disallowed", &FilterReport::per_run_disallowed)
      .def_readonly("histogram", &FilterReport::histogram)
      .def("to_json", [](const FilterReport& r) { return ReportToJson(r); });

  m.def("attractor_histogram",
        [](const std::vector<TrajectoryRecord>& records, const HistogramSpec& spec) {
          return AttractorHistogram(records, spec);
        },
        py::arg("records"), py::arg("spec") = HistogramSpec{});
  m.def("total_scanned_candidates",
        [](const std::vector<TrajectoryRecord>& records) { return TotalScannedCandidates(records); },
        py::arg("records"));
  m.def("summarize",
        [](const std::string& name, const std::vector<SampleOutcome>& batch,
           const HistogramSpec& spec) { return Summarize(name, batch, spec); },
        py::arg("filter"), py::arg("batch"), py::arg("spec") = HistogramSpec{});
  m.def("trajectory_csv",
        [](const std::vector<SampleOutcome>& batch) {
          std::ostringstream out;
          WriteTrajectoryCsv(out, TrajectoryTable(batch));
          return out.str();
        },
        py::arg("batch"), "Trajectory table of a batch as CSV text.");
  m.def("fan_csv",
        [](const std::vector<SampleOutcome>& batch) {
          std::ostringstream out;
          WriteFanCsv(out, PredictedFan(batch));
          return out.str();
        },
        py::arg("batch"), "Every scanned candidate of a batch as CSV text.");
  m.def("successful_records", &RecordsOf, py::arg("batch"));

  // experiment
  m.def("run_experiment",
        [](const std::filesystem::path& spec_path, std::optional<std::filesystem::path> output_dir,
           std::optional<std::uint64_t> seed, std::size_t parallelism) {
          const ExperimentSpec spec = LoadExperimentSpec(spec_path);
          py::gil_scoped_release release;
          const ExperimentResult r = RunExperiment(
              spec, {.output_dir = output_dir, .seed = seed, .parallelism = parallelism});
          return r.reports();
        },
        py::arg("spec_path"), py::arg("output_dir") = py::none(), py::arg("seed") = py::none(),
        py::arg("parallelism") = 0, "Runs an experiment spec and returns one report per filter.");

  m.attr("__version__") = "0.1.0";
}
