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

#include "cbfllm/analysis.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace cbfllm {

using nlohmann::json;

namespace {

void AppendRows(const TrajectoryRecord& r, std::size_t sample_id,
                std::vector<TrajectoryRow>& rows) {
  for (const auto& s : r.steps) {
    rows.push_back({sample_id, s.k, s.token, s.h_value, s.delta_h,
                    s.decision.allowed_count(), s.decision.disallowed_count(),
                    r.termination});
  }
}

std::vector<std::string> SplitCsvLine(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::size_t ParseSize(const std::string& s) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DomainError("bad integer field '" + s + "'");
  }
  return v;
}

Termination ParseTermination(const std::string& s) {
  for (auto t : {Termination::kMaxTokens, Termination::kEos, Termination::kStalled}) {
    if (ToString(t) == s) return t;
  }
  throw DomainError("bad termination field '" + s + "'");
}

// Reads the header line and checks it matches `expected`.
void ExpectHeader(std::istream& in, const char* expected) {
  std::string header;
  if (!std::getline(in, header) || header != expected) {
    throw DomainError(std::string("expected CSV header '") + expected + "'");
  }
}

std::vector<double> Edges(double lo, double hi, std::size_t bins) {
  std::vector<double> e(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) {
    e[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  }
  e[bins] = hi;
  return e;
}

std::size_t BinOf(double v, double lo, double hi, std::size_t bins) {
  const double pos = std::floor((v - lo) / (hi - lo) * static_cast<double>(bins));
  if (pos < 0.0) return 0;
  if (pos >= static_cast<double>(bins)) return bins - 1;
  return static_cast<std::size_t>(pos);
}

json HistogramJson(const Histogram& h) {
  return json{{"h_edges", h.h_edges}, {"dh_edges", h.dh_edges}, {"counts", h.counts}};
}

json ReportJson(const FilterReport& r) {
  return json{{"filter", r.filter},
              {"runs", r.runs},
              {"failures", r.failures},
              {"mean_disallowed", r.mean_disallowed},
              {"stalls", r.stalls},
              {"per_run_disallowed", r.per_run_disallowed},
              {"histogram", HistogramJson(r.histogram)}};
}

Histogram HistogramFromJsonValue(const json& j) {
  Histogram h;
  h.h_edges = j.at("h_edges").get<std::vector<double>>();
  h.dh_edges = j.at("dh_edges").get<std::vector<double>>();
  h.counts = j.at("counts").get<std::vector<std::vector<std::uint64_t>>>();
  return h;
}

}  // namespace

std::vector<TrajectoryRow> TrajectoryTable(std::span<const TrajectoryRecord> records) {
  std::vector<TrajectoryRow> rows;
  for (std::size_t i = 0; i < records.size(); ++i) AppendRows(records[i], i, rows);
  return rows;
}

std::vector<TrajectoryRow> TrajectoryTable(std::span<const SampleOutcome> batch) {
  std::vector<TrajectoryRow> rows;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].record) AppendRows(*batch[i].record, i, rows);
  }
  return rows;
}

std::vector<FanRow> PredictedFan(const TrajectoryRecord& record,
                                 std::size_t sample_id) {
  std::vector<FanRow> rows;
  for (const FilterDecision& d : record.decisions()) {
    for (const Candidate& c : d.candidates) {
      rows.push_back({sample_id, d.step, c.token, c.h_next, c.allowed});
    }
  }
  return rows;
}

std::vector<FanRow> PredictedFan(std::span<const SampleOutcome> batch) {
  std::vector<FanRow> rows;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!batch[i].record) continue;
    auto part = PredictedFan(*batch[i].record, i);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  return rows;
}

std::string FormatDouble(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

double ParseDouble(const std::string& s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DomainError("bad real field '" + s + "'");
  }
  return v;
}

void WriteTrajectoryCsv(std::ostream& out, std::span<const TrajectoryRow> rows) {
  out << kTrajectoryCsvHeader << '\n';
  for (const auto& r : rows) {
    out << r.sample_id << ',' << r.k << ',' << r.token << ',' << FormatDouble(r.h)
        << ',' << FormatDouble(r.delta_h) << ',' << r.allowed_count << ','
        << r.disallowed_count << ',' << ToString(r.termination) << '\n';
  }
}

std::vector<TrajectoryRow> ReadTrajectoryCsv(std::istream& in) {
  ExpectHeader(in, kTrajectoryCsvHeader);
  std::vector<TrajectoryRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = SplitCsvLine(line);
    if (f.size() != 8) throw DomainError("trajectory row needs 8 fields: " + line);
    rows.push_back({ParseSize(f[0]), ParseSize(f[1]),
                    static_cast<TokenId>(ParseSize(f[2])), ParseDouble(f[3]),
                    ParseDouble(f[4]), ParseSize(f[5]), ParseSize(f[6]),
                    ParseTermination(f[7])});
  }
  return rows;
}

void WriteFanCsv(std::ostream& out, std::span<const FanRow> rows) {
  out << kFanCsvHeader << '\n';
  for (const auto& r : rows) {
    out << r.sample_id << ',' << r.k << ',' << r.token << ','
        << FormatDouble(r.h_next) << ',' << (r.allowed ? 1 : 0) << '\n';
  }
}

std::vector<FanRow> ReadFanCsv(std::istream& in) {
  ExpectHeader(in, kFanCsvHeader);
  std::vector<FanRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = SplitCsvLine(line);
    if (f.size() != 5) throw DomainError("fan row needs 5 fields: " + line);
    rows.push_back({ParseSize(f[0]), ParseSize(f[1]),
                    static_cast<TokenId>(ParseSize(f[2])), ParseDouble(f[3]),
                    ParseSize(f[4]) != 0});
  }
  return rows;
}

void HistogramSpec::Validate() const {
  if (bins_h < 1 || bins_dh < 1) throw DomainError("histogram bins must be >= 1");
  if (!(h_max > h_min) || !(dh_max > dh_min)) {
    throw DomainError("histogram ranges must be non-degenerate");
  }
}

std::uint64_t Histogram::Total() const {
  std::uint64_t total = 0;
  for (const auto& row : counts) {
    for (auto c : row) total += c;
  }
  return total;
}

Histogram AttractorHistogram(std::span<const TrajectoryRecord> records,
                             const HistogramSpec& spec) {
  spec.Validate();
  Histogram out;
  out.h_edges = Edges(spec.h_min, spec.h_max, spec.bins_h);
  out.dh_edges = Edges(spec.dh_min, spec.dh_max, spec.bins_dh);
  out.counts.assign(spec.bins_h, std::vector<std::uint64_t>(spec.bins_dh, 0));
  for (const auto& r : records) {
    for (const FilterDecision& d : r.decisions()) {
      for (const Candidate& c : d.candidates) {
        const double dh = c.h_next - d.h_current;
        if (std::isnan(c.h_next) || std::isnan(dh)) continue;
        ++out.counts[BinOf(c.h_next, spec.h_min, spec.h_max, spec.bins_h)]
                    [BinOf(dh, spec.dh_min, spec.dh_max, spec.bins_dh)];
      }
    }
  }
  return out;
}

std::size_t TotalScannedCandidates(std::span<const TrajectoryRecord> records) {
  std::size_t total = 0;
  for (const auto& r : records) {
    for (const FilterDecision& d : r.decisions()) total += d.candidates.size();
  }
  return total;
}

FilterReport Summarize(const std::string& filter,
                       std::span<const SampleOutcome> batch,
                       const HistogramSpec& spec) {
  FilterReport report;
  report.filter = filter;
  std::vector<TrajectoryRecord> records;
  std::size_t total_disallowed = 0;
  for (const auto& s : batch) {
    if (!s.record) {
      ++report.failures;
      continue;
    }
    const std::size_t n = s.record->disallowed_count();
    report.per_run_disallowed.push_back(n);
    total_disallowed += n;
    if (s.record->termination == Termination::kStalled) ++report.stalls;
    records.push_back(*s.record);
  }
  report.runs = records.size();
  report.mean_disallowed =
      report.runs == 0 ? 0.0
                       : static_cast<double>(total_disallowed) /
                             static_cast<double>(report.runs);
  report.histogram = AttractorHistogram(records, spec);
  return report;
}

std::string HistogramToJson(const Histogram& histogram) {
  return HistogramJson(histogram).dump();
}

Histogram HistogramFromJson(const std::string& text) {
  return HistogramFromJsonValue(json::parse(text));
}

std::string ReportToJson(const FilterReport& report) {
  return ReportJson(report).dump();
}

std::string ReportsToJson(std::span<const FilterReport> reports) {
  json arr = json::array();
  for (const auto& r : reports) arr.push_back(ReportJson(r));
  return arr.dump();
}

FilterReport ReportFromJson(const std::string& text) {
  const json j = json::parse(text);
  FilterReport r;
  r.filter = j.at("filter").get<std::string>();
  r.runs = j.at("runs").get<std::size_t>();
  r.failures = j.value("failures", std::size_t{0});
  r.mean_disallowed = j.at("mean_disallowed").get<double>();
  r.stalls = j.at("stalls").get<std::size_t>();
  r.per_run_disallowed = j.value("per_run_disallowed", std::vector<std::size_t>{});
  r.histogram = HistogramFromJsonValue(j.at("histogram"));
  return r;
}

std::string FormatSummaryTable(std::span<const FilterReport> reports) {
  std::ostringstream out;
  out << std::left << std::setw(20) << "filter" << std::right << std::setw(8)
      << "runs" << std::setw(18) << "mean disallowed" << std::setw(8) << "stalls"
      << std::setw(10) << "failures" << '\n';
  for (const auto& r : reports) {
    char mean[32];
    std::snprintf(mean, sizeof(mean), "%.2f", r.mean_disallowed);
    out << std::left << std::setw(20) << r.filter << std::right << std::setw(8)
        << r.runs << std::setw(18) << mean << std::setw(8) << r.stalls
        << std::setw(10) << r.failures << '\n';
  }
  return out.str();
}

}  // namespace cbfllm
