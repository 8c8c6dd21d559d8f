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
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "cbfllm/pipeline.h"

namespace cbfllm {

// One row per (sample, accepted step).
struct TrajectoryRow {
  std::size_t sample_id = 0;
  std::size_t k = 0;
  TokenId token = 0;
  double h = 0.0;
  double delta_h = 0.0;
  std::size_t allowed_count = 0;
  std::size_t disallowed_count = 0;
  Termination termination = Termination::kMaxTokens;

  bool operator==(const TrajectoryRow&) const = default;
};

// One row per (step, examined candidate).
struct FanRow {
  std::size_t sample_id = 0;
  std::size_t k = 0;
  TokenId token = 0;
  double h_next = 0.0;
  bool allowed = false;

  bool operator==(const FanRow&) const = default;
};

inline constexpr const char* kTrajectoryCsvHeader =
    "sample_id,k,token,h,delta_h,allowed_count,disallowed_count,termination";
inline constexpr const char* kFanCsvHeader = "sample_id,k,token,h_next,allowed";

// Sample ids are positions in `records`.
std::vector<TrajectoryRow> TrajectoryTable(std::span<const TrajectoryRecord> records);
// Sample ids are batch indices; failed samples contribute no rows.
std::vector<TrajectoryRow> TrajectoryTable(std::span<const SampleOutcome> batch);

// Every candidate the filter examined, including those of a stalled step.
// Records without candidate lists yield no rows.
std::vector<FanRow> PredictedFan(const TrajectoryRecord& record,
                                 std::size_t sample_id = 0);
std::vector<FanRow> PredictedFan(std::span<const SampleOutcome> batch);

void WriteTrajectoryCsv(std::ostream& out, std::span<const TrajectoryRow> rows);
std::vector<TrajectoryRow> ReadTrajectoryCsv(std::istream& in);
void WriteFanCsv(std::ostream& out, std::span<const FanRow> rows);
std::vector<FanRow> ReadFanCsv(std::istream& in);

// Shortest decimal form that parses back to the identical double.
std::string FormatDouble(double v);
double ParseDouble(const std::string& s);

struct HistogramSpec {
  double h_min = -1.0;
  double h_max = 1.0;
  double dh_min = -1.0;
  double dh_max = 1.0;
  // Odd bin counts center a bin on zero.
  std::size_t bins_h = 61;
  std::size_t bins_dh = 61;

  void Validate() const;
};

struct Histogram {
  std::vector<double> h_edges;
  std::vector<double> dh_edges;
  std::vector<std::vector<std::uint64_t>> counts;  // [h bin][dh bin]

  std::uint64_t Total() const;
  bool operator==(const Histogram&) const = default;
};

// 2-D counts of (h_next, h_next - h_current) over every scanned candidate of
// every record. Out-of-range points land in the edge bins. Candidates without
// an h value (NaN) are skipped.
Histogram AttractorHistogram(std::span<const TrajectoryRecord> records,
                             const HistogramSpec& spec);

std::size_t TotalScannedCandidates(std::span<const TrajectoryRecord> records);

struct FilterReport {
  std::string filter;
  std::size_t runs = 0;      // successful runs
  std::size_t failures = 0;  // runs that raised an error
  std::size_t stalls = 0;    // successful runs that ended in a stall
  double mean_disallowed = 0.0;
  std::vector<std::size_t> per_run_disallowed;
  Histogram histogram;

  bool operator==(const FilterReport&) const = default;
};

FilterReport Summarize(const std::string& filter,
                       std::span<const SampleOutcome> batch,
                       const HistogramSpec& spec = {});

std::string HistogramToJson(const Histogram& histogram);
Histogram HistogramFromJson(const std::string& json);
// {filter, runs, failures, mean_disallowed, stalls, per_run_disallowed,
//  histogram: {h_edges, dh_edges, counts}}
std::string ReportToJson(const FilterReport& report);
std::string ReportsToJson(std::span<const FilterReport> reports);
FilterReport ReportFromJson(const std::string& json);

// Plain-text summary, one row per filter.
std::string FormatSummaryTable(std::span<const FilterReport> reports);

}  // namespace cbfllm
