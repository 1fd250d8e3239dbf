// Copyright 2026 The septic_rl Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "septic_rl/trajectory_csv.h"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <string_view>

#include "septic_rl/common.h"

namespace septic_rl {
namespace {

constexpr int kColumns = 2 + kNumFeatures + 3;

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

bool parse_int(std::string_view s, int& out) {
  s = trim(s);
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return !s.empty() && res.ec == std::errc() && res.ptr == s.data() + s.size();
}

}  // namespace

std::vector<std::string> trajectory_csv_header() {
  std::vector<std::string> h{"patient_id", "t"};
  for (const auto& f : features::kSchema) h.emplace_back(f.column);
  h.emplace_back("iv_dose_raw");
  h.emplace_back("vp_dose_raw");
  h.emplace_back("outcome");
  return h;
}

std::vector<RawRecord> read_trajectory_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty CSV: header row required");
  std::string_view header = line;
  if (header.substr(0, 3) == "\xEF\xBB\xBF") header.remove_prefix(3);
  const auto cols = split_commas(header);
  const auto expected = trajectory_csv_header();
  if (cols.size() != expected.size())
    throw ValidationError("CSV header has " + std::to_string(cols.size()) +
                          " columns, expected " + std::to_string(expected.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (trim(cols[i]) != expected[i])
      throw ValidationError("CSV header column " + std::to_string(i + 1) + " is '" +
                            std::string(trim(cols[i])) + "', expected '" + expected[i] + "'");
  }

  std::vector<RawRecord> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_commas(line);
    RawRecord r;
    r.line = line_no;
    r.patient_id = std::string(trim(fields[0]));
    if (r.patient_id.empty())
      throw ValidationError("missing patient_id on line " + std::to_string(line_no));
    if (static_cast<int>(fields.size()) != kColumns) {
      r.error = "wrong feature count: " + std::to_string(fields.size()) + " columns";
      rows.push_back(std::move(r));
      continue;
    }
    if (!parse_int(fields[1], r.t)) {
      r.error = "unparseable timestep";
    }
    for (int f = 0; f < kNumFeatures && r.error.empty(); ++f) {
      double v;
      if (!parse_double(fields[2 + f], v)) {
        r.error = "missing or unparseable value for " + std::string(features::kSchema[f].column);
      } else {
        r.features[f] = v;
      }
    }
    if (r.error.empty() && (!parse_double(fields[2 + kNumFeatures], r.iv_dose) ||
                            !parse_double(fields[3 + kNumFeatures], r.vp_dose))) {
      r.error = "unparseable dose";
    }
    const auto outcome = trim(fields[4 + kNumFeatures]);
    if (outcome == "survived") {
      r.outcome = Outcome::kSurvived;
    } else if (outcome == "died") {
      r.outcome = Outcome::kDied;
    } else if (!outcome.empty() && r.error.empty()) {
      r.error = "invalid outcome '" + std::string(outcome) + "'";
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<RawRecord> read_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open data file: " + path.string());
  return read_trajectory_csv(in);
}

void write_trajectory_csv(std::ostream& out, std::span<const RawRecord> rows) {
  const auto header = trajectory_csv_header();
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto& r : rows) {
    out << r.patient_id << ',' << r.t;
    for (int f = 0; f < kNumFeatures; ++f) out << ',' << format_double(r.features[f]);
    out << ',' << format_double(r.iv_dose) << ',' << format_double(r.vp_dose) << ',';
    if (r.outcome) out << outcome_name(*r.outcome);
    out << '\n';
  }
}

}  // namespace septic_rl
