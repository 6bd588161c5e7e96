#include "mmfuse/expcli/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <tuple>

#include <boost/math/distributions/students_t.hpp>

#include "mmfuse/trainer/run.hpp"

namespace mmfuse::expcli {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<ScoreSeries> read_score_series(const fs::path& run_dir, const std::string& run_id) {
  const fs::path file = run_dir / trainer::kMetricsFile;
  std::ifstream in(file);
  if (!in) throw ReportError("cannot read " + file.string());
  using Key = std::tuple<std::string, std::string, std::string>;
  std::map<Key, std::map<std::size_t, double>> by_key;
  std::vector<Key> order;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      Key k{j.at("split").get<std::string>(), j.at("dataset").get<std::string>(), j.at("task").get<std::string>()};
      auto [it, fresh] = by_key.try_emplace(k);
      if (fresh) order.push_back(k);
      it->second[j.at("epoch").get<std::size_t>()] = j.at("value").get<double>();
    } catch (const json::exception& e) {
      throw ReportError(file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  std::vector<ScoreSeries> out;
  for (const Key& k : order) {
    const auto& epochs = by_key[k];
    ScoreSeries s{run_id, std::get<0>(k), std::get<1>(k), std::get<2>(k), {}};
    for (const auto& [epoch, value] : epochs) {
      if (epoch != s.scores.size() + 1) {
        throw ReportError(file.string() + ": " + s.split + "/" + s.dataset + "/" + s.task + " lacks epoch " +
                          std::to_string(s.scores.size() + 1));
      }
      s.scores.push_back(value);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<RunScores> load_complete_runs(const std::vector<std::pair<std::string, fs::path>>& runs) {
  std::vector<std::string> missing;
  for (const auto& [id, dir] : runs) {
    if (!fs::exists(dir / trainer::kMetricsFile) || fs::exists(dir / trainer::kIncompleteMarker)) {
      missing.push_back(id + " (" + dir.string() + ")");
    }
  }
  if (!missing.empty()) {
    std::string msg = "incomplete runs:";
    for (const auto& m : missing) msg += " " + m;
    throw ReportError(msg);
  }
  std::vector<RunScores> out;
  for (const auto& [id, dir] : runs) out.push_back({id, read_score_series(dir, id)});
  return out;
}

RoundTable render_round_table(const std::vector<RunScores>& runs, const std::string& dataset,
                              const std::vector<std::string>& tasks) {
  RoundTable t;
  for (const auto& r : runs) t.columns.push_back(r.id);
  const std::pair<const char*, const char*> splits[] = {{"Test", "test"}, {"Dev", "dev"}, {"Train", "train"}};
  for (const auto& [label, split] : splits) {
    for (const auto& task : tasks) {
      t.rows.emplace_back(label, task);
      auto& row = t.cells.emplace_back();
      for (const auto& r : runs) {
        std::optional<double> cell;
        for (const auto& s : r.series) {
          if (s.split == split && s.dataset == dataset && s.task == task && !s.scores.empty()) {
            cell = *std::max_element(s.scores.begin(), s.scores.end());
          }
        }
        row.push_back(cell);
      }
    }
  }
  return t;
}

namespace {

std::string cell_text(const std::optional<double>& v) {
  if (!v) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << *v;
  return s.str();
}

}  // namespace

std::string RoundTable::text() const {
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{"Split", "Task"};
  header.insert(header.end(), columns.begin(), columns.end());
  grid.push_back(header);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::vector<std::string> line{rows[r].first, rows[r].second};
    for (const auto& c : cells[r]) line.push_back(cell_text(c));
    grid.push_back(line);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : grid) {
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  }
  std::ostringstream out;
  for (const auto& line : grid) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      if (c) out << "  ";
      // Labels left-aligned, scores right-aligned.
      if (c < 2) out << std::left << std::setw(int(width[c])) << line[c];
      else out << std::right << std::setw(int(width[c])) << line[c];
    }
    out << '\n';
  }
  return out.str();
}

std::string RoundTable::jsonl() const {
  std::ostringstream out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    json values = json::object();
    for (std::size_t c = 0; c < columns.size(); ++c) {
      values[columns[c]] = cells[r][c] ? json(*cells[r][c]) : json(nullptr);
    }
    out << json{{"split", rows[r].first}, {"task", rows[r].second}, {"values", values}}.dump() << '\n';
  }
  return out.str();
}

namespace {

double median_of_sorted(std::span<const double> v) {
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

SeriesStats series_stats(std::span<const double> values) {
  if (values.empty()) throw ReportError("stats of an empty series");
  for (double v : values) {
    if (!std::isfinite(v)) throw ReportError("stats of a series with non-finite values");
  }
  SeriesStats s;
  s.n = values.size();
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  s.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / double(s.n);
  s.min = sorted.front();
  s.max = sorted.back();
  s.median = median_of_sorted(sorted);
  const std::size_t half = (s.n + 1) / 2;
  s.q1 = median_of_sorted(std::span<const double>(sorted).first(half));
  s.q3 = median_of_sorted(std::span<const double>(sorted).last(half));
  if (s.n < 2) {
    s.warnings.push_back("series has fewer than 2 points; confidence interval omitted");
    return s;
  }
  double ss = 0;
  for (double v : sorted) ss += (v - s.mean) * (v - s.mean);
  s.sd = std::sqrt(ss / double(s.n - 1));
  const boost::math::students_t dist(double(s.n - 1));
  const double t = boost::math::quantile(boost::math::complement(dist, (1 - kConfidence) / 2));
  const double half_width = t * s.sd / std::sqrt(double(s.n));
  s.ci_low = s.mean - half_width;
  s.ci_high = s.mean + half_width;
  return s;
}

json stats_to_json(const ScoreSeries& series, const SeriesStats& st) {
  json j{{"run", series.run},    {"split", series.split}, {"dataset", series.dataset},
         {"task", series.task},  {"n", st.n},             {"mean", st.mean},
         {"sd", st.sd},          {"min", st.min},         {"q1", st.q1},
         {"median", st.median},  {"q3", st.q3},           {"max", st.max},
         {"confidence", kConfidence}};
  j["ci_low"] = st.ci_low ? json(*st.ci_low) : json(nullptr);
  j["ci_high"] = st.ci_high ? json(*st.ci_high) : json(nullptr);
  j["warnings"] = st.warnings;
  return j;
}

}  // namespace mmfuse::expcli
