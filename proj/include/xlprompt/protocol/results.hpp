#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xlprompt/core/error.hpp"
#include "xlprompt/protocol/evaluate.hpp"

namespace xlprompt {

/// Outcome of one (method, K, seed) run, written as one JSON file.
struct ResultRow {
  std::string name; ///< report row label, usually the method name
  std::string method;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  int strategy = 1;
  std::vector<LanguageAccuracy> accuracies; ///< report column order
  std::vector<double> dev_curve;
  std::size_t best_epoch = 0;
  std::string manifest_hash;
  std::optional<std::string> failure; ///< set when the run did not finish

  bool ok() const noexcept { return !failure.has_value(); }

  double average() const {
    if (accuracies.empty()) {
      throw input_error("row " + name + " has no accuracies");
    }
    double s = 0.0;
    for (const auto& a : accuracies) {
      s += a.accuracy;
    }
    return s / static_cast<double>(accuracies.size());
  }
};

inline nlohmann::ordered_json to_json(const ResultRow& r) {
  nlohmann::ordered_json j;
  j["name"] = r.name;
  j["method"] = r.method;
  j["k"] = r.k;
  j["seed"] = r.seed;
  j["strategy"] = r.strategy;
  j["manifest_hash"] = r.manifest_hash;
  if (r.failure) {
    j["failure"] = *r.failure;
    return j;
  }
  auto& acc = j["accuracy"] = nlohmann::ordered_json::array();
  for (const auto& a : r.accuracies) {
    acc.push_back({{"language", a.language}, {"accuracy", a.accuracy}, {"examples", a.examples}});
  }
  j["dev_curve"] = r.dev_curve;
  j["best_epoch"] = r.best_epoch;
  return j;
}

inline ResultRow row_from_json(const nlohmann::json& j) {
  try {
    ResultRow r;
    r.name = j.at("name").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.k = j.at("k").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.strategy = j.at("strategy").get<int>();
    r.manifest_hash = j.value("manifest_hash", "");
    if (j.contains("failure")) {
      r.failure = j.at("failure").get<std::string>();
      return r;
    }
    for (const auto& a : j.at("accuracy")) {
      r.accuracies.push_back({a.at("language").get<std::string>(), a.at("accuracy").get<double>(),
                              a.at("examples").get<std::size_t>()});
    }
    r.dev_curve = j.at("dev_curve").get<std::vector<double>>();
    r.best_epoch = j.at("best_epoch").get<std::size_t>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw input_error(std::string("malformed row file: ") + e.what());
  }
}

inline void write_row(const ResultRow& row, const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw environment_error("cannot write row file " + path.string());
  }
  out << to_json(row).dump(2) << '\n';
}

inline ResultRow read_row(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw environment_error("cannot open row file " + path.string());
  }
  try {
    return row_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw input_error(path.string() + ": " + e.what());
  }
}

/// Mean and sample standard deviation; `std` is empty for a single value.
struct Summary {
  double mean = 0.0;
  std::optional<double> std;
  std::size_t count = 0;
};

inline Summary summarize(const std::vector<double>& values) {
  if (values.empty()) {
    throw input_error("cannot summarize zero values");
  }
  Summary s;
  s.count = values.size();
  // Welford: exact for constant inputs, so identical seeds give std 0.
  double ss = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double delta = values[i] - s.mean;
    s.mean += delta / static_cast<double>(i + 1);
    ss += delta * (values[i] - s.mean);
  }
  if (values.size() >= 2) {
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

/// One report line: a (row name, K) group summarized over its successful seeds.
struct AggregateRow {
  std::string name;
  std::size_t k = 0;
  std::vector<LanguageCode> languages;
  std::vector<Summary> per_language; ///< empty when every run in the group failed
  std::optional<Summary> average;
  std::vector<std::uint64_t> seeds;
  std::vector<std::uint64_t> failed_seeds;
};

/// Combine seed rows of one group. The average column is the per-seed mean over
/// languages, then mean and std over seeds.
inline AggregateRow aggregate(const std::vector<ResultRow>& rows) {
  if (rows.empty()) {
    throw input_error("nothing to aggregate");
  }
  AggregateRow out;
  out.name = rows.front().name;
  out.k = rows.front().k;
  const ResultRow* reference = nullptr;
  for (const auto& r : rows) {
    if (r.name != out.name || r.k != out.k) {
      throw input_error("aggregate mixes groups " + out.name + "/K=" + std::to_string(out.k) + " and " + r.name +
                        "/K=" + std::to_string(r.k));
    }
    if (!r.ok()) {
      out.failed_seeds.push_back(r.seed);
      continue;
    }
    if (reference == nullptr) {
      reference = &r;
      for (const auto& a : r.accuracies) {
        out.languages.push_back(a.language);
      }
    }
    if (r.accuracies.size() != out.languages.size()) {
      throw input_error("seed " + std::to_string(r.seed) + " of " + out.name + " has a different language set");
    }
    for (std::size_t i = 0; i < out.languages.size(); ++i) {
      if (r.accuracies[i].language != out.languages[i]) {
        throw input_error("seed " + std::to_string(r.seed) + " of " + out.name + " has a different language set");
      }
    }
    out.seeds.push_back(r.seed);
  }
  if (reference == nullptr) {
    return out;
  }
  std::vector<double> averages;
  for (std::size_t i = 0; i < out.languages.size(); ++i) {
    std::vector<double> values;
    for (const auto& r : rows) {
      if (r.ok()) {
        values.push_back(r.accuracies[i].accuracy);
      }
    }
    out.per_language.push_back(summarize(values));
  }
  for (const auto& r : rows) {
    if (r.ok()) {
      averages.push_back(r.average());
    }
  }
  out.average = summarize(averages);
  return out;
}

/// Group rows by (name, K) in first-seen order and aggregate each group.
inline std::vector<AggregateRow> aggregate_all(const std::vector<ResultRow>& rows) {
  std::vector<std::pair<std::string, std::size_t>> order;
  std::map<std::pair<std::string, std::size_t>, std::vector<ResultRow>> groups;
  for (const auto& r : rows) {
    const auto key = std::make_pair(r.name, r.k);
    if (!groups.contains(key)) {
      order.push_back(key);
    }
    groups[key].push_back(r);
  }
  std::vector<AggregateRow> out;
  for (const auto& key : order) {
    out.push_back(aggregate(groups[key]));
  }
  return out;
}

/// Cell text in percent, "46.54±1.83", or "46.54" for a single seed.
inline std::string format_cell(const Summary& s) {
  char buf[64];
  if (s.std) {
    std::snprintf(buf, sizeof(buf), "%.2f±%.2f", 100.0 * s.mean, 100.0 * *s.std);
  } else {
    std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * s.mean);
  }
  return buf;
}

inline constexpr const char* missing_cell = "missing";

struct ReportTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// Rows = (method, K), columns = languages then Avg. All groups must share a language set.
inline ReportTable make_report(const std::vector<ResultRow>& rows) {
  if (rows.empty()) {
    throw input_error("empty table: no row files");
  }
  const auto groups = aggregate_all(rows);
  std::vector<LanguageCode> languages;
  for (const auto& g : groups) {
    if (g.per_language.empty()) {
      continue;
    }
    if (languages.empty()) {
      languages = g.languages;
    } else if (languages != g.languages) {
      throw input_error("row files disagree on the language columns (" + g.name + ")");
    }
  }
  ReportTable t;
  t.header = {"method", "K"};
  t.header.insert(t.header.end(), languages.begin(), languages.end());
  t.header.push_back("Avg");
  t.header.push_back("seeds");
  for (const auto& g : groups) {
    std::vector<std::string> line{g.name, std::to_string(g.k)};
    for (std::size_t i = 0; i < languages.size(); ++i) {
      line.push_back(g.per_language.empty() ? missing_cell : format_cell(g.per_language[i]));
    }
    line.push_back(g.average ? format_cell(*g.average) : missing_cell);
    std::string seeds = std::to_string(g.seeds.size());
    if (!g.failed_seeds.empty()) {
      seeds += " (" + std::to_string(g.failed_seeds.size()) + " failed)";
    }
    line.push_back(seeds);
    t.rows.push_back(std::move(line));
  }
  return t;
}

inline std::string to_tsv(const ReportTable& t) {
  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      out << (i ? "\t" : "") << cells[i];
    }
    out << '\n';
  };
  emit(t.header);
  for (const auto& r : t.rows) {
    emit(r);
  }
  return out.str();
}

namespace detail {

/// Display width in code points; enough for the ASCII and "±" cells reports contain.
inline std::size_t display_width(const std::string& s) {
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

} // namespace detail

inline std::string to_pretty(const ReportTable& t) {
  std::vector<std::size_t> width(t.header.size(), 0);
  auto measure = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size() && i < width.size(); ++i) {
      width[i] = std::max(width[i], detail::display_width(cells[i]));
    }
  };
  measure(t.header);
  for (const auto& r : t.rows) {
    measure(r);
  }
  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      out << cells[i];
      if (i + 1 < cells.size()) {
        out << std::string(width[i] - detail::display_width(cells[i]) + 2, ' ');
      }
    }
    out << '\n';
  };
  emit(t.header);
  std::size_t total = 0;
  for (auto w : width) {
    total += w + 2;
  }
  out << std::string(total > 2 ? total - 2 : 0, '-') << '\n';
  for (const auto& r : t.rows) {
    emit(r);
  }
  return out.str();
}

} // namespace xlprompt
