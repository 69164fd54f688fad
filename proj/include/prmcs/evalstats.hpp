#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "prmcs/errors.hpp"
#include "prmcs/metric.hpp"

namespace prmcs {

// ---------------------------------------------------------------------------
// Score-drop reports

inline constexpr std::string_view kPerturbedAverage = "perturbed_average";

/// 100 * (perturbed - original) / original.
inline double percent_change(double mean_original, double mean_perturbed) {
  if (!(mean_original > 0.0)) {
    throw ZeroOriginalMean("original mean score must be > 0, got " + std::to_string(mean_original));
  }
  return 100.0 * (mean_perturbed - mean_original) / mean_original;
}

struct DropEntry {
  std::string lang;
  std::string kind;  // perturbation kind or "perturbed_average"
  std::size_t count = 0;
  double mean_original = 0.0;
  double mean_perturbed = 0.0;
  double pct = 0.0;
};

struct DropReport {
  /// Sorted by (lang, kind); each language ends with its perturbed average.
  std::vector<DropEntry> entries;

  const DropEntry* find(std::string_view lang, std::string_view kind) const {
    for (const auto& e : entries) {
      if (e.lang == lang && e.kind == kind) return &e;
    }
    return nullptr;
  }

  std::vector<std::string> languages() const {
    std::set<std::string> langs;
    for (const auto& e : entries) langs.insert(e.lang);
    return {langs.begin(), langs.end()};
  }
};

/// Groups perturbed rows by (lang, kind) and compares each group's mean with
/// the mean original score of that language. The perturbed average is the
/// mean of the per-kind means.
inline DropReport drop_report(const std::vector<ScoreRow>& original,
                              const std::vector<ScoreRow>& perturbed) {
  std::map<std::string, std::pair<double, std::size_t>> orig_by_lang;
  std::unordered_set<std::string> ids;
  for (const auto& r : original) {
    if (r.kind != kOriginalKind) {
      throw MissingOriginal("original row '" + r.id + "' has kind '" + r.kind + "'");
    }
    ids.insert(r.id);
    auto& acc = orig_by_lang[r.lang];
    acc.first += r.score;
    acc.second += 1;
  }
  std::map<std::pair<std::string, std::string>, std::pair<double, std::size_t>> groups;
  for (const auto& r : perturbed) {
    if (!ids.count(r.id)) throw MissingOriginal("perturbed row '" + r.id + "' has no original");
    if (!orig_by_lang.count(r.lang)) {
      throw MissingOriginal("no original rows for language '" + r.lang + "'");
    }
    auto& acc = groups[{r.lang, r.kind}];
    acc.first += r.score;
    acc.second += 1;
  }

  DropReport report;
  std::string current;
  std::vector<double> kind_means;
  std::size_t kind_rows = 0;
  auto flush = [&]() {
    if (kind_means.empty()) return;
    const auto& o = orig_by_lang.at(current);
    const double mo = o.first / static_cast<double>(o.second);
    double avg = 0.0;
    for (double m : kind_means) avg += m;
    avg /= static_cast<double>(kind_means.size());
    report.entries.push_back({current, std::string(kPerturbedAverage), kind_rows, mo, avg,
                              percent_change(mo, avg)});
    kind_means.clear();
    kind_rows = 0;
  };
  for (const auto& [key, acc] : groups) {
    if (key.first != current) {
      flush();
      current = key.first;
    }
    const auto& o = orig_by_lang.at(key.first);
    const double mo = o.first / static_cast<double>(o.second);
    const double mp = acc.first / static_cast<double>(acc.second);
    report.entries.push_back({key.first, key.second, acc.second, mo, mp, percent_change(mo, mp)});
    kind_means.push_back(mp);
    kind_rows += acc.second;
  }
  flush();
  return report;
}

inline nlohmann::ordered_json drop_report_json(const DropReport& report) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& e : report.entries) {
    nlohmann::ordered_json j;
    j["lang"] = e.lang;
    j["kind"] = e.kind;
    j["count"] = e.count;
    j["mean_original"] = e.mean_original;
    j["mean_perturbed"] = e.mean_perturbed;
    j["pct"] = e.pct;
    rows.push_back(std::move(j));
  }
  nlohmann::ordered_json out;
  out["entries"] = std::move(rows);
  return out;
}

/// Plain-text table: one row per language with the original mean, the
/// perturbed average and every kind, percentages to two decimals.
inline std::string drop_report_table(const DropReport& report) {
  std::set<std::string> kinds;
  for (const auto& e : report.entries) {
    if (e.kind != kPerturbedAverage) kinds.insert(e.kind);
  }
  std::vector<std::string> header = {"lang", "original", "perturbed average"};
  header.insert(header.end(), kinds.begin(), kinds.end());

  std::vector<std::vector<std::string>> cells;
  char buf[64];
  auto cell = [&](const DropEntry* e) -> std::string {
    if (!e) return "-";
    std::snprintf(buf, sizeof buf, "%.5g (%+.2f%%)", e->mean_perturbed, e->pct);
    return buf;
  };
  for (const auto& lang : report.languages()) {
    const DropEntry* avg = report.find(lang, kPerturbedAverage);
    std::vector<std::string> row = {lang};
    std::snprintf(buf, sizeof buf, "%.5g", avg ? avg->mean_original : 0.0);
    row.emplace_back(buf);
    row.push_back(cell(avg));
    for (const auto& k : kinds) row.push_back(cell(report.find(lang, k)));
    cells.push_back(std::move(row));
  }

  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    width[c] = header[c].size();
    for (const auto& row : cells) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      out += row[c];
      if (c + 1 < row.size()) out += std::string(width[c] - row[c].size() + 2, ' ');
    }
    out += '\n';
  };
  emit(header);
  std::size_t total = 0;
  for (std::size_t c = 0; c < width.size(); ++c) total += width[c] + (c + 1 < width.size() ? 2 : 0);
  out += std::string(total, '-') + '\n';
  for (const auto& row : cells) emit(row);
  return out;
}

// ---------------------------------------------------------------------------
// Correlation with human ratings

struct RatingPairs {
  std::vector<double> x;  // metric scores
  std::vector<double> y;  // human ratings
};

inline void check_pairs(const RatingPairs& p) {
  if (p.x.size() != p.y.size()) {
    throw ParseError("rating lists differ in length: " + std::to_string(p.x.size()) + " vs " +
                     std::to_string(p.y.size()));
  }
  if (p.x.size() < 2) throw DegenerateInput("need at least 2 rating pairs");
  for (std::size_t i = 0; i < p.x.size(); ++i) {
    if (!std::isfinite(p.x[i]) || !std::isfinite(p.y[i])) {
      throw ParseError("non-finite rating at index " + std::to_string(i));
    }
  }
}

namespace detail {

/// Dense ranks 0..levels-1 of the values (equal values share a rank).
inline std::vector<std::size_t> dense_ranks(const std::vector<double>& v, std::size_t& levels) {
  std::vector<double> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  levels = sorted.size();
  std::vector<std::size_t> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    r[i] = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), v[i]) - sorted.begin());
  }
  return r;
}

}  // namespace detail

/// Stuart's tau-c, 2m(C - D) / (n^2 (m - 1)), computed from the contingency
/// table of the two rankings. Pairs tied in either coordinate count as
/// neither concordant nor discordant.
inline double kendall_tau_c(const RatingPairs& pairs) {
  check_pairs(pairs);
  std::size_t rx = 0, ry = 0;
  const auto ix = detail::dense_ranks(pairs.x, rx);
  const auto iy = detail::dense_ranks(pairs.y, ry);
  const std::size_t m = std::min(rx, ry);
  if (m < 2) throw DegenerateInput("tau-c needs at least two distinct values in each list");

  // table(a, b) = observations with x-rank a and y-rank b.
  std::vector<double> table(rx * ry, 0.0);
  for (std::size_t i = 0; i < ix.size(); ++i) table[ix[i] * ry + iy[i]] += 1.0;

  // Suffix sums with a zero border: above(a, b) counts cells with x-rank >= a
  // and y-rank >= b, below(a, b) cells with x-rank >= a and y-rank < b.
  const std::size_t stride = ry + 1;
  std::vector<double> above((rx + 1) * stride, 0.0), below((rx + 1) * stride, 0.0);
  for (std::size_t a = rx; a-- > 0;) {
    for (std::size_t b = ry; b-- > 0;) {
      above[a * stride + b] = table[a * ry + b] + above[(a + 1) * stride + b] +
                              above[a * stride + b + 1] - above[(a + 1) * stride + b + 1];
    }
    for (std::size_t b = 1; b <= ry; ++b) {
      below[a * stride + b] = table[a * ry + b - 1] + below[(a + 1) * stride + b] +
                              below[a * stride + b - 1] - below[(a + 1) * stride + b - 1];
    }
  }
  double concordant = 0.0, discordant = 0.0;
  for (std::size_t a = 0; a + 1 < rx; ++a) {
    for (std::size_t b = 0; b < ry; ++b) {
      const double cell = table[a * ry + b];
      if (cell == 0.0) continue;
      concordant += cell * above[(a + 1) * stride + b + 1];
      discordant += cell * below[(a + 1) * stride + b];
    }
  }
  const double n = static_cast<double>(pairs.x.size());
  const double md = static_cast<double>(m);
  return 2.0 * md * (concordant - discordant) / (n * n * (md - 1.0));
}

/// Sample Pearson correlation (two-pass, centered).
inline double pearson(const RatingPairs& pairs) {
  check_pairs(pairs);
  const double n = static_cast<double>(pairs.x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < pairs.x.size(); ++i) {
    mx += pairs.x[i];
    my += pairs.y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < pairs.x.size(); ++i) {
    const double dx = pairs.x[i] - mx;
    const double dy = pairs.y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw DegenerateInput("pearson needs non-constant lists");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace prmcs
