#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "prmcs/evalstats.hpp"
#include "prmcs/rng.hpp"

using namespace prmcs;

namespace {

// O(n^2) pair enumeration: ties in either coordinate count for neither side.
double brute_tau_c(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double c = 0.0, d = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = (x[i] - x[j]) * (y[i] - y[j]);
      if (s > 0) c += 1;
      if (s < 0) d += 1;
    }
  }
  const double m = double(std::min(std::set<double>(x.begin(), x.end()).size(),
                                   std::set<double>(y.begin(), y.end()).size()));
  return 2.0 * m * (c - d) / (double(n) * double(n) * (m - 1.0));
}

// Single-pass raw-sum formula.
double brute_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = double(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

std::vector<ScoreRow> rows_with_mean(const std::string& kind, double mean) {
  return {{"x1", "en", kind, mean - 0.1}, {"x2", "en", kind, mean + 0.1}};
}

}  // namespace

TEST(PercentChange, ReportedDrops) {
  EXPECT_NEAR(percent_change(1.4177, 0.29964), -78.86, 0.01);
  EXPECT_NEAR(percent_change(0.7944, 0.7442), -6.32, 0.01);
  EXPECT_EQ(percent_change(1.0, 1.0), 0.0);
  EXPECT_THROW(percent_change(0.0, 1.0), ZeroOriginalMean);
}

TEST(DropReport, FixtureMeans) {
  const auto orig = rows_with_mean("original", 1.4177);
  const auto report = drop_report(orig, rows_with_mean("masking", 0.29964));
  const auto* e = report.find("en", "masking");
  ASSERT_NE(e, nullptr);
  EXPECT_NEAR(e->mean_original, 1.4177, 1e-12);
  EXPECT_NEAR(e->pct, -78.86, 0.01);
  const auto* avg = report.find("en", kPerturbedAverage);
  ASSERT_NE(avg, nullptr);
  EXPECT_NEAR(avg->pct, e->pct, 1e-12);
}

TEST(DropReport, IdenticalRowsGiveZero) {
  std::vector<ScoreRow> orig = {{"a", "en", "original", 1.0}, {"b", "de", "original", 2.0}};
  std::vector<ScoreRow> pert = {{"a", "en", "jumble", 1.0}, {"b", "de", "jumble", 2.0}};
  const auto report = drop_report(orig, pert);
  for (const auto& e : report.entries) EXPECT_EQ(e.pct, 0.0);
  EXPECT_EQ(report.languages(), (std::vector<std::string>{"de", "en"}));
  EXPECT_NE(drop_report_table(report).find("+0.00%"), std::string::npos);
}

TEST(DropReport, AverageIsMeanOfKindMeans) {
  std::vector<ScoreRow> orig = {{"a", "en", "original", 2.0}, {"b", "en", "original", 2.0}};
  std::vector<ScoreRow> pert = {{"a", "en", "jumble", 1.0},
                                {"a", "en", "masking", 0.0},
                                {"b", "en", "masking", 0.0},
                                {"b", "en", "masking", 0.0}};
  const auto report = drop_report(orig, pert);
  const auto* avg = report.find("en", kPerturbedAverage);
  ASSERT_NE(avg, nullptr);
  EXPECT_DOUBLE_EQ(avg->mean_perturbed, 0.5);  // pooled rows would give 0.25
  EXPECT_DOUBLE_EQ(avg->pct, -75.0);
  EXPECT_EQ(avg->count, 4u);
}

TEST(DropReport, PercentagesRecomputeFromMeans) {
  RngStream rng(3);
  std::vector<ScoreRow> orig, pert;
  for (int i = 0; i < 40; ++i) {
    const std::string id = "r" + std::to_string(i);
    const std::string lang = i % 2 ? "en" : "ja";
    orig.push_back({id, lang, "original", rng.uniform(0.5, 2.5)});
    for (const char* k : {"jumble", "removal", "repetition"}) {
      pert.push_back({id, lang, k, rng.uniform(0.0, 2.5)});
    }
  }
  const auto report = drop_report(orig, pert);
  EXPECT_EQ(report.entries.size(), 8u);
  for (const auto& e : report.entries) {
    EXPECT_DOUBLE_EQ(e.pct, 100.0 * (e.mean_perturbed - e.mean_original) / e.mean_original);
  }
  const auto j = drop_report_json(report);
  EXPECT_EQ(j.at("entries").size(), 8u);
  EXPECT_EQ(j.at("entries")[0].at("lang"), "en");
}

TEST(DropReport, Errors) {
  std::vector<ScoreRow> orig = {{"a", "en", "original", 1.0}};
  EXPECT_THROW(drop_report(orig, {{"zz", "en", "jumble", 1.0}}), MissingOriginal);
  EXPECT_THROW(drop_report({{"a", "en", "jumble", 1.0}}, {}), MissingOriginal);
  EXPECT_THROW(drop_report(orig, {{"a", "fr", "jumble", 1.0}}), MissingOriginal);
  EXPECT_THROW(drop_report({{"a", "en", "original", 0.0}}, {{"a", "en", "jumble", 1.0}}),
               ZeroOriginalMean);
}

TEST(KendallTauC, Examples) {
  EXPECT_NEAR(kendall_tau_c({{1, 2, 3}, {10, 20, 30}}), 1.0, 1e-15);
  EXPECT_NEAR(kendall_tau_c({{1, 2, 3}, {30, 20, 10}}), -1.0, 1e-15);
  EXPECT_NEAR(kendall_tau_c({{1, 1, 2}, {1, 2, 3}}), 8.0 / 9.0, 1e-15);
  EXPECT_THROW(kendall_tau_c({{1, 1, 1}, {1, 2, 3}}), DegenerateInput);
  EXPECT_THROW(kendall_tau_c({{1}, {1}}), DegenerateInput);
  EXPECT_THROW(kendall_tau_c({{1, 2}, {1}}), ParseError);
}

TEST(Pearson, Examples) {
  EXPECT_NEAR(pearson({{1, 2, 3}, {2, 4, 6}}), 1.0, 1e-15);
  EXPECT_NEAR(pearson({{1, 2, 3}, {4, 3, 2}}), -1.0, 1e-15);
  EXPECT_NEAR(pearson({{1, 2, 3, 4}, {1, 3, 2, 4}}), 0.8, 1e-15);
  EXPECT_THROW(pearson({{1, 1, 1}, {1, 2, 3}}), DegenerateInput);
}

TEST(Correlation, MatchesBruteForceWithTies) {
  RngStream rng(2025);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(49);
    const double levels = 2.0 + double(rng.below(8));
    RatingPairs p;
    for (std::size_t i = 0; i < n; ++i) {
      p.x.push_back(std::floor(rng.unit() * levels));
      p.y.push_back(std::floor(rng.unit() * levels) + 0.5 * p.x.back());
    }
    const std::set<double> sx(p.x.begin(), p.x.end()), sy(p.y.begin(), p.y.end());
    if (sx.size() < 2 || sy.size() < 2) {
      EXPECT_THROW(kendall_tau_c(p), DegenerateInput);
      continue;
    }
    EXPECT_NEAR(kendall_tau_c(p), brute_tau_c(p.x, p.y), 1e-12);
    EXPECT_NEAR(pearson(p), brute_pearson(p.x, p.y), 1e-12);
  }
}

TEST(Correlation, ReversingOneOrderNegates) {
  RngStream rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    RatingPairs p, q;
    for (int i = 0; i < 25; ++i) {
      p.x.push_back(double(rng.below(5)));
      p.y.push_back(double(rng.below(6)));
    }
    q.x = p.x;
    for (double v : p.y) q.y.push_back(-v);
    EXPECT_NEAR(kendall_tau_c(q), -kendall_tau_c(p), 1e-15);
    EXPECT_NEAR(pearson(q), -pearson(p), 1e-15);
  }
}
