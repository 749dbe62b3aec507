#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "doramos/metrics.hpp"
#include "doramos/rng.hpp"
#include "support/metric_oracles.hpp"

using namespace doramos;
using namespace metric_oracles;

TEST(Spearman, HandCases) {
  EXPECT_DOUBLE_EQ(*spearman(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3}), 1.0);
  EXPECT_DOUBLE_EQ(*spearman(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}), -1.0);
  EXPECT_DOUBLE_EQ(*spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 3, 2, 4}), 0.8);
}

TEST(Kendall, HandCases) {
  EXPECT_DOUBLE_EQ(*kendall_tau_b(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 2, 3, 4}), 1.0);
  EXPECT_DOUBLE_EQ(*kendall_tau_b(std::vector<double>{1, 2, 3, 4}, std::vector<double>{4, 3, 2, 1}), -1.0);
  EXPECT_DOUBLE_EQ(*kendall_tau_b(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 3, 2, 4}), 4.0 / 6.0);
}

TEST(Correlations, ConstantInputIsUndefined) {
  const std::vector<double> c = {2, 2, 2}, x = {1, 2, 3};
  EXPECT_FALSE(spearman(c, x).has_value());
  EXPECT_FALSE(kendall_tau_b(x, c).has_value());
  EXPECT_FALSE(pearson(c, x).has_value());
}

TEST(Correlations, LengthErrors) {
  EXPECT_THROW(spearman(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), UsageError);
  EXPECT_THROW(kendall_tau_b(std::vector<double>{1}, std::vector<double>{1}), UsageError);
}

TEST(Correlations, MatchBruteForceOracles) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto [x, y] = random_tied_pair(rng, 2 + rng.index(49));
    const auto s = spearman(x, y);
    const auto k = kendall_tau_b(x, y);
    const auto so = oracle_spearman(x, y);
    const auto ko = oracle_kendall_b(x, y);
    ASSERT_EQ(s.has_value(), so.has_value());
    ASSERT_EQ(k.has_value(), ko.has_value());
    if (s) {
      EXPECT_NEAR(*s, *so, 1e-12);
    }
    if (k) {
      EXPECT_NEAR(*k, *ko, 1e-12);
    }
  }
}

TEST(Correlations, InvariantUnderMonotoneMaps) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(20), y(20);
    for (std::size_t i = 0; i < 20; ++i) {
      x[i] = rng.normal();
      y[i] = x[i] + rng.normal();
    }
    std::vector<double> ex, ax;
    for (double v : x) {
      ex.push_back(std::exp(v));
      ax.push_back(2.0 * v + 1.0);
    }
    EXPECT_NEAR(*spearman(ex, y), *spearman(x, y), 1e-12);
    EXPECT_NEAR(*spearman(ax, y), *spearman(x, y), 1e-12);
    EXPECT_NEAR(*kendall_tau_b(ex, y), *kendall_tau_b(x, y), 1e-12);
    EXPECT_NEAR(*kendall_tau_b(x, ax), *kendall_tau_b(x, x), 1e-12);
  }
}

TEST(Pearson, MatchesDefinition) {
  const std::vector<double> x = {1, 2, 3, 4, 5}, y = {2, 1, 4, 3, 7};
  EXPECT_NEAR(*pearson(x, y), 12.0 / std::sqrt(212.0), 1e-12);  // sxy = 12, sxx = 10, syy = 21.2
}

TEST(SystemLevel, OneClipPerSystemIsIdentity) {
  const std::vector<double> p = {3.0, 1.0, 2.0}, t = {2.5, 1.5, 4.0};
  const std::vector<std::string> s = {"c", "a", "b"};
  const SystemMeans m = system_level(p, t, s);
  EXPECT_EQ(m.systems, (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(m.pred, (std::vector<double>{1.0, 2.0, 3.0}));
  EXPECT_EQ(m.truth, (std::vector<double>{1.5, 4.0, 2.5}));
}

TEST(SystemLevel, AveragesWithinSystem) {
  const std::vector<double> p = {2.0, 4.0, 3.0, 3.0};
  const SystemMeans m = system_level(p, p, std::vector<std::string>{"s1", "s1", "s2", "s2"});
  EXPECT_EQ(m.pred, (std::vector<double>{3.0, 3.0}));
}

TEST(SystemLevel, MatchesGroupByOracle) {
  Rng rng(4);
  std::vector<double> p, t;
  std::vector<std::string> s;
  for (std::size_t i = 0; i < 400; ++i) {
    s.push_back("sys" + std::to_string(rng.index(31)));
    p.push_back(rng.uniform(1, 5));
    t.push_back(rng.uniform(1, 5));
  }
  const SystemMeans m = system_level(p, t, s);
  const auto oracle = oracle_group_means(p, t, s);
  ASSERT_EQ(m.systems.size(), oracle.size());
  for (std::size_t i = 0; i < m.systems.size(); ++i) {
    const auto& [op, ot] = oracle.at(m.systems[i]);
    EXPECT_NEAR(m.pred[i], op, 1e-12);
    EXPECT_NEAR(m.truth[i], ot, 1e-12);
  }
}

TEST(SystemLevel, NeedsTwoSystems) {
  EXPECT_THROW(system_level(std::vector<double>{1, 2}, std::vector<double>{1, 2}, std::vector<std::string>{"a", "a"}),
               DataError);
}

TEST(Evaluate, PerfectPredictionsGiveUnitCorrelations) {
  Dataset ds;
  std::vector<ScoredClip> preds;
  Rng rng(5);
  for (std::size_t i = 0; i < 30; ++i) {
    ClipRecord r;
    r.clip_id = "c" + std::to_string(i);
    r.system_id = "s" + std::to_string(i % 6);
    r.mi = rng.uniform(1, 5);
    r.ta = rng.uniform(1, 5);
    preds.push_back({r.clip_id, *r.mi, *r.ta});
    ds.records.push_back(r);
  }
  const EvalReport rep = evaluate(preds, ds);
  for (const MetricCells* c : {&rep.utt_mi, &rep.utt_ta, &rep.sys_mi, &rep.sys_ta}) {
    EXPECT_DOUBLE_EQ(*c->srcc, 1.0);
    EXPECT_DOUBLE_EQ(*c->ktau, 1.0);
    EXPECT_NEAR(*c->lcc, 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(c->mse, 0.0);
  }
  const nlohmann::json j = to_json(rep);
  EXPECT_EQ(j.size(), 16u);
  EXPECT_DOUBLE_EQ(j.at("sys_srcc_ta").get<double>(), 1.0);
  EXPECT_TRUE(j.contains("utt_mse_mi"));
}

TEST(Evaluate, MissingClipIsDataError) {
  Dataset ds;
  ClipRecord r;
  r.clip_id = "a";
  r.system_id = "s";
  r.mi = r.ta = 3.0;
  ds.records.push_back(r);
  const std::vector<ScoredClip> preds = {{"b", 3.0, 3.0}};
  EXPECT_THROW(evaluate(preds, ds), DataError);
}
