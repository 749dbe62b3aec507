#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "doramos/ensemble.hpp"
#include "doramos/labels.hpp"
#include "doramos/rng.hpp"
#include "support/ridge_oracle.hpp"

using namespace doramos;

namespace {

const ScoreBins kBins = make_bins();

PredictionRecord soft_record(const std::string& id, double mi, double ta) {
  PredictionRecord r;
  r.clip_id = id;
  r.mi = mi;
  r.ta = ta;
  r.mi_probs = gaussian_soften(mi, kBins, SofteningConfig{0.2});
  r.ta_probs = gaussian_soften(ta, kBins, SofteningConfig{0.2});
  return r;
}

PredictionRecord coral_record(const std::string& id, double mi, double ta) {
  PredictionRecord r;
  r.clip_id = id;
  r.mi = mi;
  r.ta = ta;
  r.cumulative = true;
  for (std::size_t k = 0; k + 1 < kBins.K; ++k) {
    r.mi_probs.push_back(1.0 / (1.0 + std::exp(-4.0 * (mi - kBins.centers[k] - 0.1))));
    r.ta_probs.push_back(1.0 / (1.0 + std::exp(-4.0 * (ta - kBins.centers[k] - 0.1))));
  }
  return r;
}

// Systems spaced 0.3 apart, clips within 0.1 of their system's score.
Dataset graded_truth(std::size_t systems, std::size_t clips, std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds;
  for (std::size_t s = 0; s < systems; ++s) {
    const double base_mi = 1.2 + 0.3 * static_cast<double>(s);
    const double base_ta = 4.8 - 0.3 * static_cast<double>(s);
    for (std::size_t c = 0; c < clips; ++c) {
      ClipRecord r;
      r.clip_id = "s" + std::to_string(s) + "_" + std::to_string(c);
      r.system_id = "sys" + std::to_string(100 + s);
      r.mi = base_mi + rng.uniform(-0.1, 0.1);
      r.ta = base_ta + rng.uniform(-0.1, 0.1);
      ds.records.push_back(r);
    }
  }
  return ds;
}

BaseModel noisy_model(const std::string& name, const Dataset& truth, double sd, std::uint64_t seed) {
  Rng rng(seed);
  BaseModel m{name, {}};
  for (const auto& r : truth.records) {
    m.predictions.push_back(soft_record(r.clip_id, std::clamp(*r.mi + rng.normal(0.0, sd), 1.0, 5.0),
                                        std::clamp(*r.ta + rng.normal(0.0, sd), 1.0, 5.0)));
  }
  return m;
}

std::vector<std::string> ids_of(const Dataset& ds) {
  std::vector<std::string> ids;
  for (const auto& r : ds.records) ids.push_back(r.clip_id);
  return ids;
}

Eigen::MatrixXd random_matrix(Eigen::Index n, Eigen::Index p, Rng& rng) {
  Eigen::MatrixXd X(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) X(i, j) = rng.normal();
  }
  return X;
}

}  // namespace

TEST(Features, SingleModelRowsAreDistributions) {
  const Dataset truth = graded_truth(3, 4, 1);
  const FeatureMatrix X = assemble_features({noisy_model("a", truth, 0.2, 2)}, ids_of(truth), Target::MI, kBins, 0.2);
  ASSERT_EQ(X.cols(), 20);
  ASSERT_EQ(X.rows(), 12);
  for (Eigen::Index i = 0; i < X.rows(); ++i) EXPECT_NEAR(X.row(i).sum(), 1.0, 1e-12);
}

TEST(Features, CumulativeBlockIsSoftenedDecodedScore) {
  BaseModel m{"coral", {coral_record("x", 2.3, 4.1)}};
  const FeatureMatrix X = assemble_features({m}, {"x"}, Target::TA, kBins, 0.2);
  const auto expect = gaussian_soften(decode_coral(m.predictions[0].ta_probs, kBins), kBins, SofteningConfig{0.2});
  for (std::size_t k = 0; k < 20; ++k) EXPECT_EQ(X(0, static_cast<Eigen::Index>(k)), expect[k]);
  const double peak = X.row(0).maxCoeff();
  EXPECT_LT(peak, 0.9);
}

TEST(Features, NineModelRosterWidth) {
  const Dataset truth = graded_truth(4, 3, 3);
  std::vector<BaseModel> roster;
  for (int i = 0; i < 5; ++i) roster.push_back(noisy_model("dora" + std::to_string(i), truth, 0.3, 10 + i));
  for (int i = 0; i < 2; ++i) {
    BaseModel c{"coral" + std::to_string(i), {}};
    for (const auto& r : truth.records) c.predictions.push_back(coral_record(r.clip_id, *r.mi, *r.ta));
    roster.push_back(c);
  }
  for (int i = 0; i < 2; ++i) roster.push_back(noisy_model("dec" + std::to_string(i), truth, 0.3, 20 + i));
  const FeatureMatrix X = assemble_features(roster, ids_of(truth), Target::MI, kBins, 0.2);
  EXPECT_EQ(X.cols(), 180);
  EXPECT_EQ(X.rows(), 12);
  EXPECT_EQ(X, assemble_features(roster, ids_of(truth), Target::MI, kBins, 0.2));
}

TEST(Features, Errors) {
  const Dataset truth = graded_truth(2, 2, 4);
  BaseModel m = noisy_model("m", truth, 0.1, 5);
  EXPECT_THROW(assemble_features({m}, {"nope"}, Target::MI, kBins, 0.2), DataError);
  m.predictions[0].mi_probs.pop_back();
  EXPECT_THROW(assemble_features({m}, ids_of(truth), Target::MI, kBins, 0.2), DataError);
  m.predictions[0].mi_probs.push_back(0.5);
  EXPECT_THROW(assemble_features({m}, ids_of(truth), Target::MI, kBins, 0.2), DataError);
  EXPECT_THROW(assemble_features({}, ids_of(truth), Target::MI, kBins, 0.2), UsageError);
}

TEST(Ridge, ExactRecoveryWithoutPenalty) {
  Rng rng(6);
  const Eigen::MatrixXd X = random_matrix(30, 5, rng);
  const Eigen::VectorXd w_true = (Eigen::VectorXd(5) << 0.5, -1.0, 2.0, 0.0, 0.25).finished();
  const Eigen::VectorXd y = (X * w_true).array() + 3.0;
  const std::vector<double> yv(y.data(), y.data() + y.size());
  const RidgeModel m = ridge_fit(X, yv, 0.0);
  for (int j = 0; j < 5; ++j) EXPECT_NEAR(m.weights[static_cast<std::size_t>(j)], w_true(j), 1e-6);
  EXPECT_NEAR(m.intercept, 3.0, 1e-6);
}

TEST(Ridge, HugePenaltyShrinksToMean) {
  Rng rng(7);
  const Eigen::MatrixXd X = random_matrix(40, 6, rng);
  std::vector<double> y;
  for (int i = 0; i < 40; ++i) y.push_back(rng.uniform(1, 5));
  const RidgeModel m = ridge_fit(X, y, 1e9);
  for (double w : m.weights) EXPECT_LT(std::fabs(w), 1e-6);
  double mean = 0;
  for (double v : y) mean += v;
  EXPECT_NEAR(m.intercept, mean / 40.0, 1e-6);
}

TEST(Ridge, MatchesGradientDescentMinimizer) {
  Rng rng(8);
  const Eigen::MatrixXd X = random_matrix(50, 8, rng);
  Eigen::VectorXd y(50);
  for (int i = 0; i < 50; ++i) y(i) = X.row(i).sum() * 0.3 + rng.normal();
  const std::vector<double> yv(y.data(), y.data() + 50);
  for (double lambda : {0.01, 1.0, 100.0}) {
    const RidgeModel m = ridge_fit(X, yv, lambda);
    const auto [w, b] = ridge_oracle::gradient_descent_ridge(X, y, lambda);
    for (int j = 0; j < 8; ++j) EXPECT_NEAR(m.weights[static_cast<std::size_t>(j)], w(j), 1e-6) << lambda;
    EXPECT_NEAR(m.intercept, b, 1e-6) << lambda;
  }
}

TEST(Ridge, RowOrderDoesNotMatter) {
  Rng rng(9);
  const Eigen::MatrixXd X = random_matrix(25, 4, rng);
  std::vector<double> y;
  for (int i = 0; i < 25; ++i) y.push_back(rng.normal());
  std::vector<int> perm(25);
  for (int i = 0; i < 25; ++i) perm[static_cast<std::size_t>(i)] = 24 - (i * 7) % 25;
  Eigen::MatrixXd Xp(25, 4);
  std::vector<double> yp(25);
  for (int i = 0; i < 25; ++i) {
    Xp.row(i) = X.row(perm[static_cast<std::size_t>(i)]);
    yp[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  const RidgeModel a = ridge_fit(X, y, 0.5), b = ridge_fit(Xp, yp, 0.5);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(a.weights[j], b.weights[j], 1e-12);
  EXPECT_NEAR(a.intercept, b.intercept, 1e-12);
}

TEST(Ridge, Errors) {
  Rng rng(10);
  Eigen::MatrixXd X = random_matrix(10, 3, rng);
  X.col(2) = X.col(0) * 2.0;
  const std::vector<double> y(10, 1.0);
  try {
    ridge_fit(X, y, 0.0);
    ADD_FAILURE() << "rank-deficient fit accepted";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("lambda > 0"), std::string::npos);
  }
  EXPECT_NO_THROW(ridge_fit(X, y, 1e-3));
  EXPECT_THROW(ridge_fit(X, y, -1.0), UsageError);
  EXPECT_THROW(ridge_fit(X.topRows(1), std::vector<double>{1.0}, 1.0), UsageError);
  EXPECT_THROW(ridge_fit(X, std::vector<double>(9, 1.0), 1.0), UsageError);
}

TEST(Ridge, PredictionsAreClamped) {
  RidgeModel m;
  m.weights = {10.0};
  m.intercept = 0.0;
  Eigen::MatrixXd X(3, 1);
  X << -1.0, 0.3, 2.0;
  EXPECT_EQ(ridge_predict(m, X), (std::vector<double>{1.0, 3.0, 5.0}));
}

TEST(MetaSplit, StratifiedSixtyForty) {
  std::vector<std::string> systems;
  for (int s = 0; s < 6; ++s) {
    for (int c = 0; c < 10; ++c) systems.push_back("s" + std::to_string(s));
  }
  systems.push_back("lonely");
  const MetaSplit a = meta_split(systems, 3);
  EXPECT_EQ(a.train.size(), 37u);
  EXPECT_EQ(a.val.size(), 24u);
  std::set<std::size_t> all(a.train.begin(), a.train.end());
  all.insert(a.val.begin(), a.val.end());
  EXPECT_EQ(all.size(), systems.size());
  std::set<std::string> val_systems;
  for (std::size_t i : a.val) val_systems.insert(systems[i]);
  EXPECT_EQ(val_systems.size(), 6u);
  EXPECT_TRUE(std::is_sorted(a.train.begin(), a.train.end()));
  const MetaSplit b = meta_split(systems, 3);
  EXPECT_EQ(a.train, b.train);
  EXPECT_NE(meta_split(systems, 4).train, a.train);
}

TEST(Stack, PerfectSingleModelGivesUnitSrcc) {
  const Dataset truth = graded_truth(10, 12, 11);
  const StackedModel sm = stack({noisy_model("perfect", truth, 0.0, 0)}, truth, 1);
  EXPECT_DOUBLE_EQ(sm.mi.meta_val_srcc, 1.0);
  EXPECT_DOUBLE_EQ(sm.ta.meta_val_srcc, 1.0);
  EXPECT_EQ(sm.mi.grid.size(), 7u);
}

// Duplicating a block is not a no-op for ridge: the two copies share the
// weight, which halves the penalty on that block. The exact identity is
// equivalence with the block scaled by sqrt(2).
TEST(Stack, DuplicatedModelEqualsRescaledBlock) {
  const Dataset truth = graded_truth(8, 10, 12);
  const BaseModel a = noisy_model("a", truth, 0.4, 13);
  const BaseModel b = noisy_model("b", truth, 0.6, 14);
  const auto ids = ids_of(truth);
  const FeatureMatrix Xab = assemble_features({a, b}, ids, Target::MI, kBins, 0.2);
  const FeatureMatrix Xaba = assemble_features({a, b, a}, ids, Target::MI, kBins, 0.2);
  FeatureMatrix Xscaled = Xab;
  Xscaled.leftCols(20) *= std::sqrt(2.0);
  std::vector<double> y;
  for (const auto& r : truth.records) y.push_back(*r.mi);
  for (double lambda : default_lambda_grid()) {
    const auto p_dup = ridge_predict(ridge_fit(Xaba, y, lambda), Xaba, -100, 100);
    const auto p_scaled = ridge_predict(ridge_fit(Xscaled, y, lambda), Xscaled, -100, 100);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(p_dup[i], p_scaled[i], 1e-9) << lambda;
  }
  const StackedModel once = stack({a, b}, truth, 2);
  const StackedModel twice = stack({a, b, a}, truth, 2);
  EXPECT_NEAR(once.mi.meta_val_srcc, twice.mi.meta_val_srcc, 0.05);
  EXPECT_NEAR(once.ta.meta_val_srcc, twice.ta.meta_val_srcc, 0.05);
}

TEST(Stack, NeedsTwoSystemsPerPartition) {
  const Dataset truth = graded_truth(1, 10, 15);
  EXPECT_THROW(stack({noisy_model("a", truth, 0.1, 1)}, truth, 0), DataError);
}

TEST(Stack, JsonRoundTripAndOrderingCheck) {
  const Dataset truth = graded_truth(6, 8, 16);
  std::vector<BaseModel> models = {noisy_model("a", truth, 0.3, 17), {"c", {}}};
  for (const auto& r : truth.records) models[1].predictions.push_back(coral_record(r.clip_id, *r.mi, *r.ta));
  const StackedModel sm = stack(models, truth, 5);
  const StackedModel back = stacked_from_json(nlohmann::json::parse(to_json(sm).dump()));
  EXPECT_EQ(back.model_names, sm.model_names);
  EXPECT_EQ(back.mi.model.weights, sm.mi.model.weights);
  EXPECT_EQ(back.ta.model.intercept, sm.ta.model.intercept);
  const auto p1 = stacked_predict(sm, models);
  const auto p2 = stacked_predict(back, models);
  ASSERT_EQ(p1.size(), truth.records.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    EXPECT_EQ(p1[i].mi, p2[i].mi);
    EXPECT_GE(p1[i].ta, 1.0);
    EXPECT_LE(p1[i].ta, 5.0);
  }
  EXPECT_THROW(stacked_predict(sm, {models[1], models[0]}), UsageError);
  EXPECT_THROW(stacked_predict(sm, {models[0]}), UsageError);
  EXPECT_THROW(stacked_from_json(nlohmann::json{{"models", 3}}), DataError);
}
