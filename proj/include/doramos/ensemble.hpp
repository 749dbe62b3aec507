#pragma once

// Two-level stacking. Level 0: each base model's per-clip K-bin distribution
// for one target (cumulative heads are decoded and re-softened with the
// Gaussian kernel). Level 1: a ridge regressor per target over the
// concatenated distributions, with lambda picked on a held-out meta split.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "doramos/dataio.hpp"
#include "doramos/error.hpp"
#include "doramos/labels.hpp"
#include "doramos/metrics.hpp"
#include "doramos/predictions.hpp"
#include "doramos/rng.hpp"

namespace doramos {

enum class Target { MI, TA };

inline const char* to_string(Target t) { return t == Target::MI ? "mi" : "ta"; }

// One base model's predictions over a set of clips.
struct BaseModel {
  std::string name;
  std::vector<PredictionRecord> predictions;
};

using FeatureMatrix = Eigen::MatrixXd;

// Rows follow `clip_ids`; columns are K-blocks in base-model order.
inline FeatureMatrix assemble_features(const std::vector<BaseModel>& models, const std::vector<std::string>& clip_ids,
                                       Target target, const ScoreBins& bins, double sigma) {
  if (models.empty()) throw UsageError("assemble_features: no base models");
  const std::size_t K = bins.K;
  FeatureMatrix X(static_cast<Eigen::Index>(clip_ids.size()), static_cast<Eigen::Index>(models.size() * K));
  for (std::size_t m = 0; m < models.size(); ++m) {
    std::unordered_map<std::string, const PredictionRecord*> by_id;
    for (const auto& p : models[m].predictions) by_id.emplace(p.clip_id, &p);
    for (std::size_t i = 0; i < clip_ids.size(); ++i) {
      auto it = by_id.find(clip_ids[i]);
      if (it == by_id.end()) {
        throw DataError("assemble_features: model " + models[m].name + " has no prediction for " + clip_ids[i]);
      }
      const PredictionRecord& p = *it->second;
      const auto& probs = target == Target::MI ? p.mi_probs : p.ta_probs;
      std::vector<double> block;
      if (p.cumulative) {
        // Re-soften the decoded score rather than using a one-hot spike.
        block = gaussian_soften(decode_coral(probs, bins), bins, SofteningConfig{sigma});
      } else {
        if (probs.size() != K) {
          throw DataError("assemble_features: model " + models[m].name + " clip " + clip_ids[i] + " has " +
                          std::to_string(probs.size()) + " bins, expected " + std::to_string(K));
        }
        double total = 0.0;
        for (double v : probs) total += v;
        if (std::fabs(total - 1.0) > 1e-6) {
          throw DataError("assemble_features: model " + models[m].name + " clip " + clip_ids[i] +
                          " distribution is not normalized");
        }
        block = probs;
      }
      for (std::size_t k = 0; k < K; ++k) {
        X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m * K + k)) = block[k];
      }
    }
  }
  return X;
}

struct RidgeModel {
  std::vector<double> weights;
  double intercept = 0.0;
  double lambda = 0.0;
};

// argmin ||Xw + b - y||^2 + lambda ||w||^2, intercept unpenalized, solved on
// centered data.
inline RidgeModel ridge_fit(const FeatureMatrix& X, std::span<const double> y, double lambda) {
  const Eigen::Index n = X.rows(), p = X.cols();
  if (n < 2) throw UsageError("ridge_fit: need at least 2 rows");
  if (static_cast<std::size_t>(n) != y.size()) throw UsageError("ridge_fit: X and y differ in rows");
  if (!(lambda >= 0.0)) throw UsageError("ridge_fit: lambda must be >= 0");
  const Eigen::Map<const Eigen::VectorXd> yv(y.data(), n);
  const Eigen::RowVectorXd x_mean = X.colwise().mean();
  const double y_mean = yv.mean();
  const Eigen::MatrixXd Xc = X.rowwise() - x_mean;
  const Eigen::VectorXd yc = yv.array() - y_mean;

  Eigen::VectorXd w;
  if (lambda > 0.0) {
    Eigen::MatrixXd A = Xc.transpose() * Xc;
    A.diagonal().array() += lambda;
    w = A.ldlt().solve(Xc.transpose() * yc);
  } else {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xc);
    if (qr.rank() < p) {
      throw NumericalError("ridge_fit: singular normal matrix at lambda = 0 (rank " + std::to_string(qr.rank()) +
                           " < " + std::to_string(p) + "); use lambda > 0");
    }
    w = qr.solve(yc);
  }
  if (!w.allFinite()) throw NumericalError("ridge_fit: non-finite coefficients");
  RidgeModel model;
  model.weights.assign(w.data(), w.data() + w.size());
  model.intercept = y_mean - x_mean.dot(w);
  model.lambda = lambda;
  return model;
}

// Xw + b, clamped to the score range.
inline std::vector<double> ridge_predict(const RidgeModel& model, const FeatureMatrix& X, double lo = 1.0,
                                         double hi = 5.0) {
  if (static_cast<std::size_t>(X.cols()) != model.weights.size()) throw UsageError("ridge_predict: width mismatch");
  const Eigen::Map<const Eigen::VectorXd> w(model.weights.data(), X.cols());
  const Eigen::VectorXd raw = (X * w).array() + model.intercept;
  std::vector<double> out(static_cast<std::size_t>(raw.size()));
  for (Eigen::Index i = 0; i < raw.size(); ++i) out[static_cast<std::size_t>(i)] = std::clamp(raw(i), lo, hi);
  return out;
}

struct MetaSplit {
  std::vector<std::size_t> train;  // indices into the clip list, ascending
  std::vector<std::size_t> val;
};

// Per system: seeded shuffle, first round(0.6 n) clips to meta-train, the
// rest to meta-validation. Systems with >= 2 clips land in both parts.
inline MetaSplit meta_split(const std::vector<std::string>& system_of, std::uint64_t seed,
                            double train_fraction = 0.6) {
  std::map<std::string, std::vector<std::size_t>> by_system;
  for (std::size_t i = 0; i < system_of.size(); ++i) by_system[system_of[i]].push_back(i);
  Rng rng(derive_seed(seed, "meta_split"));
  MetaSplit out;
  for (auto& [_, idx] : by_system) {
    rng.shuffle(idx);
    const std::size_t n = idx.size();
    std::size_t n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
    if (n >= 2) n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    else n_train = n;
    for (std::size_t k = 0; k < n; ++k) (k < n_train ? out.train : out.val).push_back(idx[k]);
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

inline std::vector<double> default_lambda_grid() { return {1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3}; }

struct TargetStack {
  RidgeModel model;                       // refit on meta-train + meta-val
  double meta_train_srcc = 0.0;           // selected lambda, fit on meta-train
  double meta_val_srcc = 0.0;
  std::vector<std::pair<double, Correlation>> grid;  // lambda -> meta-val system SRCC
};

struct StackedModel {
  std::vector<std::string> model_names;
  std::vector<bool> model_cumulative;
  std::size_t K = 20;
  double score_lo = 1.0;
  double score_hi = 5.0;
  double sigma = 0.2;
  TargetStack mi;
  TargetStack ta;
};

namespace ensemble_detail {

template <typename T>
std::vector<T> pick(const std::vector<T>& v, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(v[i]);
  return out;
}

inline FeatureMatrix pick_rows(const FeatureMatrix& X, const std::vector<std::size_t>& idx) {
  FeatureMatrix out(static_cast<Eigen::Index>(idx.size()), X.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = X.row(static_cast<Eigen::Index>(idx[r]));
  return out;
}

inline Correlation system_srcc(const std::vector<double>& pred, const std::vector<double>& truth,
                               const std::vector<std::string>& systems) {
  const auto sm = system_level(pred, truth, systems);
  return spearman(sm.pred, sm.truth);
}

}  // namespace ensemble_detail

// Fits both meta-models on the clips of `truth` (which must all carry scores
// and be predicted by every base model).
inline StackedModel stack(const std::vector<BaseModel>& models, const Dataset& truth, std::uint64_t seed,
                          const std::vector<double>& lambda_grid = default_lambda_grid(),
                          const ScoreBins& bins = make_bins(), double sigma = 0.2) {
  using namespace ensemble_detail;
  if (lambda_grid.empty()) throw UsageError("stack: empty lambda grid");
  std::vector<std::string> ids, systems;
  std::vector<double> y_mi, y_ta;
  for (const auto& r : truth.records) {
    if (!r.mi || !r.ta) throw DataError("stack: clip " + r.clip_id + " lacks MI/TA scores");
    ids.push_back(r.clip_id);
    systems.push_back(r.system_id);
    y_mi.push_back(*r.mi);
    y_ta.push_back(*r.ta);
  }
  const MetaSplit split = meta_split(systems, seed);
  const auto sys_train = pick(systems, split.train);
  const auto sys_val = pick(systems, split.val);
  auto count_systems = [](std::vector<std::string> s) {
    std::sort(s.begin(), s.end());
    return static_cast<std::size_t>(std::unique(s.begin(), s.end()) - s.begin());
  };
  if (count_systems(sys_train) < 2 || count_systems(sys_val) < 2) {
    throw DataError("stack: each meta partition needs at least 2 systems");
  }

  StackedModel out;
  out.K = bins.K;
  out.score_lo = bins.lo;
  out.score_hi = bins.hi;
  out.sigma = sigma;
  for (const auto& m : models) {
    out.model_names.push_back(m.name);
    out.model_cumulative.push_back(!m.predictions.empty() && m.predictions.front().cumulative);
  }

  for (Target target : {Target::MI, Target::TA}) {
    const auto& y = target == Target::MI ? y_mi : y_ta;
    TargetStack& ts = target == Target::MI ? out.mi : out.ta;
    const FeatureMatrix X = assemble_features(models, ids, target, bins, sigma);
    const FeatureMatrix X_train = pick_rows(X, split.train);
    const FeatureMatrix X_val = pick_rows(X, split.val);
    const auto y_train = pick(y, split.train);
    const auto y_val = pick(y, split.val);

    std::optional<std::size_t> best;
    double best_srcc = -std::numeric_limits<double>::infinity();
    std::vector<RidgeModel> fits;
    for (std::size_t g = 0; g < lambda_grid.size(); ++g) {
      fits.push_back(ridge_fit(X_train, y_train, lambda_grid[g]));
      const Correlation c = system_srcc(ridge_predict(fits.back(), X_val, bins.lo, bins.hi), y_val, sys_val);
      ts.grid.emplace_back(lambda_grid[g], c);
      if (c && *c > best_srcc) {
        best_srcc = *c;
        best = g;
      }
    }
    if (!best) throw NumericalError(std::string("stack: meta-validation SRCC undefined for every lambda (") +
                                    to_string(target) + ")");
    const RidgeModel& chosen = fits[*best];
    ts.meta_val_srcc = best_srcc;
    const Correlation tr = system_srcc(ridge_predict(chosen, X_train, bins.lo, bins.hi), y_train, sys_train);
    ts.meta_train_srcc = tr ? *tr : std::numeric_limits<double>::quiet_NaN();
    ts.model = ridge_fit(X, y, chosen.lambda);
  }
  return out;
}

// Applies a stacked model to base-model predictions given in the stored order.
inline std::vector<ScoredClip> stacked_predict(const StackedModel& sm, const std::vector<BaseModel>& models) {
  if (models.size() != sm.model_names.size()) {
    throw UsageError("stacked_predict: expected " + std::to_string(sm.model_names.size()) + " base models, got " +
                     std::to_string(models.size()));
  }
  for (std::size_t m = 0; m < models.size(); ++m) {
    const bool cum = !models[m].predictions.empty() && models[m].predictions.front().cumulative;
    if (cum != sm.model_cumulative[m]) {
      throw UsageError("stacked_predict: base model " + std::to_string(m) + " (" + models[m].name +
                       ") does not match the stored ordering (" + sm.model_names[m] + ")");
    }
  }
  std::vector<std::string> ids;
  for (const auto& p : models.front().predictions) ids.push_back(p.clip_id);
  const ScoreBins bins = make_bins(sm.K, sm.score_lo, sm.score_hi);
  const auto mi = ridge_predict(sm.mi.model, assemble_features(models, ids, Target::MI, bins, sm.sigma), bins.lo, bins.hi);
  const auto ta = ridge_predict(sm.ta.model, assemble_features(models, ids, Target::TA, bins, sm.sigma), bins.lo, bins.hi);
  std::vector<ScoredClip> out;
  for (std::size_t i = 0; i < ids.size(); ++i) out.push_back({ids[i], mi[i], ta[i]});
  return out;
}

inline nlohmann::json to_json(const StackedModel& sm) {
  auto target = [](const TargetStack& ts) {
    nlohmann::json grid = nlohmann::json::array();
    for (const auto& [lambda, c] : ts.grid) {
      grid.push_back({{"lambda", lambda}, {"meta_val_srcc", c ? nlohmann::json(*c) : nlohmann::json(nullptr)}});
    }
    return nlohmann::json{{"lambda", ts.model.lambda},
                          {"weights", ts.model.weights},
                          {"intercept", ts.model.intercept},
                          {"meta_train_srcc", ts.meta_train_srcc},
                          {"meta_val_srcc", ts.meta_val_srcc},
                          {"grid", grid}};
  };
  return nlohmann::json{{"models", sm.model_names}, {"cumulative", sm.model_cumulative},
                        {"K", sm.K},                {"score_lo", sm.score_lo},
                        {"score_hi", sm.score_hi},  {"sigma", sm.sigma},
                        {"mi", target(sm.mi)},      {"ta", target(sm.ta)}};
}

inline StackedModel stacked_from_json(const nlohmann::json& j) {
  StackedModel sm;
  try {
    sm.model_names = j.at("models").get<std::vector<std::string>>();
    sm.model_cumulative = j.at("cumulative").get<std::vector<bool>>();
    sm.K = j.at("K").get<std::size_t>();
    sm.score_lo = j.at("score_lo").get<double>();
    sm.score_hi = j.at("score_hi").get<double>();
    sm.sigma = j.at("sigma").get<double>();
    for (auto [key, ts] : {std::pair{"mi", &sm.mi}, std::pair{"ta", &sm.ta}}) {
      const auto& t = j.at(key);
      ts->model.lambda = t.at("lambda").get<double>();
      ts->model.weights = t.at("weights").get<std::vector<double>>();
      ts->model.intercept = t.at("intercept").get<double>();
      ts->meta_train_srcc = t.at("meta_train_srcc").is_null() ? std::nan("") : t.at("meta_train_srcc").get<double>();
      ts->meta_val_srcc = t.at("meta_val_srcc").get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("stacked model: ") + e.what());
  }
  if (sm.model_names.size() != sm.model_cumulative.size()) throw DataError("stacked model: inconsistent model list");
  return sm;
}

}  // namespace doramos
