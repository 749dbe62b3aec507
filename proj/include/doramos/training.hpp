#pragma once

// Criteria, the per-clip training loss, and the epoch loop with dev-set
// early stopping on mean system-level SRCC.

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "doramos/autodiff.hpp"
#include "doramos/dataio.hpp"
#include "doramos/labels.hpp"
#include "doramos/losses.hpp"
#include "doramos/metrics.hpp"
#include "doramos/network.hpp"
#include "doramos/optimizer.hpp"
#include "doramos/rng.hpp"

namespace doramos {

enum class Criterion { L1, CE, Gaussian };

NLOHMANN_JSON_SERIALIZE_ENUM(Criterion, {{Criterion::L1, "l1"}, {Criterion::CE, "ce"}, {Criterion::Gaussian, "gaussian"}})

inline std::string to_string(Criterion c) { return nlohmann::json(c).get<std::string>(); }

struct TrainConfig {
  Criterion criterion = Criterion::Gaussian;
  double lr = 1e-3;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 200;
  std::size_t patience = 20;
  std::uint64_t seed = 0;
  double w_mi = 1.0;
  double w_ta = 1.0;
  double sigma = 0.2;

  void validate() const {
    if (!(lr > 0.0)) throw UsageError("learning rate must be > 0");
    if (batch_size < 1) throw UsageError("batch size must be >= 1");
    if (patience < 1) throw UsageError("patience must be >= 1");
    if (max_epochs < 1) throw UsageError("max_epochs must be >= 1");
    if (w_mi < 0.0 || w_ta < 0.0 || (w_mi == 0.0 && w_ta == 0.0)) {
      throw UsageError("loss weights must be >= 0 and not both 0");
    }
    if (!(sigma > 0.0)) throw UsageError("sigma must be > 0");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"criterion", c.criterion}, {"lr", c.lr},         {"batch_size", c.batch_size},
                     {"max_epochs", c.max_epochs}, {"patience", c.patience}, {"seed", c.seed},
                     {"w_mi", c.w_mi},           {"w_ta", c.w_ta},     {"sigma", c.sigma}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.criterion = parse_enum<Criterion>(j.at("criterion").get<std::string>());
  j.at("lr").get_to(c.lr);
  j.at("batch_size").get_to(c.batch_size);
  j.at("max_epochs").get_to(c.max_epochs);
  j.at("patience").get_to(c.patience);
  j.at("seed").get_to(c.seed);
  j.at("w_mi").get_to(c.w_mi);
  j.at("w_ta").get_to(c.w_ta);
  j.at("sigma").get_to(c.sigma);
}

// Loss of one head against score s. Cumulative heads always use the CORAL
// objective; classification heads use the configured criterion.
inline Var head_loss(Var logits, double s, bool cumulative, Criterion criterion, const ScoreBins& bins,
                     double sigma) {
  if (cumulative) return loss_coral(logits, coral_targets(s, bins));
  switch (criterion) {
    case Criterion::L1:
      return loss_l1(expected_score(logits, bins), s);
    case Criterion::CE:
      return loss_hard_ce(logits, hard_label(s, bins));
    case Criterion::Gaussian:
      return loss_soft_ce(logits, gaussian_soften(s, bins, SofteningConfig{sigma}));
  }
  throw UsageError("unknown criterion");
}

// w_mi * L_mi + w_ta * L_ta for one clip.
inline Var total_loss(const HeadOutputs& out, const ClipRecord& record, const ModelConfig& model,
                      const TrainConfig& cfg, const ScoreBins& bins) {
  if (!record.mi || !record.ta) throw DataError("clip " + record.clip_id + " lacks MI/TA training scores");
  const Var mi = head_loss(out.mi, *record.mi, model.cumulative(), cfg.criterion, bins, cfg.sigma);
  const Var ta = head_loss(out.ta, *record.ta, model.cumulative(), cfg.criterion, bins, cfg.sigma);
  return ad::add(ad::scale(mi, cfg.w_mi), ad::scale(ta, cfg.w_ta));
}

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  ParamStore params;
  double best_dev_metric = std::numeric_limits<double>::quiet_NaN();
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
};

// Tensors for every clip, widened once.
struct ClipTensors {
  Tensor audio;
  Tensor text;
};

inline std::vector<ClipTensors> widen(const Dataset& ds) {
  std::vector<ClipTensors> out;
  out.reserve(ds.records.size());
  for (const auto& r : ds.records) out.push_back({r.audio.to_tensor(), r.text.to_tensor()});
  return out;
}

inline std::vector<Prediction> predict_all(const ModelConfig& cfg, const ParamStore& params,
                                           const std::vector<ClipTensors>& clips) {
  std::vector<Prediction> out;
  out.reserve(clips.size());
  for (const auto& c : clips) out.push_back(predict(cfg, params, c.audio, c.text));
  return out;
}

inline std::vector<Prediction> predict_dataset(const ModelConfig& cfg, const ParamStore& params, const Dataset& ds) {
  return predict_all(cfg, params, widen(ds));
}

struct DevScore {
  Correlation srcc_mi;
  Correlation srcc_ta;

  // Mean of both; NaN when either is undefined.
  double mean() const {
    if (!srcc_mi || !srcc_ta) return std::numeric_limits<double>::quiet_NaN();
    return 0.5 * (*srcc_mi + *srcc_ta);
  }
};

inline DevScore system_srcc(const std::vector<Prediction>& preds, const Dataset& ds) {
  std::vector<double> pm, pt, tm, tt;
  std::vector<std::string> systems;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& r = ds.records[i];
    pm.push_back(preds[i].mi_score);
    pt.push_back(preds[i].ta_score);
    tm.push_back(*r.mi);
    tt.push_back(*r.ta);
    systems.push_back(r.system_id);
  }
  const auto smi = system_level(pm, tm, systems);
  const auto sta = system_level(pt, tt, systems);
  return {spearman(smi.pred, smi.truth), spearman(sta.pred, sta.truth)};
}

struct TrainHooks {
  // Replaces the dev evaluation (tests use it to script the metric).
  std::function<DevScore(const ParamStore&, std::size_t epoch)> dev_eval;
  // Receives the tab-separated log, header first.
  std::ostream* log = nullptr;
};

inline std::string format_metric(const Correlation& c) {
  if (!c) return "nan";
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << *c;
  return os.str();
}

inline Checkpoint train(const ModelConfig& model, const Dataset& train_set, const Dataset& dev_set,
                        const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  model.validate();
  cfg.validate();
  if (train_set.records.empty()) throw DataError("train: empty training set");
  if (dev_set.records.empty()) throw DataError("train: empty dev set");
  if (dev_set.system_ids().size() < 2) throw DataError("train: dev set must cover at least 2 systems");
  for (const Dataset* ds : {&train_set, &dev_set}) {
    for (const auto& r : ds->records) {
      if (!r.mi || !r.ta) throw DataError("train: clip " + r.clip_id + " lacks MI/TA scores");
      if (r.audio.cols != model.d_audio || r.text.cols != model.d_text) {
        throw DataError("train: clip " + r.clip_id + " embedding widths do not match the model");
      }
    }
  }

  const ScoreBins bins = model.bins();
  const auto train_clips = widen(train_set);
  const auto dev_clips = widen(dev_set);

  Checkpoint ckpt{model, cfg, init_params(model, cfg.seed)};
  ParamStore& params = ckpt.params;
  ParamStore best = params;
  AdamState adam = AdamState::for_params(params);
  Rng order_rng(derive_seed(cfg.seed, "shuffle"));
  Rng dropout_rng(derive_seed(cfg.seed, "dropout"));
  const auto names = params.names();

  auto dev_eval = hooks.dev_eval ? hooks.dev_eval : [&](const ParamStore& p, std::size_t) {
    return system_srcc(predict_all(model, p, dev_clips), dev_set);
  };

  if (hooks.log) *hooks.log << "epoch\ttrain_loss\tdev_srcc_mi\tdev_srcc_ta\n";

  double best_metric = -std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<std::size_t> order(train_clips.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    order_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      ParamStore grads = params.zeros_like();
      double batch_loss = 0.0;
      // Clips are accumulated in batch order so the sum is bit-reproducible.
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t i = order[k];
        Tape tape;
        const Graph g{tape, params, model.dropout, &dropout_rng};
        const HeadOutputs out = forward_graph(model, g, train_clips[i].audio, train_clips[i].text);
        const Var loss = total_loss(out, train_set.records[i], model, cfg, bins);
        const double lv = loss.value().item();
        if (!std::isfinite(lv)) {
          throw NumericalError("non-finite loss in epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(batch_index) + " (clip " + train_set.records[i].clip_id + ")");
        }
        batch_loss += lv;
        const ParamStore clip_grads = tape.gradients(loss, names);
        for (auto& [name, gsum] : grads) {
          const Tensor& gc = clip_grads.at(name);
          for (std::size_t e = 0; e < gsum.size(); ++e) gsum[e] += gc[e];
        }
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (auto& [_, gsum] : grads) {
        for (double& v : gsum.data()) v *= inv;
      }
      adam_step(params, grads, adam, cfg.lr);
      epoch_loss += batch_loss;
    }
    epoch_loss /= static_cast<double>(order.size());

    const DevScore dev = dev_eval(params, epoch);
    const double metric = dev.mean();
    if (hooks.log) {
      std::ostringstream os;
      os.precision(8);
      os << epoch << '\t' << epoch_loss << '\t' << format_metric(dev.srcc_mi) << '\t' << format_metric(dev.srcc_ta)
         << '\n';
      *hooks.log << os.str();
    }
    ckpt.epochs_run = epoch;
    if (std::isfinite(metric) && metric > best_metric) {
      best_metric = metric;
      best = params;
      ckpt.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  if (ckpt.best_epoch > 0) {
    params = std::move(best);
    ckpt.best_dev_metric = best_metric;
  }
  return ckpt;
}

}  // namespace doramos
