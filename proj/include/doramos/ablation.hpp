#pragma once

// Controlled ablation: the criterion table varies only the loss at the
// reference architecture; the architecture table varies temporal encoder and
// pooling under the reference loss. Each cell is trained once per seed and
// scored on the dev set at system level.

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "doramos/metrics.hpp"
#include "doramos/training.hpp"

namespace doramos {

struct AblationCell {
  std::string table;  // "criterion" or "architecture"
  Criterion criterion = Criterion::Gaussian;
  Temporal temporal = Temporal::Transformer;
  Pooling pooling = Pooling::Attention;

  std::string label() const {
    if (table == "criterion") return to_string(criterion);
    return std::string(to_string(temporal)) + "+" + to_string(pooling);
  }
};

inline std::vector<AblationCell> ablation_grid() {
  std::vector<AblationCell> cells;
  for (Criterion c : {Criterion::L1, Criterion::CE, Criterion::Gaussian}) {
    cells.push_back({"criterion", c, Temporal::Transformer, Pooling::Attention});
  }
  for (Temporal t : {Temporal::Transformer, Temporal::BiLstm}) {
    for (Pooling p : {Pooling::Mean, Pooling::Attention}) cells.push_back({"architecture", Criterion::Gaussian, t, p});
  }
  return cells;
}

struct CellResult {
  AblationCell cell;
  std::uint64_t seed = 0;
  EvalReport dev;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
};

inline CellResult run_cell(const AblationCell& cell, ModelConfig model, TrainConfig train_cfg, const Dataset& train_set,
                           const Dataset& dev_set, std::uint64_t seed) {
  model.temporal = cell.temporal;
  model.pooling = cell.pooling;
  train_cfg.criterion = cell.criterion;
  train_cfg.seed = seed;
  const Checkpoint ckpt = train(model, train_set, dev_set, train_cfg);
  const auto preds = predict_dataset(ckpt.model, ckpt.params, dev_set);
  std::vector<ScoredClip> scored;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    scored.push_back({dev_set.records[i].clip_id, preds[i].mi_score, preds[i].ta_score});
  }
  return {cell, seed, evaluate(scored, dev_set), ckpt.best_epoch, ckpt.epochs_run};
}

struct MeanSd {
  double mean = std::nan("");
  double sd = std::nan("");
  std::size_t n = 0;  // defined values only
};

// Sample standard deviation; sd is 0 for a single value.
inline MeanSd mean_sd(const std::vector<Correlation>& values) {
  MeanSd out;
  double sum = 0.0;
  for (const auto& v : values) {
    if (v) {
      sum += *v;
      ++out.n;
    }
  }
  if (out.n == 0) return out;
  out.mean = sum / static_cast<double>(out.n);
  double ss = 0.0;
  for (const auto& v : values) {
    if (v) ss += (*v - out.mean) * (*v - out.mean);
  }
  out.sd = out.n > 1 ? std::sqrt(ss / static_cast<double>(out.n - 1)) : 0.0;
  return out;
}

inline std::string format_mean_sd(const MeanSd& m) {
  if (m.n == 0) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f ± %.3f", m.mean, m.sd);
  return buf;
}

// Two tables of system-level dev SRCC/KTAU, mean ± sd over seeds.
inline std::string format_ablation(const std::vector<CellResult>& results) {
  std::ostringstream os;
  for (const char* table : {"criterion", "architecture"}) {
    std::vector<std::string> labels;
    std::map<std::string, std::vector<const CellResult*>> rows;
    for (const auto& r : results) {
      if (r.cell.table != table) continue;
      if (!rows.count(r.cell.label())) labels.push_back(r.cell.label());
      rows[r.cell.label()].push_back(&r);
    }
    if (labels.empty()) continue;
    os << "# " << table << " (dev, system level, mean ± sd over seeds)\n";
    os << table << "\tSRCC_MI\tKTAU_MI\tSRCC_TA\tKTAU_TA\n";
    for (const auto& label : labels) {
      std::vector<Correlation> smi, kmi, sta, kta;
      for (const CellResult* r : rows[label]) {
        smi.push_back(r->dev.sys_mi.srcc);
        kmi.push_back(r->dev.sys_mi.ktau);
        sta.push_back(r->dev.sys_ta.srcc);
        kta.push_back(r->dev.sys_ta.ktau);
      }
      os << label << '\t' << format_mean_sd(mean_sd(smi)) << '\t' << format_mean_sd(mean_sd(kmi)) << '\t'
         << format_mean_sd(mean_sd(sta)) << '\t' << format_mean_sd(mean_sd(kta)) << '\n';
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace doramos
