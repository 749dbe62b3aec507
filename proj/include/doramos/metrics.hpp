#pragma once

// Rank-correlation and error metrics at utterance and system level.
//
// Correlations return std::nullopt when undefined (a constant input), so a
// degenerate case can never masquerade as a correlation of zero.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "doramos/dataio.hpp"
#include "doramos/error.hpp"

namespace doramos {

using Correlation = std::optional<double>;

namespace metrics_detail {

inline void require_pair(std::span<const double> x, std::span<const double> y, const char* what) {
  if (x.size() != y.size()) throw UsageError(std::string(what) + ": inputs differ in length");
  if (x.size() < 2) throw UsageError(std::string(what) + ": need at least 2 observations");
}

// Merge sort that counts inversions (pairs out of order).
inline std::uint64_t count_inversions(std::vector<double>& v, std::vector<double>& buf, std::size_t lo,
                                      std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::uint64_t inv = count_inversions(v, buf, lo, mid) + count_inversions(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      inv += mid - i;
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return inv;
}

// Sum of t(t-1)/2 over runs of equal values in a sorted sequence, with
// equality decided by `same`.
template <typename Same>
std::uint64_t tied_pairs(std::size_t n, Same same) {
  std::uint64_t total = 0, run = 1;
  for (std::size_t i = 1; i <= n; ++i) {
    if (i < n && same(i - 1, i)) {
      ++run;
    } else {
      total += run * (run - 1) / 2;
      run = 1;
    }
  }
  return total;
}

}  // namespace metrics_detail

inline Correlation pearson(std::span<const double> x, std::span<const double> y) {
  metrics_detail::require_pair(x, y, "pearson");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// 1-based ranks; tied values share the average of their positions.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline Correlation spearman(std::span<const double> x, std::span<const double> y) {
  metrics_detail::require_pair(x, y, "spearman");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

// Kendall tau-b in O(n log n) (Knight's algorithm).
inline Correlation kendall_tau_b(std::span<const double> x, std::span<const double> y) {
  using namespace metrics_detail;
  require_pair(x, y, "kendall_tau_b");
  const std::size_t n = x.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (x[a] != x[b]) return x[a] < x[b];
    return y[a] < y[b];
  });
  const std::uint64_t ties_x = tied_pairs(n, [&](std::size_t i, std::size_t j) { return x[idx[i]] == x[idx[j]]; });
  const std::uint64_t ties_xy = tied_pairs(
      n, [&](std::size_t i, std::size_t j) { return x[idx[i]] == x[idx[j]] && y[idx[i]] == y[idx[j]]; });

  std::vector<double> ys(n), buf(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = y[idx[i]];
  const std::uint64_t discordant = count_inversions(ys, buf, 0, n);
  const std::uint64_t ties_y = tied_pairs(n, [&](std::size_t i, std::size_t j) { return ys[i] == ys[j]; });

  const std::uint64_t total = static_cast<std::uint64_t>(n) * (n - 1) / 2;
  const double numerator = static_cast<double>(total) - static_cast<double>(ties_x) - static_cast<double>(ties_y) +
                           static_cast<double>(ties_xy) - 2.0 * static_cast<double>(discordant);
  const double denom =
      std::sqrt(static_cast<double>(total - ties_x)) * std::sqrt(static_cast<double>(total - ties_y));
  if (denom <= 0.0) return std::nullopt;
  return std::clamp(numerator / denom, -1.0, 1.0);
}

inline double mse(std::span<const double> x, std::span<const double> y) {
  metrics_detail::require_pair(x, y, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return s / static_cast<double>(x.size());
}

struct SystemMeans {
  std::vector<std::string> systems;  // sorted
  std::vector<double> pred;
  std::vector<double> truth;
};

// Per-system arithmetic means, ordered by system identifier.
inline SystemMeans system_level(std::span<const double> preds, std::span<const double> truths,
                                std::span<const std::string> system_of) {
  if (preds.size() != truths.size() || preds.size() != system_of.size()) {
    throw UsageError("system_level: inputs differ in length");
  }
  std::map<std::string, std::pair<std::pair<double, double>, std::size_t>> acc;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (system_of[i].empty()) throw DataError("system_level: clip " + std::to_string(i) + " has no system");
    auto& [sums, count] = acc[system_of[i]];
    sums.first += preds[i];
    sums.second += truths[i];
    ++count;
  }
  if (acc.size() < 2) throw DataError("system_level: need at least 2 systems");
  SystemMeans out;
  for (const auto& [system, entry] : acc) {
    const double n = static_cast<double>(entry.second);
    out.systems.push_back(system);
    out.pred.push_back(entry.first.first / n);
    out.truth.push_back(entry.first.second / n);
  }
  return out;
}

// Same, keyed by clip id through an explicit clip -> system map.
inline SystemMeans system_level(std::span<const double> preds, std::span<const double> truths,
                                std::span<const std::string> clip_ids,
                                const std::unordered_map<std::string, std::string>& system_of) {
  std::vector<std::string> systems;
  systems.reserve(clip_ids.size());
  for (const auto& id : clip_ids) {
    auto it = system_of.find(id);
    if (it == system_of.end()) throw DataError("system_level: clip " + id + " is not mapped to a system");
    systems.push_back(it->second);
  }
  return system_level(preds, truths, systems);
}

struct MetricCells {
  Correlation srcc;
  Correlation ktau;
  Correlation lcc;
  double mse = 0.0;
};

inline MetricCells compute_cells(std::span<const double> pred, std::span<const double> truth) {
  return {spearman(pred, truth), kendall_tau_b(pred, truth), pearson(pred, truth), mse(pred, truth)};
}

// 2 targets x 2 levels x {SRCC, KTAU, MSE, LCC}.
struct EvalReport {
  MetricCells utt_mi, utt_ta, sys_mi, sys_ta;
};

struct ScoredClip {
  std::string clip_id;
  double mi = 0.0;
  double ta = 0.0;
};

inline EvalReport evaluate(std::span<const ScoredClip> predictions, const Dataset& truth) {
  std::unordered_map<std::string, const ClipRecord*> by_id;
  for (const auto& r : truth.records) by_id.emplace(r.clip_id, &r);
  std::vector<double> pm, pt, tm, tt;
  std::vector<std::string> systems;
  for (const auto& p : predictions) {
    auto it = by_id.find(p.clip_id);
    if (it == by_id.end()) throw DataError("evaluate: no ground truth for clip " + p.clip_id);
    const ClipRecord& r = *it->second;
    if (!r.mi || !r.ta) throw DataError("evaluate: clip " + p.clip_id + " lacks MI/TA scores");
    pm.push_back(p.mi);
    pt.push_back(p.ta);
    tm.push_back(*r.mi);
    tt.push_back(*r.ta);
    systems.push_back(r.system_id);
  }
  EvalReport rep;
  rep.utt_mi = compute_cells(pm, tm);
  rep.utt_ta = compute_cells(pt, tt);
  const auto smi = system_level(pm, tm, systems);
  const auto sta = system_level(pt, tt, systems);
  rep.sys_mi = compute_cells(smi.pred, smi.truth);
  rep.sys_ta = compute_cells(sta.pred, sta.truth);
  return rep;
}

inline nlohmann::json to_json(const EvalReport& rep) {
  auto corr = [](const Correlation& c) { return c ? nlohmann::json(*c) : nlohmann::json(nullptr); };
  nlohmann::json j;
  auto put = [&](const std::string& level, const std::string& target, const MetricCells& m) {
    j[level + "_srcc_" + target] = corr(m.srcc);
    j[level + "_ktau_" + target] = corr(m.ktau);
    j[level + "_lcc_" + target] = corr(m.lcc);
    j[level + "_mse_" + target] = m.mse;
  };
  put("utt", "mi", rep.utt_mi);
  put("utt", "ta", rep.utt_ta);
  put("sys", "mi", rep.sys_mi);
  put("sys", "ta", rep.sys_ta);
  return j;
}

}  // namespace doramos
