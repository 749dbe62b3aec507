#pragma once

// Ordinal targets over K equal-width score bins: Gaussian-softened soft
// labels, hard bin indices, cumulative (CORAL) indicators, and decoders back
// to a scalar score.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "doramos/error.hpp"

namespace doramos {

struct ScoreBins {
  std::size_t K = 0;
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> centers;     // K entries
  std::vector<double> boundaries;  // K-1 interior cut points

  double width() const { return (hi - lo) / static_cast<double>(K); }

  void require_in_range(double s, const char* what) const {
    if (!(s >= lo && s <= hi)) {
      throw DataError(std::string(what) + ": score " + std::to_string(s) + " outside [" + std::to_string(lo) +
                      ", " + std::to_string(hi) + "]");
    }
  }
};

inline ScoreBins make_bins(std::size_t K = 20, double lo = 1.0, double hi = 5.0) {
  if (K < 2) throw UsageError("make_bins: need at least 2 bins");
  if (!(lo < hi)) throw UsageError("make_bins: empty score range");
  ScoreBins bins{K, lo, hi, {}, {}};
  const double w = (hi - lo) / static_cast<double>(K);
  bins.centers.reserve(K);
  for (std::size_t k = 0; k < K; ++k) bins.centers.push_back(lo + (static_cast<double>(k) + 0.5) * w);
  bins.boundaries.reserve(K - 1);
  for (std::size_t j = 1; j < K; ++j) bins.boundaries.push_back(lo + static_cast<double>(j) * w);
  return bins;
}

struct SofteningConfig {
  double sigma = 0.2;  // one bin width for K=20 over [1,5]
};

// y_k proportional to exp(-(s - c_k)^2 / (2 sigma^2)), normalized over the K bins.
inline std::vector<double> gaussian_soften(double s, const ScoreBins& bins, const SofteningConfig& cfg = {}) {
  if (!(cfg.sigma > 0.0)) throw UsageError("gaussian_soften: sigma must be positive");
  bins.require_in_range(s, "gaussian_soften");
  // Shift exponents by the smallest squared distance so the peak term is
  // exp(0) and tiny sigmas cannot underflow every entry.
  double min_d2 = INFINITY;
  for (double c : bins.centers) min_d2 = std::min(min_d2, (s - c) * (s - c));
  std::vector<double> y(bins.K);
  double z = 0.0;
  for (std::size_t k = 0; k < bins.K; ++k) {
    const double d2 = (s - bins.centers[k]) * (s - bins.centers[k]);
    y[k] = std::exp(-(d2 - min_d2) / (2.0 * cfg.sigma * cfg.sigma));
    z += y[k];
  }
  for (double& v : y) v /= z;
  return y;
}

// Index of the bin containing s. Interior boundaries belong to the upper
// bin; s == hi maps to the last bin.
inline std::size_t hard_label(double s, const ScoreBins& bins) {
  bins.require_in_range(s, "hard_label");
  std::size_t k = 0;
  while (k < bins.boundaries.size() && s >= bins.boundaries[k]) ++k;
  return k;
}

// levels[j] = 1 iff s > b_{j+1}; always a run of ones followed by zeros.
inline std::vector<double> coral_targets(double s, const ScoreBins& bins) {
  bins.require_in_range(s, "coral_targets");
  std::vector<double> levels(bins.K - 1);
  for (std::size_t j = 0; j + 1 < bins.K; ++j) levels[j] = s > bins.boundaries[j] ? 1.0 : 0.0;
  return levels;
}

inline double decode_expected(std::span<const double> dist, const ScoreBins& bins) {
  if (dist.size() != bins.K) {
    throw UsageError("decode_expected: distribution has " + std::to_string(dist.size()) + " entries, expected " +
                     std::to_string(bins.K));
  }
  double total = 0.0, e = 0.0;
  for (std::size_t k = 0; k < bins.K; ++k) {
    if (dist[k] < 0.0) throw DataError("decode_expected: negative probability");
    total += dist[k];
    e += dist[k] * bins.centers[k];
  }
  if (std::fabs(total - 1.0) > 1e-6) {
    throw DataError("decode_expected: distribution sums to " + std::to_string(total));
  }
  return e;
}

// Counts cumulative probabilities strictly above 0.5 and returns that bin's center.
inline double decode_coral(std::span<const double> cumprobs, const ScoreBins& bins) {
  if (cumprobs.size() + 1 != bins.K) {
    throw UsageError("decode_coral: expected " + std::to_string(bins.K - 1) + " cumulative probabilities, got " +
                     std::to_string(cumprobs.size()));
  }
  std::size_t r = 0;
  for (double p : cumprobs) r += p > 0.5 ? 1 : 0;
  return bins.centers[r];
}

}  // namespace doramos
