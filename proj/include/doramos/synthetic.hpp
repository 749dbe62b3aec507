#pragma once

// Planted-structure stand-in for a rated text-to-music corpus.
//
// Each system has a latent quality q and alignment a in [1.5, 4.5]; each clip
// jitters both. The audio embedding hides them along fixed directions:
//
//   u . mean_t(audio)   = (q_clip - 3) / 2
//   m_j . mean_t(audio) = 0.25 (a_clip - 1) + 0.5
//
// where j is the clip's prompt topic. Half of the frames carry topic j, the
// rest carry a distractor topic with an independent energy in the same
// range, so the alignment is only identifiable with the prompt: text rows
// are p_j plus noise orthogonal to every prompt direction. All other audio energy is noise orthogonal to u
// and the m_i. Recorded scores add Normal(0, noise_sd) label noise.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "doramos/dataio.hpp"
#include "doramos/error.hpp"
#include "doramos/fileio.hpp"
#include "doramos/rng.hpp"

namespace doramos {

struct SynthConfig {
  std::size_t n_systems = 16;
  std::size_t clips_per_system = 24;
  std::size_t t_min = 20;
  std::size_t t_max = 60;
  std::size_t text_min = 4;
  std::size_t text_max = 12;
  std::size_t d_audio = 32;
  std::size_t d_text = 16;
  std::size_t n_topics = 8;
  double noise_sd = 0.3;
  std::uint64_t seed = 0;
};

struct SyntheticSet {
  Dataset dataset;
  nlohmann::json sidecar;
};

namespace synth_detail {

using Vec = std::vector<double>;

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// n orthonormal vectors in R^d by Gram-Schmidt over Gaussian draws.
inline std::vector<Vec> orthonormal(std::size_t n, std::size_t d, Rng& rng) {
  std::vector<Vec> basis;
  while (basis.size() < n) {
    Vec v(d);
    for (double& x : v) x = rng.normal();
    for (const Vec& b : basis) {
      const double c = dot(v, b);
      for (std::size_t i = 0; i < d; ++i) v[i] -= c * b[i];
    }
    const double norm = std::sqrt(dot(v, v));
    if (norm < 1e-6) continue;
    for (double& x : v) x /= norm;
    basis.push_back(std::move(v));
  }
  return basis;
}

// Gaussian noise with the components along `exclude` removed.
inline Vec orthogonal_noise(std::size_t d, double sd, const std::vector<Vec>& exclude, Rng& rng) {
  Vec v(d);
  for (double& x : v) x = rng.normal(0.0, sd);
  for (const Vec& b : exclude) {
    const double c = dot(v, b);
    for (std::size_t i = 0; i < d; ++i) v[i] -= c * b[i];
  }
  return v;
}

inline std::string system_name(std::size_t s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sys%02zu", s);
  return buf;
}

inline std::string clip_name(std::size_t s, std::size_t c) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "sys%02zu_clip%03zu", s, c);
  return buf;
}

}  // namespace synth_detail

inline constexpr double kAlignmentSlope = 0.25;
inline constexpr double kAlignmentOffset = 0.5;

inline SyntheticSet generate_synthetic(const SynthConfig& cfg) {
  using namespace synth_detail;
  if (cfg.n_systems < 2) throw UsageError("generate_synthetic: need at least 2 systems");
  if (cfg.clips_per_system < 1) throw UsageError("generate_synthetic: need at least 1 clip per system");
  if (cfg.t_min < 1 || cfg.t_min > cfg.t_max) throw UsageError("generate_synthetic: invalid audio length range");
  if (cfg.text_min < 1 || cfg.text_min > cfg.text_max) throw UsageError("generate_synthetic: invalid text length range");
  if (!(cfg.noise_sd >= 0.0)) throw UsageError("generate_synthetic: noise_sd must be >= 0");
  if (cfg.n_topics < 2 || cfg.d_audio < cfg.n_topics + 2 || cfg.d_text < cfg.n_topics + 1) {
    throw UsageError("generate_synthetic: need n_topics >= 2, d_audio >= n_topics + 2, d_text >= n_topics + 1");
  }

  Rng rng(derive_seed(cfg.seed, "synthetic"));
  const auto audio_dirs = orthonormal(cfg.n_topics + 1, cfg.d_audio, rng);
  const Vec& quality_dir = audio_dirs[0];
  const std::vector<Vec> audio_topics(audio_dirs.begin() + 1, audio_dirs.end());
  const auto text_topics = orthonormal(cfg.n_topics, cfg.d_text, rng);

  SyntheticSet out;
  auto& sc = out.sidecar;
  sc["seed"] = cfg.seed;
  sc["noise_sd"] = cfg.noise_sd;
  sc["quality_dir"] = quality_dir;
  sc["audio_topics"] = audio_topics;
  sc["text_topics"] = text_topics;
  sc["quality_decode"] = {{"center", 3.0}, {"scale", 2.0}};
  sc["alignment_decode"] = {{"slope", kAlignmentSlope}, {"offset", kAlignmentOffset}};
  sc["systems"] = nlohmann::json::object();
  sc["clips"] = nlohmann::json::object();

  Dataset& ds = out.dataset;
  ds.split = "all";
  ds.d_audio = cfg.d_audio;
  ds.d_text = cfg.d_text;

  auto jitter = [&]() { return std::clamp(rng.normal(0.0, 0.25), -0.5, 0.5); };

  for (std::size_t s = 0; s < cfg.n_systems; ++s) {
    const std::string system = system_name(s);
    const double q_sys = rng.uniform(1.5, 4.5);
    const double a_sys = rng.uniform(1.5, 4.5);
    sc["systems"][system] = {{"quality", q_sys}, {"alignment", a_sys}};

    for (std::size_t c = 0; c < cfg.clips_per_system; ++c) {
      const double q = q_sys + jitter();
      const double a = a_sys + jitter();
      const std::size_t topic = rng.index(cfg.n_topics);
      std::size_t distractor = rng.index(cfg.n_topics - 1);
      if (distractor >= topic) ++distractor;
      const std::size_t T = cfg.t_min + rng.index(cfg.t_max - cfg.t_min + 1);
      const std::size_t Tt = cfg.text_min + rng.index(cfg.text_max - cfg.text_min + 1);

      // Frame roles: the first n_on shuffled positions are on-topic.
      const std::size_t n_on = (T + 1) / 2;
      std::vector<std::size_t> order(T);
      for (std::size_t t = 0; t < T; ++t) order[t] = t;
      rng.shuffle(order);
      std::vector<bool> on_topic(T, false);
      for (std::size_t k = 0; k < n_on; ++k) on_topic[order[k]] = true;

      const double align_stat = kAlignmentSlope * (a - 1.0) + kAlignmentOffset;
      const double on_coef = align_stat * static_cast<double>(T) / static_cast<double>(n_on);
      const double off_mean = rng.uniform(kAlignmentOffset, kAlignmentSlope * 4.0 + kAlignmentOffset);
      const double off_coef =
          T > n_on ? off_mean * static_cast<double>(T) / static_cast<double>(T - n_on) : 0.0;

      std::vector<double> quality_coef(T);
      double qmean = 0.0;
      for (double& v : quality_coef) qmean += (v = rng.normal(0.0, 0.5));
      qmean /= static_cast<double>(T);
      for (double& v : quality_coef) v += (q - 3.0) / 2.0 - qmean;

      ClipRecord r;
      r.clip_id = clip_name(s, c);
      r.system_id = system;
      r.audio.rows = static_cast<std::uint32_t>(T);
      r.audio.cols = static_cast<std::uint32_t>(cfg.d_audio);
      r.audio.values.reserve(T * cfg.d_audio);
      for (std::size_t t = 0; t < T; ++t) {
        Vec frame = orthogonal_noise(cfg.d_audio, 0.5, audio_dirs, rng);
        const Vec& topic_dir = audio_topics[on_topic[t] ? topic : distractor];
        const double coef = on_topic[t] ? on_coef : off_coef;
        for (std::size_t i = 0; i < cfg.d_audio; ++i) {
          frame[i] += quality_coef[t] * quality_dir[i] + coef * topic_dir[i];
          r.audio.values.push_back(static_cast<float>(frame[i]));
        }
      }
      r.text.rows = static_cast<std::uint32_t>(Tt);
      r.text.cols = static_cast<std::uint32_t>(cfg.d_text);
      r.text.values.reserve(Tt * cfg.d_text);
      for (std::size_t t = 0; t < Tt; ++t) {
        Vec row = orthogonal_noise(cfg.d_text, 0.3, text_topics, rng);
        for (std::size_t i = 0; i < cfg.d_text; ++i) {
          r.text.values.push_back(static_cast<float>(row[i] + text_topics[topic][i]));
        }
      }
      r.mi = std::clamp(q + rng.normal(0.0, cfg.noise_sd), 1.0, 5.0);
      r.ta = std::clamp(a + rng.normal(0.0, cfg.noise_sd), 1.0, 5.0);
      sc["clips"][r.clip_id] = {{"topic", topic}, {"quality", q}, {"alignment", a}};
      ds.records.push_back(std::move(r));
    }
  }
  return out;
}

// Writes emb/<clip>.audio.emb, emb/<clip>.text.emb, manifest.jsonl and
// sidecar.json under `dir`; fills in the records' embedding paths.
inline void write_synthetic(SyntheticSet& set, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "emb");
  for (auto& r : set.dataset.records) {
    r.audio_path = dir / "emb" / (r.clip_id + ".audio.emb");
    r.text_path = dir / "emb" / (r.clip_id + ".text.emb");
    write_embedding(r.audio, r.audio_path);
    write_embedding(r.text, r.text_path);
  }
  write_file_atomic(dir / "sidecar.json", set.sidecar.dump(2) + "\n");
  write_manifest(set.dataset, dir / "manifest.jsonl");
}

}  // namespace doramos
