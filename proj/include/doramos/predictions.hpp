#pragma once

// predictions.jsonl: one clip per line,
//   {"clip_id":..,"mi":float,"ta":float,"mi_dist":[K],"ta_dist":[K]}
// with "mi_cum"/"ta_cum" ([K-1] cumulative probabilities) in place of the
// distributions for cumulative (CORAL) heads.

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "doramos/error.hpp"
#include "doramos/fileio.hpp"
#include "doramos/metrics.hpp"
#include "doramos/network.hpp"

namespace doramos {

struct PredictionRecord {
  std::string clip_id;
  double mi = 0.0;
  double ta = 0.0;
  bool cumulative = false;
  std::vector<double> mi_probs;  // distribution, or cumulative probabilities
  std::vector<double> ta_probs;
};

inline PredictionRecord to_record(const std::string& clip_id, const Prediction& p) {
  return {clip_id, p.mi_score, p.ta_score, p.cumulative, p.mi_probs, p.ta_probs};
}

inline std::string prediction_line(const PredictionRecord& r) {
  nlohmann::ordered_json j;
  j["clip_id"] = r.clip_id;
  j["mi"] = r.mi;
  j["ta"] = r.ta;
  if (!r.mi_probs.empty()) j[r.cumulative ? "mi_cum" : "mi_dist"] = r.mi_probs;
  if (!r.ta_probs.empty()) j[r.cumulative ? "ta_cum" : "ta_dist"] = r.ta_probs;
  return j.dump();
}

inline std::string encode_predictions(const std::vector<PredictionRecord>& records) {
  std::ostringstream os;
  for (const auto& r : records) os << prediction_line(r) << '\n';
  return os.str();
}

inline void write_predictions(const std::vector<PredictionRecord>& records, const std::filesystem::path& path) {
  write_file_atomic(path, encode_predictions(records));
}

inline std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open predictions " + path.string());
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PredictionRecord r;
      r.clip_id = j.at("clip_id").get<std::string>();
      r.mi = j.at("mi").get<double>();
      r.ta = j.at("ta").get<double>();
      const bool has_dist = j.contains("mi_dist") || j.contains("ta_dist");
      const bool has_cum = j.contains("mi_cum") || j.contains("ta_cum");
      if (has_dist && has_cum) throw DataError("mixes distributions and cumulative probabilities");
      r.cumulative = has_cum;
      const char* mi_key = has_cum ? "mi_cum" : "mi_dist";
      const char* ta_key = has_cum ? "ta_cum" : "ta_dist";
      if (j.contains(mi_key)) r.mi_probs = j.at(mi_key).get<std::vector<double>>();
      if (j.contains(ta_key)) r.ta_probs = j.at(ta_key).get<std::vector<double>>();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<ScoredClip> scored(const std::vector<PredictionRecord>& records) {
  std::vector<ScoredClip> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({r.clip_id, r.mi, r.ta});
  return out;
}

}  // namespace doramos
