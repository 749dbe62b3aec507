#pragma once

// Embedding files, clip manifests, and the per-system stratified splitter.
//
// EMB1 layout (all little-endian, no padding, no trailer):
//   "EMB1" | rows:u32 | cols:u32 | rows*cols float32, row-major
//
// Manifest: one JSON object per line,
//   {"clip_id":..,"system_id":..,"audio":path,"text":path,"mi":float|null,"ta":float|null}
// Relative paths are resolved against the manifest's directory.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "doramos/error.hpp"
#include "doramos/fileio.hpp"
#include "doramos/rng.hpp"
#include "doramos/tensor.hpp"

namespace doramos {

struct EmbeddingMatrix {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> values;

  Tensor to_tensor() const {
    std::vector<double> wide(values.begin(), values.end());
    return Tensor({rows, cols}, std::move(wide));
  }

  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace detail

inline std::string encode_embedding(const EmbeddingMatrix& m) {
  if (static_cast<std::uint64_t>(m.rows) * m.cols != m.values.size()) {
    throw DimensionError("embedding value count does not match rows x cols");
  }
  std::string out = "EMB1";
  out.reserve(12 + 4 * m.values.size());
  detail::put_u32(out, m.rows);
  detail::put_u32(out, m.cols);
  for (float f : m.values) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

inline EmbeddingMatrix decode_embedding(std::string_view bytes, const std::string& origin = "<memory>") {
  if (bytes.size() < 4 || bytes.substr(0, 4) != "EMB1") throw BadMagicError(origin + ": bad magic, expected EMB1");
  if (bytes.size() < 12) throw TruncatedError(origin + ": truncated header");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  EmbeddingMatrix m;
  m.rows = detail::get_u32(p + 4);
  m.cols = detail::get_u32(p + 8);
  if (m.rows == 0 || m.cols == 0) throw DimensionError(origin + ": zero extent in header");
  const std::uint64_t count = static_cast<std::uint64_t>(m.rows) * m.cols;
  // Payload must be addressable; anything beyond 2^40 bytes is a corrupt header.
  if (count > (std::uint64_t{1} << 38)) throw DimensionError(origin + ": header dimensions overflow");
  const std::uint64_t need = 12 + 4 * count;
  if (bytes.size() < need) {
    throw TruncatedError(origin + ": payload holds " + std::to_string(bytes.size() - 12) + " bytes, header declares " +
                         std::to_string(4 * count));
  }
  if (bytes.size() > need) throw DataError(origin + ": trailing bytes after payload");
  m.values.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) m.values[i] = std::bit_cast<float>(detail::get_u32(p + 12 + 4 * i));
  return m;
}

inline void write_embedding(const EmbeddingMatrix& m, const std::filesystem::path& path) {
  write_file_atomic(path, encode_embedding(m));
}

inline EmbeddingMatrix read_embedding(const std::filesystem::path& path) {
  return decode_embedding(read_file(path), path.string());
}

struct ClipRecord {
  std::string clip_id;
  std::string system_id;
  std::filesystem::path audio_path;
  std::filesystem::path text_path;
  std::optional<double> mi;
  std::optional<double> ta;
  EmbeddingMatrix audio;
  EmbeddingMatrix text;
};

struct Dataset {
  std::vector<ClipRecord> records;
  std::size_t d_audio = 0;
  std::size_t d_text = 0;
  std::string split;

  std::vector<std::string> system_ids() const {
    std::set<std::string> ids;
    for (const auto& r : records) ids.insert(r.system_id);
    return {ids.begin(), ids.end()};
  }
};

inline void validate_record(const ClipRecord& r) {
  if (r.clip_id.empty()) throw DataError("record with empty clip_id");
  if (r.system_id.empty()) throw DataError(r.clip_id + ": empty system_id");
  for (const auto& [name, score] : {std::pair{"mi", r.mi}, std::pair{"ta", r.ta}}) {
    if (score && !(*score >= 1.0 && *score <= 5.0)) {
      throw DataError(r.clip_id + ": " + name + " score " + std::to_string(*score) + " outside [1, 5]");
    }
  }
}

// Checks shared widths and unique ids; fills d_audio / d_text.
inline void validate_dataset(Dataset& ds) {
  std::set<std::string> seen;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const ClipRecord& r = ds.records[i];
    validate_record(r);
    if (!seen.insert(r.clip_id).second) throw DataError(r.clip_id + ": duplicate clip_id");
    if (i == 0) {
      ds.d_audio = r.audio.cols;
      ds.d_text = r.text.cols;
    }
    if (r.audio.cols != ds.d_audio) {
      throw DataError(r.clip_id + ": audio width " + std::to_string(r.audio.cols) + " != " +
                      std::to_string(ds.d_audio));
    }
    if (r.text.cols != ds.d_text) {
      throw DataError(r.clip_id + ": text width " + std::to_string(r.text.cols) + " != " +
                      std::to_string(ds.d_text));
    }
  }
}

inline Dataset load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  const std::filesystem::path base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : (base / fp).lexically_normal();
  };
  auto score = [](const nlohmann::json& j, const char* key) -> std::optional<double> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  Dataset ds;
  ds.split = path.stem().string();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ClipRecord r;
    try {
      const auto j = nlohmann::json::parse(line);
      r.clip_id = j.at("clip_id").get<std::string>();
      r.system_id = j.at("system_id").get<std::string>();
      r.audio_path = resolve(j.at("audio").get<std::string>());
      r.text_path = resolve(j.at("text").get<std::string>());
      r.mi = score(j, "mi");
      r.ta = score(j, "ta");
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    try {
      validate_record(r);
      r.audio = read_embedding(r.audio_path);
      r.text = read_embedding(r.text_path);
    } catch (const DataError& e) {
      throw DataError("clip " + r.clip_id + ": " + e.what());
    }
    ds.records.push_back(std::move(r));
  }
  if (ds.records.empty()) throw DataError("manifest " + path.string() + " has no records");
  validate_dataset(ds);
  return ds;
}

inline std::string manifest_line(const ClipRecord& r, const std::filesystem::path& base) {
  auto rel = [&](const std::filesystem::path& p) {
    const auto abs_p = std::filesystem::absolute(p).lexically_normal();
    const auto abs_b = std::filesystem::absolute(base.empty() ? std::filesystem::path(".") : base).lexically_normal();
    return abs_p.lexically_relative(abs_b).generic_string();
  };
  nlohmann::ordered_json j;
  j["clip_id"] = r.clip_id;
  j["system_id"] = r.system_id;
  j["audio"] = rel(r.audio_path);
  j["text"] = rel(r.text_path);
  j["mi"] = r.mi ? nlohmann::ordered_json(*r.mi) : nlohmann::ordered_json(nullptr);
  j["ta"] = r.ta ? nlohmann::ordered_json(*r.ta) : nlohmann::ordered_json(nullptr);
  return j.dump();
}

// Embedding paths are written relative to the manifest's directory.
inline void write_manifest(const Dataset& ds, const std::filesystem::path& path) {
  std::ostringstream os;
  for (const auto& r : ds.records) os << manifest_line(r, path.parent_path()) << '\n';
  write_file_atomic(path, os.str());
}

struct Split {
  Dataset train;
  Dataset dev;
};

// Per system: order clips by MI (ties by clip_id) and send every
// round(1/dev_fraction)-th clip, starting at a seeded offset, to dev.
inline Split stratified_split(const Dataset& ds, double dev_fraction, std::uint64_t seed) {
  if (!(dev_fraction > 0.0 && dev_fraction < 0.5)) throw UsageError("dev_fraction must lie in (0, 0.5)");
  const std::size_t stride = static_cast<std::size_t>(std::llround(1.0 / dev_fraction));
  std::map<std::string, std::vector<std::size_t>> by_system;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    if (!r.mi) throw DataError(r.clip_id + ": stratified split needs an MI score");
    by_system[r.system_id].push_back(i);
  }
  Rng rng(derive_seed(seed, "split"));
  std::vector<bool> to_dev(ds.records.size(), false);
  for (auto& [system, idx] : by_system) {
    if (idx.size() < 2) throw DataError("system " + system + " has fewer than 2 clips");
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      const auto& ra = ds.records[a];
      const auto& rb = ds.records[b];
      if (*ra.mi != *rb.mi) return *ra.mi < *rb.mi;
      return ra.clip_id < rb.clip_id;
    });
    const std::size_t offset = rng.index(std::min(stride, idx.size()));
    for (std::size_t k = offset; k < idx.size(); k += stride) to_dev[idx[k]] = true;
  }
  Split out;
  out.train.split = "train";
  out.dev.split = "dev";
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    (to_dev[i] ? out.dev : out.train).records.push_back(ds.records[i]);
  }
  out.train.d_audio = out.dev.d_audio = ds.d_audio;
  out.train.d_text = out.dev.d_text = ds.d_text;
  return out;
}

}  // namespace doramos
