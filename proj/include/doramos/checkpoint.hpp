#pragma once

// Checkpoint file: one line of compact JSON (model config, training config,
// selection info, parameter manifest), a '\n', then every parameter as raw
// little-endian float64 in manifest order.

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "doramos/error.hpp"
#include "doramos/fileio.hpp"
#include "doramos/training.hpp"

namespace doramos {

inline constexpr const char* kCheckpointFormat = "doramos-checkpoint-1";

inline std::string encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format"] = kCheckpointFormat;
  header["model"] = ckpt.model;
  header["train"] = ckpt.train;
  header["best_dev_metric"] =
      std::isfinite(ckpt.best_dev_metric) ? nlohmann::json(ckpt.best_dev_metric) : nlohmann::json(nullptr);
  header["best_epoch"] = ckpt.best_epoch;
  header["epochs_run"] = ckpt.epochs_run;
  header["params"] = nlohmann::json::array();
  for (const auto& [name, t] : ckpt.params) header["params"].push_back({{"name", name}, {"shape", t.shape()}});

  std::string out = header.dump();
  out.push_back('\n');
  out.reserve(out.size() + 8 * ckpt.params.element_count());
  for (const auto& [_, t] : ckpt.params) {
    for (double v : t.data()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
    }
  }
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& origin = "<memory>") {
  const auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw DataError(origin + ": missing checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(origin + ": bad checkpoint header: " + e.what());
  }
  if (header.value("format", "") != kCheckpointFormat) throw BadMagicError(origin + ": not a checkpoint file");
  Checkpoint ckpt;
  try {
    ckpt.model = header.at("model").get<ModelConfig>();
    ckpt.train = header.at("train").get<TrainConfig>();
    ckpt.best_dev_metric = header.at("best_dev_metric").is_null() ? std::nan("")
                                                                  : header.at("best_dev_metric").get<double>();
    ckpt.best_epoch = header.at("best_epoch").get<std::size_t>();
    ckpt.epochs_run = header.at("epochs_run").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(origin + ": bad checkpoint header: " + e.what());
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + nl + 1;
  const std::size_t payload = bytes.size() - nl - 1;
  std::size_t offset = 0;
  for (const auto& entry : header.at("params")) {
    const Shape shape = entry.at("shape").get<Shape>();
    const std::size_t n = shape_size(shape);
    if (offset + 8 * n > payload) throw TruncatedError(origin + ": checkpoint payload truncated");
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[offset + 8 * i + b]) << (8 * b);
      data[i] = std::bit_cast<double>(bits);
    }
    offset += 8 * n;
    ckpt.params.add(entry.at("name").get<std::string>(), Tensor(shape, std::move(data)));
  }
  if (offset != payload) throw DataError(origin + ": trailing bytes after checkpoint payload");
  const ParamStore expected = init_params(ckpt.model, 0);
  for (const auto& [name, t] : expected) {
    if (!ckpt.params.contains(name) || ckpt.params.at(name).shape() != t.shape()) {
      throw DataError(origin + ": parameter " + name + " missing or misshapen for the stored config");
    }
  }
  if (expected.size() != ckpt.params.size()) throw DataError(origin + ": unexpected extra parameters");
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path), path.string());
}

}  // namespace doramos
