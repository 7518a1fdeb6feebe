#pragma once

// On-disk checkpoint: a directory holding
//   manifest.txt  one "name shape offset" line per parameter, in layout order
//   params.bin    all parameter values as little-endian IEEE-754 doubles
//   meta.json     model config, vocabulary, relation names and threshold
// Every file is written to a temporary name and renamed into place.

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "hin/corpus.hpp"
#include "hin/errors.hpp"
#include "hin/metrics.hpp"
#include "hin/model.hpp"
#include "hin/training.hpp"

namespace hin {

namespace fs = std::filesystem;

inline void write_atomic(const fs::path& path, const std::string& bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::json threshold_to_json(double t) {
  return std::isfinite(t) ? nlohmann::json(t) : nlohmann::json(nullptr);
}

inline double threshold_from_json(const nlohmann::json& j) {
  return j.is_null() ? kNoThreshold : j.get<double>();
}

inline std::string manifest_text(const ParameterSet& params) {
  std::ostringstream out;
  std::size_t offset = 0;
  for (const Parameter& p : params) {
    out << p.name << ' ' << shape_str(p.value.shape()) << ' ' << offset << '\n';
    offset += p.size() * sizeof(double);
  }
  return out.str();
}

inline std::string encode_values(const ParameterSet& params) {
  std::string bytes;
  bytes.reserve(params.element_count() * 8);
  for (const Parameter& p : params)
    for (double v : p.value.data()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
    }
  return bytes;
}

struct CheckpointMeta {
  ModelConfig config;
  Vocabulary vocab;
  double threshold = kNoThreshold;
  nlohmann::json extra = nlohmann::json::object();
};

inline void save_checkpoint(const fs::path& dir, const HinModel& model, const Vocabulary& vocab, double threshold,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  fs::create_directories(dir);
  nlohmann::json meta = {{"config", model.config()},
                         {"vocab", vocab.to_json()},
                         {"threshold", threshold_to_json(threshold)},
                         {"extra", extra}};
  write_atomic(dir / "params.bin", encode_values(model.params()));
  write_atomic(dir / "manifest.txt", manifest_text(model.params()));
  write_atomic(dir / "meta.json", meta.dump(2) + "\n");
}

inline CheckpointMeta read_checkpoint_meta(const fs::path& dir) {
  const fs::path path = dir / "meta.json";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError("'" + path.string() + "': " + e.what());
  }
  CheckpointMeta meta;
  from_json(j.at("config"), meta.config);
  meta.vocab = Vocabulary::from_json(j.at("vocab"));
  meta.threshold = threshold_from_json(j.at("threshold"));
  if (j.contains("extra")) meta.extra = j.at("extra");
  return meta;
}

// Copies stored values into `model`, whose layout must match the manifest
// entry for entry; the first difference is reported by parameter name.
inline void load_parameters(const fs::path& dir, HinModel& model) {
  std::istringstream manifest(read_file(dir / "manifest.txt"));
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string name, shape;
    fields >> name >> shape;
    entries.emplace_back(name, shape);
  }
  ParameterSet& params = model.params();
  const std::size_t common = std::min(entries.size(), params.size());
  for (std::size_t i = 0; i < common; ++i) {
    const Parameter& p = params[i];
    if (entries[i].first != p.name) {
      throw CheckpointMismatch("checkpoint parameter " + std::to_string(i) + " is '" + entries[i].first +
                               "' but the model expects '" + p.name + "'");
    }
    if (entries[i].second != shape_str(p.value.shape())) {
      throw CheckpointMismatch("parameter '" + p.name + "' has shape " + entries[i].second +
                               " in the checkpoint but " + shape_str(p.value.shape()) + " in the model");
    }
  }
  if (entries.size() > params.size()) {
    throw CheckpointMismatch("checkpoint parameter '" + entries[common].first + "' does not exist in the model");
  }
  if (entries.size() < params.size()) {
    throw CheckpointMismatch("model parameter '" + params[common].name + "' is missing from the checkpoint");
  }
  const std::string bytes = read_file(dir / "params.bin");
  if (bytes.size() != params.element_count() * 8) {
    throw CheckpointMismatch("params.bin holds " + std::to_string(bytes.size()) + " bytes, expected " +
                             std::to_string(params.element_count() * 8));
  }
  std::size_t pos = 0;
  for (Parameter& p : params)
    for (double& v : p.value.data()) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + b])) << (8 * b);
      v = std::bit_cast<double>(bits);
      pos += 8;
    }
}

struct LoadedCheckpoint {
  CheckpointMeta meta;
  std::unique_ptr<HinModel> model;
};

// `config_override`, when given, replaces the stored configuration; a layout
// that no longer matches raises CheckpointMismatch.
inline LoadedCheckpoint load_checkpoint(const fs::path& dir, const ModelConfig* config_override = nullptr) {
  LoadedCheckpoint out;
  out.meta = read_checkpoint_meta(dir);
  if (config_override) out.meta.config = *config_override;
  out.model = std::make_unique<HinModel>(out.meta.config, 0);
  load_parameters(dir, *out.model);
  return out;
}

}  // namespace hin
