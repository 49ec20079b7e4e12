#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "gridflow/errors.hpp"
#include "gridflow/nn_core.hpp"

namespace gridflow {

inline constexpr int kCheckpointVersion = 1;

/// Serialize named tensors into a single JSON document:
/// { "version": 1, "params": { name: { "shape": [...], "values": [...] } } }
/// Values are row-major. nlohmann emits shortest round-trip doubles, so a
/// save/load cycle reproduces every parameter bit for bit.
inline nlohmann::json checkpoint_to_json(const std::map<std::string, Tensor>& params) {
  nlohmann::json j;
  j["version"] = kCheckpointVersion;
  nlohmann::json p = nlohmann::json::object();
  for (const auto& [name, t] : params) {
    p[name] = {{"shape", t.shape}, {"values", t.data}};
  }
  j["params"] = std::move(p);
  return j;
}

inline std::map<std::string, Tensor> checkpoint_from_json(const nlohmann::json& j) {
  try {
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion)
      throw ParseError("checkpoint: unsupported version " + std::to_string(version));
    std::map<std::string, Tensor> out;
    for (const auto& [name, entry] : j.at("params").items()) {
      auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      auto values = entry.at("values").get<std::vector<double>>();
      out.emplace(name, Tensor(std::move(shape), std::move(values)));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint schema: ") + e.what());
  }
}

inline void save_checkpoint_file(const std::string& path,
                                 const std::map<std::string, Tensor>& params) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open checkpoint file for writing: " + path);
  f << checkpoint_to_json(params).dump(2) << "\n";
}

inline std::map<std::string, Tensor> load_checkpoint_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open checkpoint file: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint schema: ") + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace gridflow
