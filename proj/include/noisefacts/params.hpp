#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "noisefacts/tensor.hpp"

namespace noisefacts {

struct ModelConfig {
  int d = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  int max_slots = 16;
  int max_positions = 128;
  double dropout = 0.1;

  void validate() const {
    if (d <= 0 || n_heads <= 0 || d % n_heads != 0)
      throw std::invalid_argument("ModelConfig: d must be divisible by n_heads");
    if (max_slots < 1) throw std::invalid_argument("ModelConfig: max_slots >= 1");
    if (dropout < 0.0 || dropout >= 1.0)
      throw std::invalid_argument("ModelConfig: dropout must be in [0,1)");
    if (n_layers < 1 || d_ff < 1 || max_positions < 2)
      throw std::invalid_argument("ModelConfig: bad sizes");
  }

  nlohmann::ordered_json to_json() const {
    return {{"d", d},         {"n_layers", n_layers},
            {"n_heads", n_heads}, {"d_ff", d_ff},
            {"max_slots", max_slots}, {"max_positions", max_positions},
            {"dropout", dropout}};
  }
  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.d = j.at("d");
    c.n_layers = j.at("n_layers");
    c.n_heads = j.at("n_heads");
    c.d_ff = j.at("d_ff");
    c.max_slots = j.at("max_slots");
    c.max_positions = j.value("max_positions", 128);
    c.dropout = j.at("dropout");
    c.validate();
    return c;
  }
};

// Named parameters plus their AdamW moments. Iteration order is the sorted
// name order everywhere, which keeps checkpoints and updates deterministic.
template <class T>
struct ParameterStore {
  std::map<std::string, Var<T>> params;
  std::map<std::string, Mat<T>> moment1, moment2;
  int64_t step = 0;
  int64_t nonfinite_skips = 0;
  bool frozen = false;

  Var<T> create(const std::string& name, int rows, int cols, double stddev,
                uint64_t seed_base) {
    if (params.count(name)) throw std::invalid_argument("duplicate param: " + name);
    Mat<T> m(rows, cols);
    if (stddev == 0.0) {
      m.setZero();
    } else {
      Rng rng(Rng::derive(seed_base, name));
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
          m(i, j) = static_cast<T>(rng.normal() * stddev);
    }
    auto v = leaf<T>(std::move(m), true);
    params.emplace(name, v);
    return v;
  }

  Var<T> create_const(const std::string& name, int rows, int cols, double value) {
    if (params.count(name)) throw std::invalid_argument("duplicate param: " + name);
    auto v = leaf<T>(Mat<T>::Constant(rows, cols, static_cast<T>(value)), true);
    params.emplace(name, v);
    return v;
  }

  Var<T> get(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw std::out_of_range("missing param: " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return params.count(name) > 0; }

  void freeze() {
    frozen = true;
    for (auto& [k, v] : params) v->requires_grad = false;
  }

  void zero_grads() {
    for (auto& [k, v] : params) v->grad_set = false;
  }

  size_t n_scalars() const {
    size_t n = 0;
    for (auto& [k, v] : params) n += size_t(v->rows()) * v->cols();
    return n;
  }
};

// Checkpoint directory layout: manifest.json (format version, model config,
// ordered tensor index) + params.bin (one raw little-endian float32 blob).
inline constexpr int kCheckpointFormatVersion = 1;

template <class T>
void save_checkpoint(const std::filesystem::path& dir, const ParameterStore<T>& ps,
                     const ModelConfig& cfg) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["model_config"] = cfg.to_json();
  nlohmann::ordered_json index = nlohmann::ordered_json::array();
  std::vector<float> blob;
  for (const auto& [name, var] : ps.params) {
    nlohmann::ordered_json entry;
    entry["name"] = name;
    entry["shape"] = {var->rows(), var->cols()};
    entry["offset"] = blob.size() * sizeof(float);
    index.push_back(entry);
    for (int i = 0; i < var->rows(); ++i)
      for (int j = 0; j < var->cols(); ++j)
        blob.push_back(static_cast<float>(var->val(i, j)));
  }
  manifest["tensors"] = index;
  {
    std::ofstream f(dir / "manifest.json", std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
    f << manifest.dump(2) << "\n";
  }
  {
    std::ofstream f(dir / "params.bin", std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + (dir / "params.bin").string());
    f.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(float)));
  }
}

template <class T>
ModelConfig load_checkpoint(const std::filesystem::path& dir, ParameterStore<T>& ps) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw std::runtime_error("cannot read " + (dir / "manifest.json").string());
  nlohmann::json manifest = nlohmann::json::parse(mf);
  if (manifest.at("format_version").get<int>() != kCheckpointFormatVersion)
    throw std::runtime_error("unsupported checkpoint format version");
  ModelConfig cfg = ModelConfig::from_json(manifest.at("model_config"));

  std::ifstream bf(dir / "params.bin", std::ios::binary | std::ios::ate);
  if (!bf) throw std::runtime_error("cannot read " + (dir / "params.bin").string());
  size_t bytes = static_cast<size_t>(bf.tellg());
  std::vector<float> data(bytes / sizeof(float));
  bf.seekg(0);
  bf.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));

  for (const auto& entry : manifest.at("tensors")) {
    std::string name = entry.at("name");
    int rows = entry.at("shape")[0];
    int cols = entry.at("shape")[1];
    size_t off = entry.at("offset").get<size_t>() / sizeof(float);
    if (off + size_t(rows) * cols > data.size())
      throw std::runtime_error("checkpoint blob truncated at tensor " + name);
    Mat<T> m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j)
        m(i, j) = static_cast<T>(data[off + size_t(i) * cols + j]);
    ps.params.emplace(name, leaf<T>(std::move(m), true));
  }
  return cfg;
}

}  // namespace noisefacts
