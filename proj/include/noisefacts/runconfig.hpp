#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "noisefacts/diffuser.hpp"
#include "noisefacts/params.hpp"
#include "noisefacts/rng.hpp"

namespace noisefacts {

// One reproducible run: everything a command needs, serialized alongside
// every artifact it writes. "large" scale switches the loss weight and noise
// amplification defaults; explicit values always win.
struct RunConfig {
  std::string command;
  uint64_t seed = 42;
  std::string scale = "small";  // small | large

  ModelConfig model;

  // schedule
  int T = 2000;
  double s = 1e-4;
  double A_amp = -1.0;  // unset: 1 (small) / 4 (large)

  // diffusion training
  double gamma = -1.0;  // unset: 1 (small) / 0.01 (large)
  double lr = 1e-5;
  int64_t warmup = 2000;
  int64_t total_steps = 150000;
  int64_t steps = 150000;
  int batch = 4;
  double weight_decay = 0.0;
  int64_t adapt_every = kAdaptCadence;
  int64_t log_every = 50;

  // embedder pretraining
  int pretrain_epochs = 30;
  double pretrain_lr = 1e-3;
  double pretrain_weight_decay = 0.0;
  int min_count = 1;

  // generation
  int inference_steps = 0;  // 0: full T
  int max_facts = 16;
  int max_decode_len = 24;

  // metrics
  std::string geometry = "edit";  // edit | embedding | both
  std::string scorer = "overlap";  // overlap | file | none
  std::string thresholds = "auto";  // "auto" or comma-separated values
  bool with_novelty = false;
  bool with_webnlg = false;

  double resolved_gamma() const {
    if (gamma >= 0.0) return gamma;
    return scale == "large" ? 0.01 : 1.0;
  }
  double resolved_amp() const {
    if (A_amp >= 1.0) return A_amp;
    return scale == "large" ? 4.0 : 1.0;
  }

  void apply_env_seed() {
    if (const char* env = std::getenv("NOISEFACTS_SEED")) {
      char* end = nullptr;
      unsigned long long v = std::strtoull(env, &end, 10);
      if (end && *end == '\0') seed = static_cast<uint64_t>(v);
    }
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["seed"] = seed;
    j["scale"] = scale;
    j["model"] = model.to_json();
    j["schedule"] = {{"T", T}, {"s", s}, {"A_amp", resolved_amp()}};
    j["train"] = {{"gamma", resolved_gamma()},
                  {"lr", lr},
                  {"warmup", warmup},
                  {"total_steps", total_steps},
                  {"steps", steps},
                  {"batch", batch},
                  {"weight_decay", weight_decay},
                  {"adapt_every", adapt_every},
                  {"log_every", log_every}};
    j["pretrain"] = {{"epochs", pretrain_epochs},
                     {"lr", pretrain_lr},
                     {"weight_decay", pretrain_weight_decay},
                     {"min_count", min_count}};
    j["generation"] = {{"inference_steps", inference_steps},
                       {"max_facts", max_facts},
                       {"max_decode_len", max_decode_len}};
    j["metrics"] = {{"geometry", geometry},
                    {"scorer", scorer},
                    {"thresholds", thresholds},
                    {"novelty", with_novelty},
                    {"webnlg", with_webnlg}};
    return j;
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    c.command = j.value("command", "");
    c.seed = j.value("seed", uint64_t(42));
    c.scale = j.value("scale", "small");
    if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
    if (j.contains("schedule")) {
      const auto& s = j.at("schedule");
      c.T = s.value("T", 2000);
      c.s = s.value("s", 1e-4);
      c.A_amp = s.value("A_amp", -1.0);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      c.gamma = t.value("gamma", -1.0);
      c.lr = t.value("lr", 1e-5);
      c.warmup = t.value("warmup", int64_t(2000));
      c.total_steps = t.value("total_steps", int64_t(150000));
      c.steps = t.value("steps", c.total_steps);
      c.batch = t.value("batch", 4);
      c.weight_decay = t.value("weight_decay", 0.0);
      c.adapt_every = t.value("adapt_every", int64_t(kAdaptCadence));
      c.log_every = t.value("log_every", int64_t(50));
    }
    if (j.contains("pretrain")) {
      const auto& p = j.at("pretrain");
      c.pretrain_epochs = p.value("epochs", 30);
      c.pretrain_lr = p.value("lr", 1e-3);
      c.pretrain_weight_decay = p.value("weight_decay", 0.0);
      c.min_count = p.value("min_count", 1);
    }
    if (j.contains("generation")) {
      const auto& g = j.at("generation");
      c.inference_steps = g.value("inference_steps", 0);
      c.max_facts = g.value("max_facts", 16);
      c.max_decode_len = g.value("max_decode_len", 24);
    }
    if (j.contains("metrics")) {
      const auto& m = j.at("metrics");
      c.geometry = m.value("geometry", "edit");
      c.scorer = m.value("scorer", "overlap");
      c.thresholds = m.value("thresholds", "auto");
      c.with_novelty = m.value("novelty", false);
      c.with_webnlg = m.value("webnlg", false);
    }
    return c;
  }

  static RunConfig from_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read config file: " + path.string());
    return from_json(nlohmann::json::parse(f));
  }

  std::string hash() const {
    std::string dump = to_json().dump();
    uint64_t h = Rng::derive(0x6e66, dump);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
  }
};

// Sidecar written next to every artifact (inside it, for directory
// artifacts); evaluate refuses mixed hashes across its inputs.
inline std::filesystem::path sidecar_path(const std::filesystem::path& artifact) {
  if (std::filesystem::is_directory(artifact)) return artifact / "runconfig.json";
  std::filesystem::path p = artifact;
  p += ".runconfig.json";
  return p;
}

inline void write_runconfig_sidecar(const std::filesystem::path& artifact,
                                    const RunConfig& cfg) {
  nlohmann::ordered_json j;
  j["run_config_hash"] = cfg.hash();
  j["run_config"] = cfg.to_json();
  std::filesystem::path p = sidecar_path(artifact);
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << j.dump(2) << "\n";
}

inline std::optional<std::string> read_sidecar_hash(
    const std::filesystem::path& artifact) {
  std::ifstream f(sidecar_path(artifact));
  if (!f) return std::nullopt;
  try {
    nlohmann::json j = nlohmann::json::parse(f);
    return j.at("run_config_hash").get<std::string>();
  } catch (...) {
    return std::nullopt;
  }
}

}  // namespace noisefacts
