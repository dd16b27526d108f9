#pragma once

// One structured config mirroring every CLI flag. Flags override file values;
// the resolved config is written next to every output.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "algstruct/datagen.hpp"
#include "algstruct/model.hpp"
#include "algstruct/probe.hpp"
#include "algstruct/trainer.hpp"

namespace algstruct {

struct RunConfig {
  int n = 7;
  int m = 6;
  int k_train = 1000;
  int k_test = 100;
  std::vector<int> k_values{100, 300, 1000};
  // Root seed; datagen, init, shuffle and probe use named sub-streams of it.
  std::uint64_t seed = 1;
  GenerationOptions generation;
  ModelConfig model;
  TrainConfig train;
  probe::ProbeConfig probe;
  bool deterministic = false;
  int threads = 0;  // 0: OpenMP default

  // Pushes n, M and the root seed into the nested configs and validates.
  void resolve();

  static RunConfig load(const std::filesystem::path& file);
  void write(const std::filesystem::path& file) const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

}  // namespace algstruct
