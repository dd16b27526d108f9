#include "algstruct/run_config.hpp"

#include <algorithm>
#include <fstream>

#include "algstruct/error.hpp"

namespace algstruct {

void RunConfig::resolve() {
  if (n < 2) throw ConfigError("n must be >= 2");
  if (m < 2) throw ConfigError("M must be >= 2");
  if (k_train < 1 || k_test < 1) throw ConfigError("K values must be >= 1");
  if (threads < 0) throw ConfigError("threads must be >= 0");
  model.n = n;
  model.m = m;
  model.seed = seed;
  train.seed = seed;
  probe.seed = seed;
  model.validate();
  train.validate();
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"n", c.n},
                     {"m", c.m},
                     {"k_train", c.k_train},
                     {"k_test", c.k_test},
                     {"k_values", c.k_values},
                     {"seed", c.seed},
                     {"generation",
                      {{"perms_per_family", c.generation.perms_per_family},
                       {"arrangement_cap", c.generation.arrangement_cap}}},
                     {"model", c.model},
                     {"train", c.train},
                     {"probe", c.probe},
                     {"deterministic", c.deterministic},
                     {"threads", c.threads}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  static const char* known[] = {"n",     "m",     "k_train", "k_test",        "k_values", "seed",
                                "generation", "model", "train", "probe", "deterministic", "threads"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  c.n = j.value("n", c.n);
  c.m = j.value("m", c.m);
  c.k_train = j.value("k_train", c.k_train);
  c.k_test = j.value("k_test", c.k_test);
  c.k_values = j.value("k_values", c.k_values);
  c.seed = j.value("seed", c.seed);
  if (j.contains("generation")) {
    const auto& g = j.at("generation");
    c.generation.perms_per_family = g.value("perms_per_family", c.generation.perms_per_family);
    c.generation.arrangement_cap = g.value("arrangement_cap", c.generation.arrangement_cap);
  }
  if (j.contains("model")) from_json(j.at("model"), c.model);
  if (j.contains("train")) from_json(j.at("train"), c.train);
  if (j.contains("probe")) probe::from_json(j.at("probe"), c.probe);
  c.deterministic = j.value("deterministic", c.deterministic);
  c.threads = j.value("threads", c.threads);
}

RunConfig RunConfig::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read config " + file.string());
  RunConfig c;
  try {
    from_json(nlohmann::json::parse(in), c);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
  return c;
}

void RunConfig::write(const std::filesystem::path& file) const {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw IoError("cannot write " + file.string());
  out << nlohmann::json(*this).dump(2) << '\n';
}

}  // namespace algstruct
