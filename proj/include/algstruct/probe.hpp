#pragma once

// Hidden-state structure metrics over LayerTraces and the per-K heatmaps built
// from them.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "algstruct/algebra.hpp"
#include "algstruct/model.hpp"

namespace algstruct::probe {

// Sum over coordinates of the population standard deviation across traces.
double s_std(const std::vector<std::vector<double>>& traces);
// Sum over traces and coordinates of |trace - base|.
double s_dist(const std::vector<double>& base, const std::vector<std::vector<double>>& traces);

// S_std(+) - S_std(other); the two sets must come from matched inputs.
double s_com(const std::vector<std::vector<double>>& plus_traces,
             const std::vector<std::vector<double>>& other_traces);
// S_dist(+) - S_dist(other) over matched base/variant inputs.
double s_ide(const std::vector<double>& plus_base, const std::vector<std::vector<double>>& plus_traces,
             const std::vector<double>& other_base,
             const std::vector<std::vector<double>>& other_traces);

struct ProbeConfig {
  int bases = 32;
  int permutations = 8;
  std::uint64_t seed = 1;
};

void to_json(nlohmann::json& j, const ProbeConfig& c);
void from_json(const nlohmann::json& j, ProbeConfig& c);

// Operand sequences shared by every operator and checkpoint so rows stay
// comparable.
struct ProbeInputs {
  // M non-zero operands per base; each entry lists distinct orderings, the
  // base order first.
  std::vector<std::vector<std::vector<int>>> permutation_sets;
  // M-1 non-zero operands per base and z_0 inserted at each of the M slots.
  std::vector<std::vector<int>> identity_bases;
  std::vector<std::vector<std::vector<int>>> identity_variants;
};

ProbeInputs make_probe_inputs(int n, int m, const ProbeConfig& config);

struct PermutationProbeSet {
  OperatorKind op = OperatorKind::Plus;
  std::vector<int> base;
  std::vector<std::vector<int>> orderings;
  std::vector<LayerTrace> traces;
};

struct IdentityProbeSet {
  OperatorKind op = OperatorKind::Plus;
  std::vector<int> base;
  LayerTrace base_trace;
  std::vector<std::vector<int>> variants;
  std::vector<LayerTrace> traces;
};

std::vector<PermutationProbeSet> collect_permutation_sets(const Params& params, OperatorKind op,
                                                          const ProbeInputs& inputs);
std::vector<IdentityProbeSet> collect_identity_sets(const Params& params, OperatorKind op,
                                                    const ProbeInputs& inputs);

// Contrast operators in heatmap order.
inline constexpr OperatorKind kContrastOperators[] = {OperatorKind::Ominus, OperatorKind::Left,
                                                      OperatorKind::Right};

// Per-layer S_com and S_ide (mean over probe bases) against one contrast
// operator. Index 0 is the embedding layer.
struct LayerScores {
  OperatorKind against = OperatorKind::Left;
  std::vector<double> s_com;
  std::vector<double> s_ide;
};

std::vector<LayerScores> score_checkpoint(const Params& params, const ProbeInputs& inputs);

struct HeatmapMatrix {
  std::string metric;  // "s_com" or "s_ide"
  OperatorKind against = OperatorKind::Left;
  std::vector<int> k_values;                 // rows
  std::vector<std::vector<double>> values;  // [k][layer], layers 1..layers+1

  std::string name() const;
};

// Six matrices: s_com then s_ide, each against om, lt, rt.
std::vector<HeatmapMatrix> build_heatmaps(const std::vector<std::pair<int, Params>>& checkpoints,
                                          const ProbeConfig& config);

// Checkpoints under `dir` (recursively), keyed by the k_train in their metadata
// and sorted by it.
std::vector<std::pair<int, Params>> load_checkpoints(const std::filesystem::path& dir);

void write_heatmap_csv(const HeatmapMatrix& m, const std::filesystem::path& file);
// Green cells for values >= 0, purple for negative; intensity scales with
// |value| relative to the matrix maximum.
void write_heatmap_svg(const HeatmapMatrix& m, const std::filesystem::path& file);

}  // namespace algstruct::probe
