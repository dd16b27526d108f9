#include "algstruct/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "algstruct/error.hpp"
#include "algstruct/rng.hpp"

namespace algstruct::probe {

double s_std(const std::vector<std::vector<double>>& traces) {
  if (traces.size() < 2) throw ShapeError("s_std needs at least 2 traces, got " + std::to_string(traces.size()));
  const std::size_t d = traces.front().size();
  for (const auto& t : traces) {
    if (t.size() != d) throw ShapeError("s_std: trace dimensions differ");
  }
  const double count = static_cast<double>(traces.size());
  double total = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    double mean = 0.0;
    for (const auto& t : traces) mean += t[k];
    mean /= count;
    double var = 0.0;
    for (const auto& t : traces) var += (t[k] - mean) * (t[k] - mean);
    total += std::sqrt(var / count);
  }
  return total;
}

double s_dist(const std::vector<double>& base, const std::vector<std::vector<double>>& traces) {
  double total = 0.0;
  for (const auto& t : traces) {
    if (t.size() != base.size()) {
      throw ShapeError("s_dist: trace of dimension " + std::to_string(t.size()) + " vs base " +
                       std::to_string(base.size()));
    }
    for (std::size_t k = 0; k < t.size(); ++k) total += std::abs(t[k] - base[k]);
  }
  return total;
}

double s_com(const std::vector<std::vector<double>>& plus_traces,
             const std::vector<std::vector<double>>& other_traces) {
  if (plus_traces.size() != other_traces.size()) {
    throw ShapeError("s_com: " + std::to_string(plus_traces.size()) + " vs " +
                     std::to_string(other_traces.size()) + " probe inputs");
  }
  return s_std(plus_traces) - s_std(other_traces);
}

double s_ide(const std::vector<double>& plus_base, const std::vector<std::vector<double>>& plus_traces,
             const std::vector<double>& other_base,
             const std::vector<std::vector<double>>& other_traces) {
  if (plus_traces.size() != other_traces.size()) {
    throw ShapeError("s_ide: " + std::to_string(plus_traces.size()) + " vs " +
                     std::to_string(other_traces.size()) + " probe inputs");
  }
  return s_dist(plus_base, plus_traces) - s_dist(other_base, other_traces);
}

void to_json(nlohmann::json& j, const ProbeConfig& c) {
  j = nlohmann::json{{"bases", c.bases}, {"permutations", c.permutations}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ProbeConfig& c) {
  c.bases = j.value("bases", c.bases);
  c.permutations = j.value("permutations", c.permutations);
  c.seed = j.value("seed", c.seed);
}

ProbeInputs make_probe_inputs(int n, int m, const ProbeConfig& config) {
  if (n < 3 || m < 2) throw ConfigError("probing needs n >= 3 and M >= 2");
  if (config.bases < 1 || config.permutations < 2) {
    throw ConfigError("probing needs >= 1 base and >= 2 permutations");
  }
  Rng rng(config.seed, "probe");
  auto draw = [&](int len) {
    std::vector<int> v(static_cast<std::size_t>(len));
    for (int& x : v) x = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - 1)));
    return v;
  };

  ProbeInputs in;
  while (static_cast<int>(in.permutation_sets.size()) < config.bases) {
    std::vector<int> base = draw(m);
    if (std::all_of(base.begin(), base.end(), [&](int v) { return v == base.front(); })) continue;
    std::vector<int> sorted = base;
    std::sort(sorted.begin(), sorted.end());
    const std::uint64_t available = distinct_arrangements(sorted);
    const auto want = static_cast<std::size_t>(
        std::min<std::uint64_t>(available, static_cast<std::uint64_t>(config.permutations)));
    std::vector<std::vector<int>> orderings{base};
    std::set<std::vector<int>> seen{base};
    std::vector<int> perm = base;
    while (orderings.size() < want) {
      rng.shuffle(perm);
      if (seen.insert(perm).second) orderings.push_back(perm);
    }
    in.permutation_sets.push_back(std::move(orderings));
  }
  for (int b = 0; b < config.bases; ++b) {
    std::vector<int> base = draw(m - 1);
    std::vector<std::vector<int>> variants;
    for (int pos = 0; pos < m; ++pos) {
      std::vector<int> v = base;
      v.insert(v.begin() + pos, 0);
      variants.push_back(std::move(v));
    }
    in.identity_bases.push_back(std::move(base));
    in.identity_variants.push_back(std::move(variants));
  }
  return in;
}

namespace {

// Traces at `=` for many prompts through one batched forward pass.
std::vector<LayerTrace> traces_for(const Params& params, OperatorKind op,
                                   const std::vector<std::vector<int>>& sequences) {
  const Vocabulary vocab(params.config.n, params.config.m);
  std::vector<std::vector<std::size_t>> prompts;
  for (const auto& s : sequences) {
    Equation eq;
    eq.op = op;
    eq.operands = s;
    prompts.push_back(encode_prompt(vocab, eq));
  }
  const BatchInput batch = make_batch(vocab, prompts, static_cast<std::size_t>(params.config.context_len));
  nn::Tape tape(false);
  const BatchGraph g = build_graph(tape, params, batch, batch.answer_rows);
  const std::size_t d = static_cast<std::size_t>(params.config.d_model);
  std::vector<LayerTrace> out(sequences.size());
  for (const nn::Var& r : g.residuals) {
    const nn::Tensor& v = r.value();
    for (std::size_t i = 0; i < sequences.size(); ++i) {
      const double* row = v.ptr() + batch.answer_rows[i] * d;
      out[i].emplace_back(row, row + d);
    }
  }
  return out;
}

std::vector<std::vector<double>> at_layer(const std::vector<LayerTrace>& traces, std::size_t layer) {
  std::vector<std::vector<double>> out;
  out.reserve(traces.size());
  for (const auto& t : traces) out.push_back(t[layer]);
  return out;
}

}  // namespace

std::vector<PermutationProbeSet> collect_permutation_sets(const Params& params, OperatorKind op,
                                                          const ProbeInputs& inputs) {
  std::vector<std::vector<int>> flat;
  for (const auto& set : inputs.permutation_sets) flat.insert(flat.end(), set.begin(), set.end());
  const auto traces = traces_for(params, op, flat);
  std::vector<PermutationProbeSet> out;
  std::size_t cursor = 0;
  for (const auto& set : inputs.permutation_sets) {
    PermutationProbeSet p;
    p.op = op;
    p.base = set.front();
    p.orderings = set;
    p.traces.assign(traces.begin() + static_cast<std::ptrdiff_t>(cursor),
                    traces.begin() + static_cast<std::ptrdiff_t>(cursor + set.size()));
    cursor += set.size();
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<IdentityProbeSet> collect_identity_sets(const Params& params, OperatorKind op,
                                                    const ProbeInputs& inputs) {
  std::vector<std::vector<int>> flat;
  for (std::size_t b = 0; b < inputs.identity_bases.size(); ++b) {
    flat.push_back(inputs.identity_bases[b]);
    flat.insert(flat.end(), inputs.identity_variants[b].begin(), inputs.identity_variants[b].end());
  }
  const auto traces = traces_for(params, op, flat);
  std::vector<IdentityProbeSet> out;
  std::size_t cursor = 0;
  for (std::size_t b = 0; b < inputs.identity_bases.size(); ++b) {
    IdentityProbeSet p;
    p.op = op;
    p.base = inputs.identity_bases[b];
    p.variants = inputs.identity_variants[b];
    p.base_trace = traces[cursor++];
    p.traces.assign(traces.begin() + static_cast<std::ptrdiff_t>(cursor),
                    traces.begin() + static_cast<std::ptrdiff_t>(cursor + p.variants.size()));
    cursor += p.variants.size();
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<LayerScores> score_checkpoint(const Params& params, const ProbeInputs& inputs) {
  const std::size_t layers = static_cast<std::size_t>(params.config.layers) + 1;
  const auto plus_perm = collect_permutation_sets(params, OperatorKind::Plus, inputs);
  const auto plus_ide = collect_identity_sets(params, OperatorKind::Plus, inputs);
  std::vector<LayerScores> out;
  for (OperatorKind other : kContrastOperators) {
    const auto other_perm = collect_permutation_sets(params, other, inputs);
    const auto other_ide = collect_identity_sets(params, other, inputs);
    LayerScores s;
    s.against = other;
    s.s_com.assign(layers, 0.0);
    s.s_ide.assign(layers, 0.0);
    for (std::size_t l = 0; l < layers; ++l) {
      for (std::size_t b = 0; b < plus_perm.size(); ++b) {
        s.s_com[l] += s_com(at_layer(plus_perm[b].traces, l), at_layer(other_perm[b].traces, l));
      }
      for (std::size_t b = 0; b < plus_ide.size(); ++b) {
        s.s_ide[l] += s_ide(plus_ide[b].base_trace[l], at_layer(plus_ide[b].traces, l),
                            other_ide[b].base_trace[l], at_layer(other_ide[b].traces, l));
      }
      s.s_com[l] /= static_cast<double>(plus_perm.size());
      s.s_ide[l] /= static_cast<double>(plus_ide.size());
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string HeatmapMatrix::name() const { return metric + "_" + std::string(operator_token(against)); }

std::vector<HeatmapMatrix> build_heatmaps(const std::vector<std::pair<int, Params>>& checkpoints,
                                          const ProbeConfig& config) {
  if (checkpoints.empty()) throw ConfigError("no checkpoints to probe");
  const ModelConfig& first = checkpoints.front().second.config;
  for (const auto& [k, p] : checkpoints) {
    if (p.config.n != first.n || p.config.m != first.m || p.config.layers != first.layers ||
        p.config.d_model != first.d_model) {
      throw ConfigError("checkpoint for K=" + std::to_string(k) + " has a different model config");
    }
  }
  const ProbeInputs inputs = make_probe_inputs(first.n, first.m, config);
  std::vector<HeatmapMatrix> com(3), ide(3);
  for (std::size_t i = 0; i < 3; ++i) {
    com[i].metric = "s_com";
    ide[i].metric = "s_ide";
    com[i].against = ide[i].against = kContrastOperators[i];
  }
  for (const auto& [k, params] : checkpoints) {
    const auto scores = score_checkpoint(params, inputs);
    for (std::size_t i = 0; i < 3; ++i) {
      com[i].k_values.push_back(k);
      ide[i].k_values.push_back(k);
      com[i].values.push_back(scores[i].s_com);
      ide[i].values.push_back(scores[i].s_ide);
    }
  }
  com.insert(com.end(), ide.begin(), ide.end());
  return com;
}

std::vector<std::pair<int, Params>> load_checkpoints(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("checkpoint directory " + dir.string() + " not found");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ckpt") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<std::pair<int, Params>> out;
  for (const auto& f : files) {
    nlohmann::json meta;
    Params p = load_checkpoint(f, &meta);
    if (!meta.contains("k_train")) throw IoError(f.string() + " has no k_train in its metadata");
    out.emplace_back(meta.at("k_train").get<int>(), std::move(p));
  }
  if (out.empty()) throw IoError("no .ckpt files under " + dir.string());
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

void write_heatmap_csv(const HeatmapMatrix& m, const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw IoError("cannot write " + file.string());
  out.precision(17);
  out << "k";
  const std::size_t cols = m.values.empty() ? 0 : m.values.front().size();
  for (std::size_t l = 1; l <= cols; ++l) out << ',' << l;
  out << '\n';
  for (std::size_t r = 0; r < m.values.size(); ++r) {
    out << m.k_values[r];
    for (double v : m.values[r]) out << ',' << v;
    out << '\n';
  }
}

void write_heatmap_svg(const HeatmapMatrix& m, const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw IoError("cannot write " + file.string());
  constexpr int cell = 48, left = 64, top = 40;
  const std::size_t rows = m.values.size();
  const std::size_t cols = rows ? m.values.front().size() : 0;
  double scale = 0.0;
  for (const auto& row : m.values) {
    for (double v : row) scale = std::max(scale, std::abs(v));
  }
  if (scale == 0.0) scale = 1.0;
  const int width = left + static_cast<int>(cols) * cell + 16;
  const int height = top + static_cast<int>(rows) * cell + 32;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<text x=\"" << left << "\" y=\"20\" font-size=\"14\">" << m.metric << "(+, "
      << operator_token(m.against) << ")</text>\n";
  for (std::size_t r = 0; r < rows; ++r) {
    const int y = top + static_cast<int>(r) * cell;
    out << "<text x=\"" << left - 8 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"end\">K="
        << m.k_values[r] << "</text>\n";
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = m.values[r][c];
      const double t = std::min(1.0, std::abs(v) / scale);
      // Blend from white towards green (>= 0) or purple (< 0).
      const int base[3] = {255, 255, 255};
      const int target[3] = {v >= 0 ? 46 : 118, v >= 0 ? 139 : 42, v >= 0 ? 87 : 131};
      int rgb[3];
      for (int i = 0; i < 3; ++i) rgb[i] = static_cast<int>(std::lround(base[i] + t * (target[i] - base[i])));
      const int x = left + static_cast<int>(c) * cell;
      std::ostringstream val;
      val.precision(2);
      val << v;
      out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
          << "\" fill=\"rgb(" << rgb[0] << ',' << rgb[1] << ',' << rgb[2] << ")\" stroke=\"#ccc\"/>\n";
      out << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4
          << "\" text-anchor=\"middle\" font-size=\"9\">" << val.str() << "</text>\n";
    }
  }
  for (std::size_t c = 0; c < cols; ++c) {
    out << "<text x=\"" << left + static_cast<int>(c) * cell + cell / 2 << "\" y=\""
        << top + static_cast<int>(rows) * cell + 16 << "\" text-anchor=\"middle\">" << c + 1 << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace algstruct::probe
