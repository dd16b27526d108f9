#include "algstruct/theorem_lab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "algstruct/error.hpp"
#include "algstruct/rng.hpp"

namespace algstruct::theorem {

bool is_saturated(double v) noexcept { return v <= kSentinel / 2; }

double sat_add(double a, double b) noexcept {
  if (is_saturated(a) || is_saturated(b)) return kSentinel;
  return a + b;
}

double sat_mul(double w, double x) noexcept {
  if (w == 0.0 || x == 0.0) return 0.0;
  if (is_saturated(x) || is_saturated(w)) return kSentinel;
  return w * x;
}

Linear Linear::zero(std::size_t dim) {
  Linear l;
  l.dim = dim;
  return l;
}

Linear Linear::identity(std::size_t dim) {
  Linear l;
  l.dim = dim;
  l.is_zero = false;
  l.is_identity = true;
  return l;
}

std::vector<double> Linear::apply(const std::vector<double>& x) const {
  if (is_zero) return std::vector<double>(dim, 0.0);
  if (is_identity) return x;
  std::vector<double> y(dim, 0.0);
  for (const Entry& e : entries) y[e.row] = sat_add(y[e.row], sat_mul(e.weight, x[e.col]));
  return y;
}

std::vector<double> ProofConstruction::embed(int symbol, int position) const {
  if (symbol < 0 || symbol > n + 1) throw ShapeError("symbol " + std::to_string(symbol) + " out of range");
  if (position < 0 || position >= context) {
    throw ShapeError("position " + std::to_string(position) + " outside context " + std::to_string(context));
  }
  std::vector<double> e(dim, 0.0);
  const auto& w = words[static_cast<std::size_t>(symbol)];
  const auto& p = positions[static_cast<std::size_t>(position)];
  const std::size_t pos_off = word_dim + zero_dim;
  const bool is_op = symbol == operator_symbol();

  if (layout == Layout::Identity) {
    if (symbol == 0) {
      // z_0 lives in its own block, away from the word block.
      std::fill(e.begin() + static_cast<std::ptrdiff_t>(word_dim),
                e.begin() + static_cast<std::ptrdiff_t>(pos_off), 1.0);
    } else if (!is_op || !operator_sentinel) {
      std::copy(w.begin(), w.end(), e.begin());
    }
  } else {
    std::copy(w.begin(), w.end(), e.begin());
  }

  if (is_op && operator_sentinel) {
    std::fill(e.begin() + static_cast<std::ptrdiff_t>(word_dim), e.end(), kSentinel);
  } else {
    std::copy(p.begin(), p.end(), e.begin() + static_cast<std::ptrdiff_t>(pos_off));
  }
  return e;
}

namespace {

ProofConstruction base_construction(int n, int m, int context, Layout layout) {
  if (n < 2) throw ConfigError("construction needs n >= 2");
  if (m < 2) throw ConfigError("construction needs M >= 2");
  ProofConstruction pc;
  pc.n = n;
  pc.m = m;
  pc.context = context;
  pc.layout = layout;
  const auto symbols = static_cast<std::size_t>(n + 2);
  pc.word_dim = symbols;
  pc.zero_dim = layout == Layout::Identity ? 1 : 0;
  pc.position_dim = layout == Layout::Trivial ? 0 : static_cast<std::size_t>(context);
  pc.dim = pc.word_dim + pc.zero_dim + pc.position_dim;
  pc.words.assign(symbols, std::vector<double>(pc.word_dim, 0.0));
  for (std::size_t s = 0; s < symbols; ++s) pc.words[s][s] = 1.0;
  pc.positions.assign(static_cast<std::size_t>(context), std::vector<double>(pc.position_dim, 0.0));
  if (layout != Layout::Trivial) {
    for (std::size_t p = 0; p < pc.position_dim; ++p) pc.positions[p][p] = 1.0;
  }
  pc.w_q = Linear::zero(pc.dim);
  pc.w_k = Linear::zero(pc.dim);
  pc.w_v = Linear::identity(pc.dim);
  pc.b_q.assign(pc.dim, 1.0);
  pc.b_k.assign(pc.dim, 1.0);
  return pc;
}

std::vector<int> prompt_symbols(const ProofConstruction& pc, const std::vector<int>& operands) {
  if (operands.empty()) throw ShapeError("empty operand sequence");
  const std::size_t len = 2 * operands.size();
  if (len > static_cast<std::size_t>(pc.context)) {
    throw ShapeError("prompt of " + std::to_string(len) + " tokens exceeds context " +
                     std::to_string(pc.context));
  }
  std::vector<int> out;
  for (std::size_t i = 0; i < operands.size(); ++i) {
    if (operands[i] < 0 || operands[i] >= pc.n) {
      throw ShapeError("operand z" + std::to_string(operands[i]) + " not in Z_" + std::to_string(pc.n));
    }
    if (i) out.push_back(pc.operator_symbol());
    out.push_back(operands[i]);
  }
  out.push_back(pc.equals_symbol());
  return out;
}

double dot_sat(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc = sat_add(acc, sat_mul(a[i], b[i]));
  return acc;
}

std::vector<double> affine(const Linear& w, const std::vector<double>& b, const std::vector<double>& x) {
  std::vector<double> y = w.apply(x);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = sat_add(y[i], b[i]);
  return y;
}

// Embeddings of every context slot; padding is the zero vector.
std::vector<std::vector<double>> context_embeddings(const ProofConstruction& pc,
                                                    const std::vector<int>& symbols) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(pc.context),
                                       std::vector<double>(pc.dim, 0.0));
  for (std::size_t i = 0; i < symbols.size(); ++i) out[i] = pc.embed(symbols[i], static_cast<int>(i));
  return out;
}

std::vector<double> weights_from(const ProofConstruction& pc,
                                 const std::vector<std::vector<double>>& emb, std::size_t query,
                                 Normalization norm) {
  const std::vector<double> q = affine(pc.w_q, pc.b_q, emb[query]);
  std::vector<double> scores;
  scores.reserve(emb.size());
  for (const auto& e : emb) scores.push_back(dot_sat(q, affine(pc.w_k, pc.b_k, e)));
  std::vector<double> a(scores.size(), 0.0);
  if (norm == Normalization::Ratio) {
    double total = 0.0;
    for (double s : scores) total = sat_add(total, s);
    if (is_saturated(total) || total == 0.0) throw ShapeError("ratio attention undefined for these scores");
    for (std::size_t j = 0; j < a.size(); ++j) a[j] = scores[j] / total;
  } else {
    double mx = -std::numeric_limits<double>::infinity();
    for (double s : scores) mx = std::max(mx, s);
    double z = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
      a[j] = is_saturated(scores[j]) ? 0.0 : std::exp(scores[j] - mx);
      z += a[j];
    }
    for (double& v : a) v /= z;
  }
  return a;
}

}  // namespace

ProofConstruction build_commutative_assignment(int n, int m, int context) {
  if (context <= 2 * m) {
    throw ConfigError("context " + std::to_string(context) + " must exceed 2M = " + std::to_string(2 * m));
  }
  return base_construction(n, m, context, Layout::Commutative);
}

ProofConstruction build_identity_assignment(int n, int m, int context) {
  if (context <= 2 * m + 2) {
    throw ConfigError("context " + std::to_string(context) + " must exceed 2M + 2 = " +
                      std::to_string(2 * m + 2));
  }
  return base_construction(n, m, context, Layout::Identity);
}

ProofConstruction build_trivial_assignment(int n, int m, int context) {
  if (context <= 2 * m + 2) {
    throw ConfigError("context " + std::to_string(context) + " must exceed 2M + 2 = " +
                      std::to_string(2 * m + 2));
  }
  ProofConstruction pc = base_construction(n, m, context, Layout::Trivial);
  pc.operator_sentinel = false;
  std::fill(pc.words[0].begin(), pc.words[0].end(), 0.0);
  return pc;
}

ProofConstruction noncommutative_counter_configuration(const ProofConstruction& pc) {
  ProofConstruction out = pc;
  out.operator_sentinel = false;
  if (out.position_dim == 0) return out;
  // Key coordinate 0 grows with the position index, so later slots get more
  // weight under either normalisation.
  Linear wk;
  wk.dim = out.dim;
  wk.is_zero = false;
  const std::size_t pos_off = out.word_dim + out.zero_dim;
  for (std::size_t p = 0; p < out.position_dim; ++p) {
    wk.entries.push_back({0, pos_off + p, static_cast<double>(p + 1) / static_cast<double>(out.position_dim)});
  }
  out.w_k = std::move(wk);
  return out;
}

ProofConstruction identity_counter_configuration(const ProofConstruction& pc) {
  ProofConstruction out = pc;
  out.operator_sentinel = false;
  return out;
}

double orthogonality_defect(const ProofConstruction& pc) {
  std::vector<std::vector<double>> vecs;
  for (const auto& w : pc.words) {
    std::vector<double> v(pc.dim, 0.0);
    std::copy(w.begin(), w.end(), v.begin());
    vecs.push_back(std::move(v));
  }
  const std::size_t pos_off = pc.word_dim + pc.zero_dim;
  for (const auto& p : pc.positions) {
    std::vector<double> v(pc.dim, 0.0);
    std::copy(p.begin(), p.end(), v.begin() + static_cast<std::ptrdiff_t>(pos_off));
    vecs.push_back(std::move(v));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < vecs.size(); ++i) {
    for (std::size_t j = i + 1; j < vecs.size(); ++j) {
      worst = std::max(worst, std::abs(std::inner_product(vecs[i].begin(), vecs[i].end(),
                                                          vecs[j].begin(), 0.0)));
    }
  }
  return worst;
}

std::vector<double> ConstructedState::word_block() const {
  return {values.begin(), values.begin() + static_cast<std::ptrdiff_t>(word_dim)};
}

std::vector<double> attention_weights(const ProofConstruction& pc, const std::vector<int>& operands,
                                      Normalization norm) {
  const auto symbols = prompt_symbols(pc, operands);
  return weights_from(pc, context_embeddings(pc, symbols), symbols.size() - 1, norm);
}

ConstructedState state_at_equals(const ProofConstruction& pc, const std::vector<int>& operands,
                                 Normalization norm) {
  const auto symbols = prompt_symbols(pc, operands);
  const auto emb = context_embeddings(pc, symbols);
  const auto a = weights_from(pc, emb, symbols.size() - 1, norm);
  ConstructedState s;
  s.word_dim = pc.word_dim;
  s.values.assign(pc.dim, 0.0);
  for (std::size_t j = 0; j < emb.size(); ++j) {
    const std::vector<double> v = pc.w_v.apply(emb[j]);
    for (std::size_t k = 0; k < pc.dim; ++k) s.values[k] = sat_add(s.values[k], sat_mul(a[j], v[k]));
  }
  s.saturated.resize(pc.dim);
  for (std::size_t k = 0; k < pc.dim; ++k) s.saturated[k] = is_saturated(s.values[k]);
  return s;
}

std::vector<double> operand_projection(const ProofConstruction& pc, const ConstructedState& s) {
  return {s.values.begin(), s.values.begin() + pc.n};
}

double state_deviation(const ConstructedState& a, const ConstructedState& b) {
  if (a.values.size() != b.values.size()) throw ShapeError("state dimensions differ");
  if (a.saturated != b.saturated) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t k = 0; k < a.values.size(); ++k) {
    if (!a.saturated[k]) worst = std::max(worst, std::abs(a.values[k] - b.values[k]));
  }
  return worst;
}

double check_permutation_invariance(const ProofConstruction& pc, const std::vector<int>& operands,
                                    int num_permutations, std::uint64_t seed, Normalization norm) {
  const ConstructedState base = state_at_equals(pc, operands, norm);
  Rng rng(seed, "theorem-permutation");
  double worst = 0.0;
  std::vector<int> perm = operands;
  for (int i = 0; i < num_permutations; ++i) {
    rng.shuffle(perm);
    worst = std::max(worst, state_deviation(base, state_at_equals(pc, perm, norm)));
  }
  return worst;
}

double check_identity_insertion(const ProofConstruction& pc, const std::vector<int>& operands,
                                int insert_position, Normalization norm) {
  if (insert_position < 0 || insert_position > static_cast<int>(operands.size())) {
    throw ConfigError("insert position " + std::to_string(insert_position) + " outside [0, " +
                      std::to_string(operands.size()) + "]");
  }
  std::vector<int> inserted = operands;
  inserted.insert(inserted.begin() + insert_position, 0);
  return state_deviation(state_at_equals(pc, operands, norm), state_at_equals(pc, inserted, norm));
}

TrivialDemoReport trivial_embedding_demo(int n, int m, std::uint64_t oplus_seed) {
  const ProofConstruction pc = build_trivial_assignment(n, m, 2 * m + 3);
  const CanonicalMap mapping(n, m, oplus_seed);
  TrivialDemoReport report;
  report.n = n;
  report.m = m;

  std::vector<std::vector<int>> sequences;
  std::vector<int> seq(static_cast<std::size_t>(m), 0);
  while (true) {
    sequences.push_back(seq);
    std::size_t i = 0;
    while (i < seq.size() && ++seq[i] == n) seq[i++] = 0;
    if (i == seq.size()) break;
  }

  // The trivial state is a function of the operand multiset alone (z_0 and
  // positions are invisible), so every operator looks invariant.
  bool invariant = true;
  for (const auto& s : sequences) {
    std::vector<int> sorted = s;
    std::sort(sorted.begin(), sorted.end());
    if (state_deviation(state_at_equals(pc, s), state_at_equals(pc, sorted)) > 1e-12) invariant = false;
  }

  for (OperatorKind op : kAllOperators) {
    std::map<std::vector<double>, std::vector<Label>> groups;
    for (const auto& s : sequences) {
      Label label;
      try {
        label = evaluate(op, elements(s, n), mapping);
      } catch (const UnmappedMultiset&) {
        continue;  // the all-z_0 input has no oplus value
      }
      groups[state_at_equals(pc, s).values].push_back(label);
    }
    OperatorAmbiguity amb;
    amb.invariance_holds = invariant;
    amb.state_groups = groups.size();
    for (const auto& [state, labels] : groups) {
      if (std::any_of(labels.begin(), labels.end(), [&](const Label& l) { return l != labels.front(); })) {
        ++amb.inconsistent_groups;
      }
    }
    report.per_operator[op] = amb;
  }

  std::ostringstream out;
  out << "trivial embedding (zero positions, zero z0) on Z_" << n << " with M=" << m << ": "
      << sequences.size() << " prompts\n";
  for (const auto& [op, amb] : report.per_operator) {
    out << "  " << operator_token(op) << ": invariance " << (amb.invariance_holds ? "holds" : "fails")
        << ", " << amb.state_groups << " states, " << amb.inconsistent_groups
        << " with conflicting labels" << (amb.inconsistent_groups ? " (not representable)" : "") << '\n';
  }
  report.text = out.str();
  return report;
}

bool VerificationReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckLine& c) { return c.passed; });
}

std::string VerificationReport::render() const {
  std::ostringstream out;
  out.precision(3);
  for (const auto& c : checks) {
    out << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << std::scientific << c.value
        << (c.below ? " <= " : " > ") << c.threshold << std::defaultfloat << '\n';
  }
  out << demo.text;
  out << (passed() ? "all theorem checks passed" : "theorem checks FAILED") << '\n';
  return out.str();
}

VerificationReport verify_theorems(const VerificationSpec& spec) {
  if (spec.trials < 1) throw ConfigError("trials must be >= 1");
  VerificationReport report;
  Rng rng(spec.seed, "theorem-trials");
  const Normalization norms[] = {Normalization::Ratio, Normalization::Softmax};
  const char* norm_names[] = {"ratio", "softmax"};

  double orth = 0.0;
  double perm_dev[2] = {0.0, 0.0};
  double ide_dev[2] = {0.0, 0.0};
  double perm_counter[2] = {0.0, 0.0};
  double ide_counter[2] = {0.0, 0.0};
  double projection_err = 0.0;
  double uniform_err = 0.0;
  std::size_t trials = 0;

  for (int n : spec.n_values) {
    for (int m : spec.m_values) {
      const int context = std::max(spec.context_factor * m, 2 * m + 3);
      const ProofConstruction comm = build_commutative_assignment(n, m, context);
      const ProofConstruction ide = build_identity_assignment(n, m, context);
      const ProofConstruction comm_bad = noncommutative_counter_configuration(comm);
      const ProofConstruction ide_bad = identity_counter_configuration(ide);
      orth = std::max({orth, orthogonality_defect(comm), orthogonality_defect(ide)});

      for (int t = 0; t < spec.trials; ++t, ++trials) {
        std::vector<int> seq(static_cast<std::size_t>(m));
        for (int& v : seq) v = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - 1)));
        const int pos = static_cast<int>(rng.below(static_cast<std::uint64_t>(m + 1)));
        const std::uint64_t perm_seed = rng.next_u64();
        for (int k = 0; k < 2; ++k) {
          perm_dev[k] = std::max(perm_dev[k], check_permutation_invariance(comm, seq, spec.permutations,
                                                                           perm_seed, norms[k]));
          ide_dev[k] = std::max(ide_dev[k], check_identity_insertion(ide, seq, pos, norms[k]));
          perm_counter[k] = std::max(perm_counter[k],
                                     check_permutation_invariance(comm_bad, seq, spec.permutations,
                                                                  perm_seed, norms[k]));
          ide_counter[k] = std::max(ide_counter[k], check_identity_insertion(ide_bad, seq, pos, norms[k]));
        }
        if (t == 0) {
          // Direct summation, no attention machinery.
          const ConstructedState s = state_at_equals(comm, seq);
          std::vector<double> direct(static_cast<std::size_t>(n), 0.0);
          for (int v : seq) direct[static_cast<std::size_t>(v)] += 1.0 / context;
          const auto proj = operand_projection(comm, s);
          for (std::size_t i = 0; i < direct.size(); ++i) {
            projection_err = std::max(projection_err, std::abs(proj[i] - direct[i]));
          }
          for (double a : attention_weights(comm, seq)) {
            uniform_err = std::max(uniform_err, std::abs(a - 1.0 / context));
          }
        }
      }
    }
  }

  auto add = [&](std::string name, double value, double threshold, bool below) {
    report.checks.push_back({std::move(name), value, threshold, below,
                             below ? value <= threshold : value > threshold});
  };
  const std::string count = " (" + std::to_string(trials) + " trials)";
  add("orthogonality of word/position vectors", orth, 1e-12, true);
  add("uniform attention weight error", uniform_err, 1e-12, true);
  add("operand block vs direct summation", projection_err, 1e-12, true);
  for (int k = 0; k < 2; ++k) {
    const std::string suffix = std::string(" [") + norm_names[k] + "]" + count;
    add("permutation invariance" + suffix, perm_dev[k], 1e-12, true);
    add("identity insertion invariance" + suffix, ide_dev[k], 1e-12, true);
    add("counter-configuration breaks permutation invariance" + suffix, perm_counter[k], 1e-6, false);
    add("counter-configuration breaks identity insertion" + suffix, ide_counter[k], 1e-6, false);
  }
  report.demo = trivial_embedding_demo(3, 2, spec.seed);
  add("trivial embedding: lt label conflicts at n=3, M=2",
      static_cast<double>(report.demo.per_operator.at(OperatorKind::Left).inconsistent_groups), 0.0, false);
  return report;
}

}  // namespace algstruct::theorem
