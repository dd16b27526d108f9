#pragma once

// Hand-built one-layer attention constructions whose hidden state at `=` is
// exactly invariant to operand permutation (commutative layout) or to z_0
// insertion (identity layout), plus the counter-configurations that break them.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "algstruct/algebra.hpp"

namespace algstruct::theorem {

// Stand-in for -inf. Arithmetic on embeddings saturates: anything at or below
// half the sentinel is treated as -inf, sentinel + finite stays sentinel and
// 0 * sentinel is 0.
inline constexpr double kSentinel = -1e30;

bool is_saturated(double v) noexcept;
double sat_add(double a, double b) noexcept;
double sat_mul(double w, double x) noexcept;

enum class Layout {
  Commutative,  // [word, position]
  Identity,     // [word, z0, position]
  Trivial,      // [word] only; positions and z_0 are zero
};

// How raw scores become attention weights: s_i / sum_j s_j, or softmax.
enum class Normalization { Ratio, Softmax };

// Square map stored as sparse entries, with shortcuts for the two shapes the
// proofs use.
struct Linear {
  struct Entry {
    std::size_t row = 0;
    std::size_t col = 0;
    double weight = 0.0;
  };
  std::size_t dim = 0;
  bool is_zero = true;
  bool is_identity = false;
  std::vector<Entry> entries;  // only read when neither flag is set

  static Linear zero(std::size_t dim);
  static Linear identity(std::size_t dim);
  std::vector<double> apply(const std::vector<double>& x) const;
};

// Symbols are indexed 0..n-1 for z_i, n for the operator and n+1 for `=`.
struct ProofConstruction {
  int n = 0;
  int m = 0;
  int context = 0;  // L
  Layout layout = Layout::Commutative;
  bool operator_sentinel = true;

  std::size_t word_dim = 0;
  std::size_t zero_dim = 0;
  std::size_t position_dim = 0;
  std::size_t dim = 0;

  std::vector<std::vector<double>> words;      // [n+2][word_dim]
  std::vector<std::vector<double>> positions;  // [L][position_dim]

  Linear w_q, w_k, w_v;
  std::vector<double> b_q, b_k;

  int operator_symbol() const noexcept { return n; }
  int equals_symbol() const noexcept { return n + 1; }
  // Full embedding of `symbol` at 0-based `position`.
  std::vector<double> embed(int symbol, int position) const;
};

ProofConstruction build_commutative_assignment(int n, int m, int context);
ProofConstruction build_identity_assignment(int n, int m, int context);
// Zero positions, zero z_0 word vector, no sentinel anywhere.
ProofConstruction build_trivial_assignment(int n, int m, int context);

// Operators drop the sentinel and keys read the position block through a
// linear ramp, so attention is no longer uniform.
ProofConstruction noncommutative_counter_configuration(const ProofConstruction& pc);
// Operators drop the sentinel (a lt / rt style layout).
ProofConstruction identity_counter_configuration(const ProofConstruction& pc);

// Largest |<u, v>| over distinct pairs of word and position vectors embedded
// in the full space.
double orthogonality_defect(const ProofConstruction& pc);

struct ConstructedState {
  std::vector<double> values;
  std::vector<bool> saturated;
  std::size_t word_dim = 0;

  std::vector<double> word_block() const;
};

// Attention weights of the `=` query over all L context slots.
std::vector<double> attention_weights(const ProofConstruction& pc, const std::vector<int>& operands,
                                      Normalization norm = Normalization::Ratio);

// Operands are interleaved with the operator and closed by `=`; the rest of
// the context is zero padding.
ConstructedState state_at_equals(const ProofConstruction& pc, const std::vector<int>& operands,
                                 Normalization norm = Normalization::Ratio);

// Word-block coordinates of the operand symbols only.
std::vector<double> operand_projection(const ProofConstruction& pc, const ConstructedState& s);

// L-inf distance over coordinates finite in both states; +inf if the
// saturation masks differ.
double state_deviation(const ConstructedState& a, const ConstructedState& b);

double check_permutation_invariance(const ProofConstruction& pc, const std::vector<int>& operands,
                                    int num_permutations, std::uint64_t seed,
                                    Normalization norm = Normalization::Ratio);

// Compares the prompt against the one with z_0 (and an extra operator)
// inserted before operand `insert_position` (M means append).
double check_identity_insertion(const ProofConstruction& pc, const std::vector<int>& operands,
                                int insert_position, Normalization norm = Normalization::Ratio);

struct OperatorAmbiguity {
  bool invariance_holds = false;   // permutation and z_0 insertion leave the state unchanged
  std::size_t state_groups = 0;    // distinct states over all enumerated prompts
  std::size_t inconsistent_groups = 0;  // states shared by prompts with different labels
};

struct TrivialDemoReport {
  int n = 0;
  int m = 0;
  std::map<OperatorKind, OperatorAmbiguity> per_operator;
  std::string text;
};

// Enumerates every length-M operand sequence over Z_n under the trivial
// embedding and counts label collisions per operator.
TrivialDemoReport trivial_embedding_demo(int n, int m, std::uint64_t oplus_seed = 1);

struct CheckLine {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool below = true;  // pass when value <= threshold, else when value > threshold
  bool passed = false;
};

struct VerificationReport {
  std::vector<CheckLine> checks;
  TrivialDemoReport demo;
  bool passed() const;
  std::string render() const;
};

struct VerificationSpec {
  std::vector<int> n_values{7};
  std::vector<int> m_values{6};
  int trials = 1000;  // per (n, M) pair and per check
  int permutations = 4;
  std::uint64_t seed = 1;
  // Context length as a multiple of M (at least 2M + 3 is enforced).
  int context_factor = 16;
};

VerificationReport verify_theorems(const VerificationSpec& spec);

}  // namespace algstruct::theorem
