#pragma once

// Exact semantics of Z_n and the five operators used as label oracles.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace algstruct {

class GroupElement {
 public:
  GroupElement(int index, int modulus);

  int index() const noexcept { return index_; }
  int modulus() const noexcept { return modulus_; }

  friend bool operator==(const GroupElement&, const GroupElement&) = default;

 private:
  int index_;
  int modulus_;
};

enum class OperatorKind { Plus, Oplus, Ominus, Left, Right };

inline constexpr OperatorKind kAllOperators[] = {OperatorKind::Plus, OperatorKind::Oplus,
                                                 OperatorKind::Ominus, OperatorKind::Left,
                                                 OperatorKind::Right};

bool is_commutative(OperatorKind op) noexcept;
bool preserves_identity(OperatorKind op) noexcept;
// Spelling used in dataset files: `+ op om lt rt`.
std::string_view operator_token(OperatorKind op) noexcept;
std::optional<OperatorKind> operator_from_token(std::string_view tok) noexcept;

// Elements of one modulus, built from raw indices.
std::vector<GroupElement> elements(std::span<const int> indices, int modulus);

GroupElement mod_add_chain(std::span<const GroupElement> operands);
// Number of arrivals at z_0 on the walk a -> a+1 -> ... -> b. a == b walks the
// full cycle and yields exactly 1.
int ominus_pair(const GroupElement& a, const GroupElement& b);
int ominus_chain(std::span<const GroupElement> operands);
GroupElement left_fold(std::span<const GroupElement> operands);
GroupElement right_fold(std::span<const GroupElement> operands);

// Sorted operand indices with every z_0 removed. This is the key that the
// oplus operator is a function of.
std::vector<int> canonical_multiset(std::span<const GroupElement> operands);

// Seeded assignment of an r-token to every z_0-free multiset of size 1..max_arity
// over {1, ..., n-1}. Collisions across multisets are allowed.
class CanonicalMap {
 public:
  CanonicalMap(int modulus, int max_arity, std::uint64_t seed);

  int modulus() const noexcept { return modulus_; }
  int max_arity() const noexcept { return max_arity_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t size() const noexcept { return table_.size(); }

  std::optional<int> find(const std::vector<int>& multiset) const;
  // FNV-1a over (multiset, r) pairs in lexicographic multiset order.
  std::uint64_t digest() const;

 private:
  int modulus_;
  int max_arity_;
  std::uint64_t seed_;
  std::map<std::vector<int>, int> table_;
};

// Returns the r index.
int oplus_eval(std::span<const GroupElement> operands, const CanonicalMap& mapping);

// Tagged output of any operator.
struct Label {
  enum class Kind { Element, Result, Count };
  Kind kind = Kind::Element;
  int value = 0;

  friend bool operator==(const Label&, const Label&) = default;
  friend auto operator<=>(const Label&, const Label&) = default;
};

std::string label_token(const Label& label);

// Dispatches to the operator's oracle.
Label evaluate(OperatorKind op, std::span<const GroupElement> operands, const CanonicalMap& mapping);

}  // namespace algstruct
