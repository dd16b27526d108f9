#include "algstruct/algebra.hpp"

#include <algorithm>
#include <functional>

#include "algstruct/error.hpp"
#include "algstruct/rng.hpp"

namespace algstruct {

GroupElement::GroupElement(int index, int modulus) : index_(index), modulus_(modulus) {
  if (modulus < 2) throw ArityError("modulus must be >= 2, got " + std::to_string(modulus));
  if (index < 0 || index >= modulus) {
    throw ArityError("element index " + std::to_string(index) + " outside Z_" +
                     std::to_string(modulus));
  }
}

bool is_commutative(OperatorKind op) noexcept {
  return op == OperatorKind::Plus || op == OperatorKind::Oplus;
}

bool preserves_identity(OperatorKind op) noexcept { return is_commutative(op); }

std::string_view operator_token(OperatorKind op) noexcept {
  switch (op) {
    case OperatorKind::Plus: return "+";
    case OperatorKind::Oplus: return "op";
    case OperatorKind::Ominus: return "om";
    case OperatorKind::Left: return "lt";
    case OperatorKind::Right: return "rt";
  }
  return "?";
}

std::optional<OperatorKind> operator_from_token(std::string_view tok) noexcept {
  for (OperatorKind op : kAllOperators) {
    if (operator_token(op) == tok) return op;
  }
  return std::nullopt;
}

std::vector<GroupElement> elements(std::span<const int> indices, int modulus) {
  std::vector<GroupElement> out;
  out.reserve(indices.size());
  for (int i : indices) out.emplace_back(i, modulus);
  return out;
}

namespace {

int common_modulus(std::span<const GroupElement> operands) {
  const int n = operands.front().modulus();
  for (const auto& e : operands) {
    if (e.modulus() != n) {
      throw ModulusMismatch("operands mix Z_" + std::to_string(n) + " and Z_" +
                            std::to_string(e.modulus()));
    }
  }
  return n;
}

void require_nonempty(std::span<const GroupElement> operands, const char* what) {
  if (operands.empty()) throw ArityError(std::string(what) + " needs at least one operand");
}

}  // namespace

GroupElement mod_add_chain(std::span<const GroupElement> operands) {
  require_nonempty(operands, "mod_add_chain");
  const int n = common_modulus(operands);
  long long sum = 0;
  for (const auto& e : operands) sum += e.index();
  return GroupElement(static_cast<int>(sum % n), n);
}

int ominus_pair(const GroupElement& a, const GroupElement& b) {
  if (a.modulus() != b.modulus()) {
    throw ModulusMismatch("ominus_pair on Z_" + std::to_string(a.modulus()) + " and Z_" +
                          std::to_string(b.modulus()));
  }
  // The walk (a+1, ..., b) passes z_0 exactly when it wraps (b < a) or lands on
  // it (b == 0); the self-hop a == b is a full cycle.
  return b.index() <= a.index() ? 1 : 0;
}

int ominus_chain(std::span<const GroupElement> operands) {
  if (operands.size() < 2) throw ArityError("ominus_chain needs at least two operands");
  common_modulus(operands);
  int total = 0;
  for (std::size_t i = 1; i < operands.size(); ++i) total += ominus_pair(operands[i - 1], operands[i]);
  return total;
}

GroupElement left_fold(std::span<const GroupElement> operands) {
  require_nonempty(operands, "left_fold");
  common_modulus(operands);
  return operands.front();
}

GroupElement right_fold(std::span<const GroupElement> operands) {
  require_nonempty(operands, "right_fold");
  common_modulus(operands);
  return operands.back();
}

std::vector<int> canonical_multiset(std::span<const GroupElement> operands) {
  std::vector<int> out;
  for (const auto& e : operands) {
    if (e.index() != 0) out.push_back(e.index());
  }
  std::sort(out.begin(), out.end());
  return out;
}

CanonicalMap::CanonicalMap(int modulus, int max_arity, std::uint64_t seed)
    : modulus_(modulus), max_arity_(max_arity), seed_(seed) {
  if (modulus < 2) throw ArityError("CanonicalMap modulus must be >= 2");
  if (max_arity < 1) throw ArityError("CanonicalMap arity must be >= 1");
  Rng rng(seed, "oplus-map");
  // Enumerate non-decreasing tuples over {1..n-1} by size then lexicographically;
  // the draw order is therefore fixed by (n, max_arity, seed).
  std::vector<int> current;
  std::function<void(int, int)> rec = [&](int start, int remaining) {
    if (remaining == 0) {
      table_.emplace(current, static_cast<int>(rng.below(static_cast<std::uint64_t>(modulus_))));
      return;
    }
    for (int v = start; v < modulus_; ++v) {
      current.push_back(v);
      rec(v, remaining - 1);
      current.pop_back();
    }
  };
  for (int size = 1; size <= max_arity; ++size) rec(1, size);
}

std::optional<int> CanonicalMap::find(const std::vector<int>& multiset) const {
  auto it = table_.find(multiset);
  if (it == table_.end()) return std::nullopt;
  return it->second;
}

std::uint64_t CanonicalMap::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  mix(static_cast<std::uint64_t>(modulus_));
  for (const auto& [key, r] : table_) {
    mix(key.size());
    for (int k : key) mix(static_cast<std::uint64_t>(k));
    mix(static_cast<std::uint64_t>(r));
  }
  return h;
}

int oplus_eval(std::span<const GroupElement> operands, const CanonicalMap& mapping) {
  require_nonempty(operands, "oplus_eval");
  const int n = common_modulus(operands);
  if (n != mapping.modulus()) {
    throw ModulusMismatch("oplus mapping built for Z_" + std::to_string(mapping.modulus()) +
                          ", operands in Z_" + std::to_string(n));
  }
  const auto key = canonical_multiset(operands);
  if (auto r = mapping.find(key)) return *r;
  std::string desc = "{";
  for (std::size_t i = 0; i < key.size(); ++i) desc += (i ? "," : "") + std::to_string(key[i]);
  throw UnmappedMultiset("multiset " + desc + "} has no oplus assignment");
}

std::string label_token(const Label& label) {
  switch (label.kind) {
    case Label::Kind::Element: return "z" + std::to_string(label.value);
    case Label::Kind::Result: return "r" + std::to_string(label.value);
    case Label::Kind::Count: return "c" + std::to_string(label.value);
  }
  return "?";
}

Label evaluate(OperatorKind op, std::span<const GroupElement> operands, const CanonicalMap& mapping) {
  switch (op) {
    case OperatorKind::Plus: return {Label::Kind::Element, mod_add_chain(operands).index()};
    case OperatorKind::Oplus: return {Label::Kind::Result, oplus_eval(operands, mapping)};
    case OperatorKind::Ominus: return {Label::Kind::Count, ominus_chain(operands)};
    case OperatorKind::Left: return {Label::Kind::Element, left_fold(operands).index()};
    case OperatorKind::Right: return {Label::Kind::Element, right_fold(operands).index()};
  }
  throw ArityError("unknown operator");
}

}  // namespace algstruct
