#pragma once

// Leakage-controlled train/test corpora over Z_n.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "algstruct/algebra.hpp"

namespace algstruct {

enum class TaskTag { PlusComm, PlusIde, OplusComm, OplusIde, Ominus, Left, Right };

inline constexpr std::array<TaskTag, 7> kAllTags = {TaskTag::PlusComm, TaskTag::PlusIde,
                                                    TaskTag::OplusComm, TaskTag::OplusIde,
                                                    TaskTag::Ominus, TaskTag::Left,
                                                    TaskTag::Right};

std::string_view tag_name(TaskTag tag) noexcept;
OperatorKind tag_operator(TaskTag tag) noexcept;
// Instances of this tag per split at scale K (K or 2K).
int tag_multiplier(TaskTag tag) noexcept;

struct Equation {
  OperatorKind op = OperatorKind::Plus;
  std::vector<int> operands;
  Label label;

  friend bool operator==(const Equation&, const Equation&) = default;
};

struct TaggedEquation {
  Equation eq;
  TaskTag tag = TaskTag::PlusComm;

  friend bool operator==(const TaggedEquation&, const TaggedEquation&) = default;
};

struct GenerationOptions {
  int perms_per_family = 10;
  // Distinct arrangements are fully enumerated up to this count.
  int arrangement_cap = 720;

  friend bool operator==(const GenerationOptions&, const GenerationOptions&) = default;
};

struct Manifest {
  int n = 0;
  int m = 0;
  int k_train = 0;
  int k_test = 0;
  std::uint64_t seed = 0;
  GenerationOptions options;
  std::uint64_t oplus_digest = 0;
  std::map<std::string, int> train_counts;
  std::map<std::string, int> test_counts;

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

struct DatasetBundle {
  std::vector<TaggedEquation> train;
  std::vector<TaggedEquation> test;
  Manifest manifest;

  friend bool operator==(const DatasetBundle&, const DatasetBundle&) = default;
};

enum class FamilyClass { TrainRich, TestHeld };

struct MultisetFamily {
  std::vector<int> base;  // sorted, all indices > 0
  std::vector<std::vector<int>> train_perms;
  std::vector<std::vector<int>> test_perms;
  FamilyClass cls = FamilyClass::TrainRich;
};

enum class FamilySide { Train, Test };

struct IdentityFamily {
  std::vector<int> base;                  // M-1 non-zero elements
  std::vector<std::vector<int>> variants;  // z_0 inserted at positions 0..M-1
  FamilySide side = FamilySide::Train;
};

// Number of distinct orderings of a multiset.
std::uint64_t distinct_arrangements(const std::vector<int>& multiset);

// The first `count_test_held` families are TEST_HELD, the rest TRAIN_RICH.
std::vector<MultisetFamily> build_commutativity_families(int n, int m, int count_train_rich,
                                                         int count_test_held,
                                                         int perms_per_family,
                                                         std::uint64_t seed,
                                                         int arrangement_cap = 720);

// The first `count_test_side` families are test-side.
std::vector<IdentityFamily> build_identity_families(int n, int m, int count_train_side,
                                                    int count_test_side, std::uint64_t seed);

// Operand sequences for one split, ordered commutativity block then identity block.
struct SplitSequences {
  std::vector<std::vector<int>> commutativity;
  std::vector<std::vector<int>> identity;
};

struct SequencePool {
  SplitSequences train;
  SplitSequences test;
};

struct NoncommutativeSplit {
  std::vector<Equation> train;
  std::vector<Equation> test;
};

// Relabels the shared operand pool under each of om / lt / rt; `count` items per
// split per operator are taken from the pool.
std::map<OperatorKind, NoncommutativeSplit> build_noncommutative_pool(int n, int count,
                                                                      const SequencePool& pool);

DatasetBundle compose_dataset(int n, int m, int k_train, int k_test, std::uint64_t seed,
                              const GenerationOptions& options = {});

// The oplus map a bundle was labelled with.
CanonicalMap bundle_oplus_map(const Manifest& manifest);

std::string format_equation(const Equation& eq);
Equation parse_equation(std::string_view line, std::size_t line_no = 1);
// Recovers the task tag from operator, arity and z_0 presence.
TaskTag infer_tag(const Equation& eq, int m);

// Writes train.txt, test.txt and manifest.json into `dir`.
void serialize(const DatasetBundle& bundle, const std::filesystem::path& dir);
DatasetBundle parse(const std::filesystem::path& dir);

std::map<TaskTag, int> category_counts(const std::vector<TaggedEquation>& split);

struct AuditReport {
  std::vector<std::string> violations;
  bool ok() const noexcept { return violations.empty(); }
};

AuditReport audit_no_leakage(const DatasetBundle& bundle);
// Equations whose stored label differs from the algebra oracle.
std::size_t label_mismatches(const DatasetBundle& bundle);

}  // namespace algstruct
