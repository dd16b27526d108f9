#include "algstruct/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "algstruct/error.hpp"
#include "algstruct/rng.hpp"

namespace algstruct {

namespace {

constexpr std::uint64_t kEnumerationLimit = 2'000'000;

std::uint64_t family_seed(std::uint64_t seed, std::string_view kind, std::size_t index) {
  return derive_seed(seed, std::string(kind) + "-" + std::to_string(index));
}

std::uint64_t saturating_pow(std::uint64_t base, int exp) {
  std::uint64_t r = 1;
  for (int i = 0; i < exp; ++i) {
    if (r > ~std::uint64_t{0} / base) return ~std::uint64_t{0};
    r *= base;
  }
  return r;
}

// Non-decreasing tuples over {1..n-1} of length m that are not constant.
std::vector<std::vector<int>> candidate_multisets(int n, int m, std::size_t needed, Rng& rng) {
  std::uint64_t total = 1;  // C(n-2+m, m), saturating
  for (int i = 1; i <= m; ++i) {
    const std::uint64_t num = static_cast<std::uint64_t>(n - 2 + i);
    if (total > kEnumerationLimit * 64) break;
    total = total * num / static_cast<std::uint64_t>(i);
  }
  std::vector<std::vector<int>> out;
  if (total <= kEnumerationLimit) {
    std::vector<int> current;
    std::function<void(int, int)> rec = [&](int start, int remaining) {
      if (remaining == 0) {
        if (current.front() != current.back()) out.push_back(current);
        return;
      }
      for (int v = start; v < n; ++v) {
        current.push_back(v);
        rec(v, remaining - 1);
        current.pop_back();
      }
    };
    rec(1, m);
    rng.shuffle(out);
    if (out.size() > needed) out.resize(needed);
    return out;
  }
  std::set<std::vector<int>> seen;
  while (out.size() < needed) {
    std::vector<int> ms(static_cast<std::size_t>(m));
    for (auto& v : ms) v = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - 1)));
    std::sort(ms.begin(), ms.end());
    if (ms.front() == ms.back()) continue;
    if (seen.insert(ms).second) out.push_back(std::move(ms));
  }
  return out;
}

std::vector<std::vector<int>> sample_arrangements(const std::vector<int>& sorted, std::size_t k,
                                                  int cap, Rng& rng) {
  const std::uint64_t available = distinct_arrangements(sorted);
  k = std::min<std::uint64_t>(k, available);
  std::vector<std::vector<int>> out;
  if (available <= static_cast<std::uint64_t>(cap)) {
    std::vector<int> p = sorted;
    do {
      out.push_back(p);
    } while (std::next_permutation(p.begin(), p.end()));
    rng.shuffle(out);
    out.resize(k);
    return out;
  }
  std::set<std::vector<int>> seen;
  while (out.size() < k) {
    std::vector<int> p = sorted;
    rng.shuffle(p);
    if (seen.insert(p).second) out.push_back(std::move(p));
  }
  return out;
}

void check_dims(int n, int m) {
  if (n < 2) throw CapacityError("n must be >= 2");
  if (m < 2) throw CapacityError("M must be >= 2");
}

Equation make_equation(OperatorKind op, const std::vector<int>& operands, int n,
                       const CanonicalMap& mapping) {
  const auto elems = elements(operands, n);
  return Equation{op, operands, evaluate(op, elems, mapping)};
}

template <typename T>
void truncate(std::vector<T>& v, std::size_t k) {
  if (v.size() > k) v.resize(k);
}

bool contains_zero(const std::vector<int>& xs) {
  return std::find(xs.begin(), xs.end(), 0) != xs.end();
}

}  // namespace

std::string_view tag_name(TaskTag tag) noexcept {
  switch (tag) {
    case TaskTag::PlusComm: return "PLUS_COMM";
    case TaskTag::PlusIde: return "PLUS_IDE";
    case TaskTag::OplusComm: return "OPLUS_COMM";
    case TaskTag::OplusIde: return "OPLUS_IDE";
    case TaskTag::Ominus: return "OMINUS";
    case TaskTag::Left: return "LEFT";
    case TaskTag::Right: return "RIGHT";
  }
  return "?";
}

OperatorKind tag_operator(TaskTag tag) noexcept {
  switch (tag) {
    case TaskTag::PlusComm:
    case TaskTag::PlusIde: return OperatorKind::Plus;
    case TaskTag::OplusComm:
    case TaskTag::OplusIde: return OperatorKind::Oplus;
    case TaskTag::Ominus: return OperatorKind::Ominus;
    case TaskTag::Left: return OperatorKind::Left;
    case TaskTag::Right: return OperatorKind::Right;
  }
  return OperatorKind::Plus;
}

int tag_multiplier(TaskTag tag) noexcept { return is_commutative(tag_operator(tag)) ? 1 : 2; }

std::uint64_t distinct_arrangements(const std::vector<int>& multiset) {
  std::map<int, int> counts;
  for (int v : multiset) ++counts[v];
  // Multinomial via successive binomials to stay exact.
  std::uint64_t result = 1;
  int placed = 0;
  for (const auto& [value, c] : counts) {
    for (int i = 1; i <= c; ++i) {
      result = result * static_cast<std::uint64_t>(placed + i) / static_cast<std::uint64_t>(i);
    }
    placed += c;
  }
  return result;
}

std::vector<MultisetFamily> build_commutativity_families(int n, int m, int count_train_rich,
                                                         int count_test_held,
                                                         int perms_per_family,
                                                         std::uint64_t seed,
                                                         int arrangement_cap) {
  check_dims(n, m);
  if (n < 3) throw CapacityError("commutativity families need at least two non-zero elements");
  if (perms_per_family < 2) throw CapacityError("perms_per_family must be >= 2");
  if (count_train_rich < 0 || count_test_held < 0) throw CapacityError("negative family count");
  const std::size_t needed = static_cast<std::size_t>(count_train_rich + count_test_held);
  Rng order_rng(seed, "comm-order");
  auto bases = candidate_multisets(n, m, needed, order_rng);
  if (bases.size() < needed) {
    throw CapacityError("commutativity: requested " + std::to_string(needed) +
                        " multiset families but only " + std::to_string(bases.size()) +
                        " exist for n=" + std::to_string(n) + ", M=" + std::to_string(m));
  }
  std::vector<MultisetFamily> out;
  out.reserve(needed);
  for (std::size_t i = 0; i < needed; ++i) {
    MultisetFamily fam;
    fam.base = bases[i];
    fam.cls = i < static_cast<std::size_t>(count_test_held) ? FamilyClass::TestHeld
                                                            : FamilyClass::TrainRich;
    Rng rng(family_seed(seed, "comm-family", i));
    auto perms = sample_arrangements(fam.base, static_cast<std::size_t>(perms_per_family),
                                     arrangement_cap, rng);
    if (fam.cls == FamilyClass::TestHeld) {
      fam.train_perms.push_back(perms.front());
      fam.test_perms.assign(perms.begin() + 1, perms.end());
    } else {
      fam.train_perms = std::move(perms);
    }
    out.push_back(std::move(fam));
  }
  return out;
}

std::vector<IdentityFamily> build_identity_families(int n, int m, int count_train_side,
                                                    int count_test_side, std::uint64_t seed) {
  check_dims(n, m);
  if (count_train_side < 0 || count_test_side < 0) throw CapacityError("negative family count");
  const std::uint64_t needed = static_cast<std::uint64_t>(count_train_side + count_test_side);
  const std::uint64_t space = saturating_pow(static_cast<std::uint64_t>(n - 1), m - 1);
  if (needed > space) {
    throw CapacityError("identity: requested " + std::to_string(needed) + " base sequences but only " +
                        std::to_string(space) + " exist for n=" + std::to_string(n) +
                        ", M=" + std::to_string(m));
  }
  Rng rng(seed, "ide-bases");
  std::vector<std::uint64_t> codes;
  if (space <= kEnumerationLimit) {
    codes.resize(space);
    for (std::uint64_t i = 0; i < space; ++i) codes[i] = i;
    for (std::uint64_t i = 0; i < needed; ++i) {
      const std::uint64_t j = i + rng.below(space - i);
      std::swap(codes[i], codes[j]);
    }
    codes.resize(needed);
  } else {
    std::set<std::uint64_t> seen;
    while (codes.size() < needed) {
      const std::uint64_t c = rng.below(space);
      if (seen.insert(c).second) codes.push_back(c);
    }
  }
  std::vector<IdentityFamily> out;
  out.reserve(needed);
  for (std::uint64_t i = 0; i < needed; ++i) {
    IdentityFamily fam;
    std::uint64_t code = codes[i];
    for (int d = 0; d < m - 1; ++d) {
      fam.base.push_back(1 + static_cast<int>(code % static_cast<std::uint64_t>(n - 1)));
      code /= static_cast<std::uint64_t>(n - 1);
    }
    for (int pos = 0; pos < m; ++pos) {
      auto v = fam.base;
      v.insert(v.begin() + pos, 0);
      fam.variants.push_back(std::move(v));
    }
    fam.side = i < static_cast<std::uint64_t>(count_test_side) ? FamilySide::Test : FamilySide::Train;
    out.push_back(std::move(fam));
  }
  return out;
}

std::map<OperatorKind, NoncommutativeSplit> build_noncommutative_pool(int n, int count,
                                                                      const SequencePool& pool) {
  auto flatten = [](const SplitSequences& s) {
    std::vector<std::vector<int>> all = s.commutativity;
    all.insert(all.end(), s.identity.begin(), s.identity.end());
    return all;
  };
  const auto train = flatten(pool.train);
  const auto test = flatten(pool.test);
  if (train.size() < static_cast<std::size_t>(count) || test.size() < static_cast<std::size_t>(count)) {
    throw CapacityError("non-commutative pool: need " + std::to_string(count) +
                        " sequences per split, have " + std::to_string(train.size()) + "/" +
                        std::to_string(test.size()));
  }
  const CanonicalMap unused(n, 1, 0);
  std::map<OperatorKind, NoncommutativeSplit> out;
  for (OperatorKind op : {OperatorKind::Ominus, OperatorKind::Left, OperatorKind::Right}) {
    NoncommutativeSplit split;
    for (int i = 0; i < count; ++i) {
      split.train.push_back(make_equation(op, train[static_cast<std::size_t>(i)], n, unused));
      split.test.push_back(make_equation(op, test[static_cast<std::size_t>(i)], n, unused));
    }
    out.emplace(op, std::move(split));
  }
  return out;
}

CanonicalMap bundle_oplus_map(const Manifest& manifest) {
  return CanonicalMap(manifest.n, manifest.m, derive_seed(manifest.seed, "datagen.oplus"));
}

DatasetBundle compose_dataset(int n, int m, int k_train, int k_test, std::uint64_t seed,
                              const GenerationOptions& options) {
  check_dims(n, m);
  if (k_train < 1) throw CapacityError("K_train must be >= 1");
  if (k_test < 1) throw CapacityError("K_test must be >= 1");
  const int per_family = options.perms_per_family;
  if (per_family < 2) throw CapacityError("perms_per_family must be >= 2");

  const std::uint64_t comm_seed = derive_seed(seed, "datagen.comm");
  const std::uint64_t ide_seed = derive_seed(seed, "datagen.ide");

  // Commutativity: grow the held families until they cover K_test test items,
  // then grow the rich families until train reaches K_train.
  auto count_items = [](const std::vector<MultisetFamily>& fams, bool train) {
    std::size_t c = 0;
    for (const auto& f : fams) c += train ? f.train_perms.size() : f.test_perms.size();
    return c;
  };
  std::vector<MultisetFamily> comm;
  int held = (k_test + per_family - 2) / (per_family - 1);
  try {
    for (;; ++held) {
      comm = build_commutativity_families(n, m, 0, held, per_family, comm_seed,
                                          options.arrangement_cap);
      if (count_items(comm, false) >= static_cast<std::size_t>(k_test)) break;
    }
    if (held > k_train) {
      throw CapacityError("K_train=" + std::to_string(k_train) + " cannot host one training permutation for each of " +
                          std::to_string(held) + " held-out multisets");
    }
    int rich = std::max(0, (k_train - held + per_family - 1) / per_family);
    for (;; ++rich) {
      comm = build_commutativity_families(n, m, rich, held, per_family, comm_seed,
                                          options.arrangement_cap);
      if (count_items(comm, true) >= static_cast<std::size_t>(k_train)) break;
    }
  } catch (const CapacityError& e) {
    throw CapacityError(std::string("PLUS_COMM/OPLUS_COMM: ") + e.what());
  }

  const int ide_test = (k_test + m - 1) / m;
  if (ide_test > k_train) {
    throw CapacityError("PLUS_IDE/OPLUS_IDE: K_train=" + std::to_string(k_train) +
                        " cannot host the base equations of " + std::to_string(ide_test) +
                        " held-out identity families");
  }
  const int ide_train = std::max(0, (k_train - ide_test + m) / (m + 1));
  std::vector<IdentityFamily> ide;
  try {
    ide = build_identity_families(n, m, ide_train, ide_test, ide_seed);
  } catch (const CapacityError& e) {
    throw CapacityError(std::string("PLUS_IDE/OPLUS_IDE: ") + e.what());
  }

  SequencePool pool;
  for (const auto& f : comm) {
    if (f.cls == FamilyClass::TestHeld) {
      pool.train.commutativity.push_back(f.train_perms.front());
      pool.test.commutativity.insert(pool.test.commutativity.end(), f.test_perms.begin(),
                                     f.test_perms.end());
    }
  }
  for (const auto& f : comm) {
    if (f.cls == FamilyClass::TrainRich) {
      pool.train.commutativity.insert(pool.train.commutativity.end(), f.train_perms.begin(),
                                      f.train_perms.end());
    }
  }
  for (const auto& f : ide) {
    if (f.side == FamilySide::Test) {
      pool.train.identity.push_back(f.base);
      pool.test.identity.insert(pool.test.identity.end(), f.variants.begin(), f.variants.end());
    }
  }
  for (const auto& f : ide) {
    if (f.side == FamilySide::Train) {
      pool.train.identity.push_back(f.base);
      pool.train.identity.insert(pool.train.identity.end(), f.variants.begin(), f.variants.end());
    }
  }
  truncate(pool.train.commutativity, static_cast<std::size_t>(k_train));
  truncate(pool.train.identity, static_cast<std::size_t>(k_train));
  truncate(pool.test.commutativity, static_cast<std::size_t>(k_test));
  truncate(pool.test.identity, static_cast<std::size_t>(k_test));

  DatasetBundle bundle;
  bundle.manifest.n = n;
  bundle.manifest.m = m;
  bundle.manifest.k_train = k_train;
  bundle.manifest.k_test = k_test;
  bundle.manifest.seed = seed;
  bundle.manifest.options = options;
  const CanonicalMap mapping = bundle_oplus_map(bundle.manifest);
  bundle.manifest.oplus_digest = mapping.digest();

  auto emit = [&](const SplitSequences& seqs, std::vector<TaggedEquation>& out) {
    for (OperatorKind op : {OperatorKind::Plus, OperatorKind::Oplus}) {
      const TaskTag comm_tag = op == OperatorKind::Plus ? TaskTag::PlusComm : TaskTag::OplusComm;
      const TaskTag ide_tag = op == OperatorKind::Plus ? TaskTag::PlusIde : TaskTag::OplusIde;
      for (const auto& s : seqs.commutativity) out.push_back({make_equation(op, s, n, mapping), comm_tag});
      for (const auto& s : seqs.identity) out.push_back({make_equation(op, s, n, mapping), ide_tag});
    }
  };
  emit(pool.train, bundle.train);
  emit(pool.test, bundle.test);

  // Pools may be short only if the family builders returned fewer items than requested.
  if (pool.train.commutativity.size() != static_cast<std::size_t>(k_train) ||
      pool.train.identity.size() != static_cast<std::size_t>(k_train)) {
    throw CapacityError("train pool short of K_train");
  }
  if (pool.test.commutativity.size() != static_cast<std::size_t>(k_test) ||
      pool.test.identity.size() != static_cast<std::size_t>(k_test)) {
    throw CapacityError("test pool short of K_test");
  }
  // om/lt/rt reuse the pool verbatim: 2K per split.
  auto noncomm_train = build_noncommutative_pool(n, 2 * k_train, SequencePool{pool.train, pool.train});
  auto noncomm_test = build_noncommutative_pool(n, 2 * k_test, SequencePool{pool.test, pool.test});
  const std::pair<OperatorKind, TaskTag> ops[] = {{OperatorKind::Ominus, TaskTag::Ominus},
                                                  {OperatorKind::Left, TaskTag::Left},
                                                  {OperatorKind::Right, TaskTag::Right}};
  for (const auto& [op, tag] : ops) {
    for (auto& e : noncomm_train.at(op).train) bundle.train.push_back({std::move(e), tag});
    for (auto& e : noncomm_test.at(op).test) bundle.test.push_back({std::move(e), tag});
  }

  for (const auto& [tag, c] : category_counts(bundle.train)) {
    bundle.manifest.train_counts[std::string(tag_name(tag))] = c;
  }
  for (const auto& [tag, c] : category_counts(bundle.test)) {
    bundle.manifest.test_counts[std::string(tag_name(tag))] = c;
  }
  return bundle;
}

std::map<TaskTag, int> category_counts(const std::vector<TaggedEquation>& split) {
  std::map<TaskTag, int> counts;
  for (TaskTag t : kAllTags) counts[t] = 0;
  for (const auto& te : split) ++counts[te.tag];
  return counts;
}

std::string format_equation(const Equation& eq) {
  std::string out;
  const std::string_view op = operator_token(eq.op);
  for (std::size_t i = 0; i < eq.operands.size(); ++i) {
    if (i) {
      out += ' ';
      out += op;
      out += ' ';
    }
    out += 'z';
    out += std::to_string(eq.operands[i]);
  }
  out += " = ";
  out += label_token(eq.label);
  return out;
}

namespace {

bool parse_index(std::string_view digits, int& value) {
  if (digits.empty() || digits.size() > 6) return false;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
  return ec == std::errc() && ptr == digits.data() + digits.size() && value >= 0;
}

}  // namespace

Equation parse_equation(std::string_view line, std::size_t line_no) {
  std::vector<std::string_view> toks;
  std::size_t pos = 0;
  while (pos <= line.size()) {
    const std::size_t next = line.find(' ', pos);
    const std::size_t end = next == std::string_view::npos ? line.size() : next;
    toks.push_back(line.substr(pos, end - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  // z op z op ... z = label  -> odd token count >= 3
  if (toks.size() < 3 || toks.size() % 2 == 0) throw ParseError(line_no, "malformed equation");
  if (toks[toks.size() - 2] != "=") throw ParseError(line_no, "missing '='");
  Equation eq;
  bool have_op = false;
  for (std::size_t i = 0; i + 2 < toks.size(); ++i) {
    const auto tok = toks[i];
    if (i % 2 == 0) {
      int v = 0;
      if (tok.size() < 2 || tok[0] != 'z' || !parse_index(tok.substr(1), v)) {
        throw ParseError(line_no, "bad element token '" + std::string(tok) + "'");
      }
      eq.operands.push_back(v);
    } else {
      auto op = operator_from_token(tok);
      if (!op) throw ParseError(line_no, "bad operator token '" + std::string(tok) + "'");
      if (have_op && *op != eq.op) throw ParseError(line_no, "mixed operators");
      eq.op = *op;
      have_op = true;
    }
  }
  const auto lab = toks.back();
  int v = 0;
  if (lab.size() < 2 || !parse_index(lab.substr(1), v)) {
    throw ParseError(line_no, "bad label token '" + std::string(lab) + "'");
  }
  switch (lab[0]) {
    case 'z': eq.label = {Label::Kind::Element, v}; break;
    case 'r': eq.label = {Label::Kind::Result, v}; break;
    case 'c': eq.label = {Label::Kind::Count, v}; break;
    default: throw ParseError(line_no, "bad label token '" + std::string(lab) + "'");
  }
  return eq;
}

TaskTag infer_tag(const Equation& eq, int m) {
  const bool ide = contains_zero(eq.operands) || static_cast<int>(eq.operands.size()) < m;
  switch (eq.op) {
    case OperatorKind::Plus: return ide ? TaskTag::PlusIde : TaskTag::PlusComm;
    case OperatorKind::Oplus: return ide ? TaskTag::OplusIde : TaskTag::OplusComm;
    case OperatorKind::Ominus: return TaskTag::Ominus;
    case OperatorKind::Left: return TaskTag::Left;
    case OperatorKind::Right: return TaskTag::Right;
  }
  return TaskTag::PlusComm;
}

namespace {

nlohmann::json manifest_to_json(const Manifest& m) {
  char digest[17];
  std::snprintf(digest, sizeof digest, "%016llx", static_cast<unsigned long long>(m.oplus_digest));
  return nlohmann::json{{"format_version", 1},
                        {"n", m.n},
                        {"m", m.m},
                        {"k_train", m.k_train},
                        {"k_test", m.k_test},
                        {"seed", m.seed},
                        {"perms_per_family", m.options.perms_per_family},
                        {"arrangement_cap", m.options.arrangement_cap},
                        {"oplus_digest", digest},
                        {"train_counts", m.train_counts},
                        {"test_counts", m.test_counts}};
}

Manifest manifest_from_json(const nlohmann::json& j) {
  Manifest m;
  m.n = j.at("n").get<int>();
  m.m = j.at("m").get<int>();
  m.k_train = j.at("k_train").get<int>();
  m.k_test = j.at("k_test").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.options.perms_per_family = j.at("perms_per_family").get<int>();
  m.options.arrangement_cap = j.at("arrangement_cap").get<int>();
  m.oplus_digest = std::stoull(j.at("oplus_digest").get<std::string>(), nullptr, 16);
  m.train_counts = j.at("train_counts").get<std::map<std::string, int>>();
  m.test_counts = j.at("test_counts").get<std::map<std::string, int>>();
  return m;
}

void write_split(const std::vector<TaggedEquation>& split, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  for (const auto& te : split) out << format_equation(te.eq) << '\n';
}

std::vector<TaggedEquation> read_split(const std::filesystem::path& file, const Manifest& manifest) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read " + file.string());
  std::vector<TaggedEquation> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Equation eq = parse_equation(line, line_no);
    for (int v : eq.operands) {
      if (v >= manifest.n) throw ParseError(line_no, "element z" + std::to_string(v) + " outside Z_" + std::to_string(manifest.n));
    }
    const TaskTag tag = infer_tag(eq, manifest.m);
    out.push_back({std::move(eq), tag});
  }
  return out;
}

}  // namespace

void serialize(const DatasetBundle& bundle, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_split(bundle.train, dir / "train.txt");
  write_split(bundle.test, dir / "test.txt");
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  out << manifest_to_json(bundle.manifest).dump(2) << '\n';
}

DatasetBundle parse(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  if (!in) throw IoError("missing manifest.json in " + dir.string());
  DatasetBundle bundle;
  try {
    bundle.manifest = manifest_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("manifest: ") + e.what());
  }
  bundle.train = read_split(dir / "train.txt", bundle.manifest);
  bundle.test = read_split(dir / "test.txt", bundle.manifest);
  return bundle;
}

AuditReport audit_no_leakage(const DatasetBundle& bundle) {
  AuditReport report;
  using Key = std::pair<OperatorKind, std::vector<int>>;

  std::set<Key> train_exact;
  for (const auto& te : bundle.train) train_exact.insert({te.eq.op, te.eq.operands});
  std::set<Key> reported;
  for (const auto& te : bundle.test) {
    Key k{te.eq.op, te.eq.operands};
    if (train_exact.count(k) && reported.insert(k).second) {
      report.violations.push_back("leak: '" + format_equation(te.eq) + "' appears in both splits");
    }
  }

  auto is_comm = [](TaskTag t) { return t == TaskTag::PlusComm || t == TaskTag::OplusComm; };
  auto is_ide = [](TaskTag t) { return t == TaskTag::PlusIde || t == TaskTag::OplusIde; };
  auto sorted_of = [](std::vector<int> v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  auto stripped = [](const std::vector<int>& v) {
    std::vector<int> out;
    for (int x : v) {
      if (x != 0) out.push_back(x);
    }
    return out;
  };
  auto join = [](const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  };

  // Commutativity: each held-out multiset has exactly one training permutation.
  std::map<Key, std::set<std::vector<int>>> train_perms;
  for (const auto& te : bundle.train) {
    if (is_comm(te.tag)) train_perms[{te.eq.op, sorted_of(te.eq.operands)}].insert(te.eq.operands);
  }
  std::set<Key> checked;
  for (const auto& te : bundle.test) {
    if (!is_comm(te.tag)) continue;
    Key k{te.eq.op, sorted_of(te.eq.operands)};
    if (!checked.insert(k).second) continue;
    auto it = train_perms.find(k);
    const std::size_t c = it == train_perms.end() ? 0 : it->second.size();
    if (c != 1) {
      report.violations.push_back("family: " + std::string(operator_token(k.first)) + " multiset {" +
                                  join(k.second) + "} has " + std::to_string(c) +
                                  " training permutations (expected 1)");
    }
  }

  // Identity: held-out families keep their base in train and no variant in train.
  std::set<Key> train_bases;
  std::set<Key> train_variant_bases;
  for (const auto& te : bundle.train) {
    if (!is_ide(te.tag)) continue;
    if (contains_zero(te.eq.operands)) {
      train_variant_bases.insert({te.eq.op, stripped(te.eq.operands)});
    } else {
      train_bases.insert({te.eq.op, te.eq.operands});
    }
  }
  checked.clear();
  for (const auto& te : bundle.test) {
    if (!is_ide(te.tag)) continue;
    Key k{te.eq.op, stripped(te.eq.operands)};
    if (!checked.insert(k).second) continue;
    if (!train_bases.count(k)) {
      report.violations.push_back("identity: " + std::string(operator_token(k.first)) + " base (" +
                                  join(k.second) + ") missing from train");
    }
    if (train_variant_bases.count(k)) {
      report.violations.push_back("identity: " + std::string(operator_token(k.first)) + " family (" +
                                  join(k.second) + ") split across train and test");
    }
  }
  return report;
}

std::size_t label_mismatches(const DatasetBundle& bundle) {
  const CanonicalMap mapping = bundle_oplus_map(bundle.manifest);
  std::size_t bad = 0;
  for (const auto* split : {&bundle.train, &bundle.test}) {
    for (const auto& te : *split) {
      try {
        const auto elems = elements(te.eq.operands, bundle.manifest.n);
        if (evaluate(te.eq.op, elems, mapping) != te.eq.label) ++bad;
      } catch (const Error&) {
        ++bad;
      }
    }
  }
  return bad;
}

}  // namespace algstruct
