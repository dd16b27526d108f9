// End-to-end acceptance run. Prints one PASS/FAIL line per criterion, with
// indented detail lines underneath, and exits non-zero if any criterion fails.
//
//   acceptance [--work-dir DIR] [--only NAME[,NAME...]]
//
// Names: algebra, dataset, theorem, gradcheck, training, probe, determinism.

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "algstruct/algebra.hpp"
#include "algstruct/datagen.hpp"
#include "algstruct/model.hpp"
#include "algstruct/probe.hpp"
#include "algstruct/rng.hpp"
#include "algstruct/tape.hpp"
#include "algstruct/theorem_lab.hpp"
#include "algstruct/trainer.hpp"

using namespace algstruct;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = true;
  std::vector<std::string> details;

  void check(bool ok, const std::string& what) {
    details.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
    passed = passed && ok;
  }
  void note(const std::string& what) { details.push_back("     " + what); }
};

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(4);
  ss << v;
  return ss.str();
}

class Stopwatch {
 public:
  double wall() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_).count();
  }
  double cpu() const { return static_cast<double>(std::clock() - cpu_) / CLOCKS_PER_SEC; }

 private:
  std::chrono::steady_clock::time_point wall_ = std::chrono::steady_clock::now();
  std::clock_t cpu_ = std::clock();
};

// --- algebra -------------------------------------------------------------

int walk_zero_arrivals(int a, int b, int n) {
  int count = 0;
  int cur = a;
  do {
    cur = (cur + 1) % n;
    count += cur == 0 ? 1 : 0;
  } while (cur != b);
  return count;
}

int chain(std::initializer_list<int> ops, int n) {
  return ominus_chain(elements(std::vector<int>(ops), n));
}

Outcome algebra_suite() {
  Outcome o;
  Stopwatch sw;
  std::size_t axiom_failures = 0;
  for (int n : {7, 11, 13}) {
    auto add = [n](int a, int b) {
      return mod_add_chain(std::vector<GroupElement>{GroupElement(a, n), GroupElement(b, n)}).index();
    };
    for (int a = 0; a < n; ++a) {
      int inverses = 0;
      if (add(a, 0) != a || add(0, a) != a) ++axiom_failures;
      for (int b = 0; b < n; ++b) {
        const int ab = add(a, b);
        if (ab != (a + b) % n || ab != add(b, a)) ++axiom_failures;
        if (ab == 0) ++inverses;
        for (int c = 0; c < n; ++c) {
          if (add(ab, c) != add(a, add(b, c))) ++axiom_failures;
        }
      }
      if (inverses != 1) ++axiom_failures;
    }
  }
  o.check(axiom_failures == 0, "Abelian axioms on Z_7, Z_11, Z_13 (" + std::to_string(axiom_failures) + " failures)");

  std::size_t anti = 0, ident = 0, walk = 0;
  for (int n : {7, 11, 13}) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (ominus_pair(GroupElement(i, n), GroupElement(j, n)) != walk_zero_arrivals(i, j, n)) ++walk;
        if (i == 0 || j == 0) continue;
        if (i != j && chain({i, j}, n) + chain({j, i}, n) != 1) ++anti;
        if (i < j && chain({i, j}, n) == chain({i, 0, j}, n)) ++ident;
      }
    }
  }
  o.check(walk == 0, "ominus pair matches walk simulation (" + std::to_string(walk) + " failures)");
  o.check(anti == 0, "ominus antisymmetry (" + std::to_string(anti) + " failures)");
  o.check(ident == 0, "ominus identity failure (" + std::to_string(ident) + " failures)");

  bool examples = chain({3, 1}, 5) == 1 && chain({4, 2, 1}, 5) == 2;
  for (int i = 0; i < 5; ++i) examples = examples && chain({i, i}, 5) == 1;
  examples = examples && chain({3, 4, 5, 5, 5, 6}, 7) == 2 &&
             mod_add_chain(elements(std::vector<int>{3, 4, 5, 5, 5, 6}, 7)).index() == 0 &&
             chain({4, 3, 0, 5, 3, 1}, 7) == 4 && chain({6, 5, 5, 3, 5, 4}, 7) == 4 &&
             chain({2, 2, 4, 3, 6, 4}, 7) == 3;
  o.check(examples, "worked ominus and addition examples");
  const double t = sw.wall();
  o.check(t < 1.0, "runtime " + fmt(t) + " s < 1 s");
  return o;
}

// --- dataset -------------------------------------------------------------

Outcome dataset_suite() {
  Outcome o;
  Stopwatch sw;
  const DatasetBundle b = compose_dataset(7, 6, 50, 50, 1);
  o.check(b.train.size() == 500 && b.test.size() == 500,
          "sizes " + std::to_string(b.train.size()) + "/" + std::to_string(b.test.size()));
  bool counts = true;
  for (const auto* split : {&b.train, &b.test}) {
    const auto c = category_counts(*split);
    for (TaskTag t : kAllTags) counts = counts && c.count(t) && c.at(t) == 50 * tag_multiplier(t);
  }
  o.check(counts, "4xK + 3x2K composition in both splits");
  const auto audit = audit_no_leakage(b);
  o.check(audit.ok(), "audit reports " + std::to_string(audit.violations.size()) + " violations");

  // Label oracle recomputed here, independent of the bundle's own check.
  const CanonicalMap map = bundle_oplus_map(b.manifest);
  std::size_t bad = 0;
  for (const auto* split : {&b.train, &b.test}) {
    for (const auto& te : *split) {
      const auto& ops = te.eq.operands;
      Label want;
      switch (te.eq.op) {
        case OperatorKind::Plus: {
          int s = 0;
          for (int x : ops) s += x;
          want = {Label::Kind::Element, s % 7};
          break;
        }
        case OperatorKind::Oplus:
          want = {Label::Kind::Result, oplus_eval(elements(ops, 7), map)};
          break;
        case OperatorKind::Ominus: {
          int c = 0;
          for (std::size_t i = 0; i + 1 < ops.size(); ++i) c += walk_zero_arrivals(ops[i], ops[i + 1], 7);
          want = {Label::Kind::Count, c};
          break;
        }
        case OperatorKind::Left: want = {Label::Kind::Element, ops.front()}; break;
        case OperatorKind::Right: want = {Label::Kind::Element, ops.back()}; break;
      }
      if (want != te.eq.label) ++bad;
    }
  }
  o.check(bad == 0, "labels match oracle (" + std::to_string(bad) + " mismatches)");

  auto sorted = [](std::vector<int> v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  std::map<std::pair<OperatorKind, std::vector<int>>, std::set<std::vector<int>>> train_perms;
  std::set<std::pair<OperatorKind, std::vector<int>>> train_exact;
  for (const auto& te : b.train) {
    train_exact.insert({te.eq.op, te.eq.operands});
    if (te.tag == TaskTag::PlusComm || te.tag == TaskTag::OplusComm) {
      train_perms[{te.eq.op, sorted(te.eq.operands)}].insert(te.eq.operands);
    }
  }
  std::size_t comm_bad = 0, ide_bad = 0;
  for (const auto& te : b.test) {
    if (te.tag == TaskTag::PlusComm || te.tag == TaskTag::OplusComm) {
      auto it = train_perms.find({te.eq.op, sorted(te.eq.operands)});
      if (it == train_perms.end() || it->second.size() != 1) ++comm_bad;
    }
    if (te.tag == TaskTag::PlusIde || te.tag == TaskTag::OplusIde) {
      std::vector<int> base;
      for (int x : te.eq.operands) {
        if (x != 0) base.push_back(x);
      }
      if (!train_exact.count({te.eq.op, base})) ++ide_bad;
    }
  }
  o.check(comm_bad == 0, "each commutativity test item has exactly one train permutation (" +
                             std::to_string(comm_bad) + " bad)");
  o.check(ide_bad == 0, "each identity test family has its base in train (" + std::to_string(ide_bad) + " bad)");
  const double t = sw.wall();
  o.check(t < 5.0, "runtime " + fmt(t) + " s < 5 s");
  return o;
}

// --- theorem -------------------------------------------------------------

Outcome theorem_suite() {
  Outcome o;
  Stopwatch sw;
  theorem::VerificationSpec spec;
  spec.n_values = {7, 11, 13};
  spec.m_values = {2, 3, 4, 5, 6, 7, 8};
  spec.trials = 50;  // per (n, M) pair: 21 pairs x 50 = 1050 trials per check
  spec.seed = 1;
  const auto report = theorem::verify_theorems(spec);
  for (const auto& c : report.checks) {
    o.check(c.passed, c.name + " = " + fmt(c.value) + (c.below ? " <= " : " > ") + fmt(c.threshold));
  }
  const auto& left = report.demo.per_operator.at(OperatorKind::Left);
  o.check(left.inconsistent_groups >= 1,
          "trivial embedding: lt has " + std::to_string(left.inconsistent_groups) +
              " inconsistent state groups at n=3, M=2");
  o.note("trials per check: " + std::to_string(spec.trials * 21));
  const double t = sw.wall();
  o.check(t < 10.0, "runtime " + fmt(t) + " s < 10 s");
  return o;
}

// --- gradient check ------------------------------------------------------

Outcome gradcheck_suite() {
  Outcome o;
  Stopwatch sw;
  ModelConfig c;
  c.layers = 2;
  c.heads = 2;
  c.d_model = 8;
  c.d_ff = 16;
  Params p = init_params(c, 3);
  // Larger weights so attention and MLP paths carry non-trivial gradients.
  Rng rng(17);
  for (auto& [name, t] : p.named()) {
    for (double& x : t->data()) x += 0.3 * rng.normal();
  }
  const Vocabulary vocab(7, 6);
  const DatasetBundle b = compose_dataset(7, 6, 2, 1, 5);
  std::vector<std::vector<std::size_t>> seqs;
  std::vector<std::size_t> targets;
  for (std::size_t i = 0; i < b.train.size(); i += 2) {
    seqs.push_back(encode_prompt(vocab, b.train[i].eq));
    targets.push_back(vocab.label(b.train[i].eq.label));
  }
  const BatchInput batch = make_batch(vocab, seqs, static_cast<std::size_t>(c.context_len));
  nn::Tape tape;
  const BatchGraph g = build_graph(tape, p, batch, batch.answer_rows);
  tape.backward(nn::cross_entropy(g.logits, targets));
  std::vector<nn::Tensor> analytic;
  for (const auto& v : g.parameters) analytic.push_back(tape.grad(v));
  std::vector<nn::Tensor*> ptrs;
  for (auto& [name, t] : p.named()) ptrs.push_back(t);
  auto loss = [&]() {
    nn::Tape t(false);
    const BatchGraph gg = build_graph(t, p, batch, batch.answer_rows);
    return nn::cross_entropy(gg.logits, targets).value()[0];
  };
  const auto r = nn::grad_check(loss, ptrs, analytic, 1e-5, 1e-4, 400, 11);
  o.check(r.coordinates >= 200, std::to_string(r.coordinates) + " coordinates sampled");
  o.check(r.max_relative_error <= 1e-4, "max relative error " + fmt(r.max_relative_error) + " <= 1e-4");
  const double t = sw.wall();
  o.check(t < 30.0, "runtime " + fmt(t) + " s < 30 s");
  return o;
}

// --- training ------------------------------------------------------------

struct TrainedRun {
  int k = 0;
  std::uint64_t seed = 0;
  fs::path dir;
  AccuracyMap train_acc;
  AccuracyMap test_acc;
  double cpu_seconds = 0.0;
  int steps = 0;
};

TrainedRun train_desk(int k, std::uint64_t seed, const fs::path& work) {
  TrainedRun run;
  run.k = k;
  run.seed = seed;
  run.dir = work / ("k" + std::to_string(k) + "_seed" + std::to_string(seed));
  ModelConfig mc;  // desk defaults
  mc.seed = seed;
  TrainConfig tc;  // desk defaults
  tc.seed = seed;
  const DatasetBundle bundle = compose_dataset(mc.n, mc.m, k, 100, seed);
  std::cerr << "[acceptance] training K=" << k << " seed=" << seed << '\n';
  Stopwatch sw;
  const TrainResult res = train(tc, mc, bundle, run.dir, [&](const EvalRecord& rec) {
    std::cerr << "  step " << rec.step << " cpu " << fmt(sw.cpu()) << "s";
    for (const auto& [tag, acc] : rec.test.accuracy) {
      std::cerr << ' ' << tag_name(tag) << ' ' << fmt(rec.train.accuracy.at(tag)) << '/' << fmt(acc);
    }
    std::cerr << std::endl;
  });
  run.cpu_seconds = sw.cpu();
  run.steps = res.history.steps_run;
  run.train_acc = res.history.records.back().train.accuracy;
  run.test_acc = res.history.records.back().test.accuracy;
  return run;
}

std::string acc_line(const AccuracyMap& m) {
  std::string s;
  for (const auto& [tag, a] : m) s += std::string(tag_name(tag)) + "=" + fmt(a) + " ";
  return s;
}

Outcome training_suite(const fs::path& work, std::vector<TrainedRun>& k1000_runs) {
  Outcome o;
  const std::uint64_t seeds[] = {1, 2};
  std::vector<TrainedRun> runs;
  for (std::uint64_t s : seeds) runs.push_back(train_desk(1000, s, work));
  k1000_runs = runs;
  for (const auto& r : runs) {
    o.note("K=1000 seed " + std::to_string(r.seed) + " steps " + std::to_string(r.steps));
    o.note("  train " + acc_line(r.train_acc));
    o.note("  test  " + acc_line(r.test_acc));
    bool a = true;
    for (TaskTag t : kAllTags) a = a && r.train_acc.at(t) >= 0.995;
    o.check(a, "(a) seed " + std::to_string(r.seed) + ": train accuracy >= 0.995 on all seven categories");
    const bool b = r.test_acc.at(TaskTag::Left) >= 0.99 && r.test_acc.at(TaskTag::Right) >= 0.99;
    o.check(b, "(b) seed " + std::to_string(r.seed) + ": test LEFT/RIGHT >= 0.99");
    const bool c = r.test_acc.at(TaskTag::PlusIde) >= 0.90 && r.test_acc.at(TaskTag::OplusIde) >= 0.90 &&
                   r.test_acc.at(TaskTag::Ominus) >= 0.90;
    o.check(c, "(c) seed " + std::to_string(r.seed) + ": test PLUS_IDE/OPLUS_IDE/OMINUS >= 0.90");
  }

  std::map<int, std::vector<TrainedRun>> by_k;
  for (int k : {300, 3000}) {
    for (std::uint64_t s : seeds) by_k[k].push_back(train_desk(k, s, work));
  }
  for (TaskTag t : {TaskTag::PlusComm, TaskTag::OplusComm}) {
    double lo = 0.0, hi = 0.0;
    for (const auto& r : by_k[300]) lo += r.test_acc.at(t) / 2.0;
    for (const auto& r : by_k[3000]) hi += r.test_acc.at(t) / 2.0;
    o.check(hi > lo, std::string("(d) ") + std::string(tag_name(t)) + " mean test accuracy K=3000 " + fmt(hi) +
                         " > K=300 " + fmt(lo));
  }

  double worst = 0.0;
  for (const auto& r : runs) worst = std::max(worst, r.cpu_seconds);
  for (const auto& [k, rs] : by_k) {
    for (const auto& r : rs) worst = std::max(worst, r.cpu_seconds);
  }
  o.check(worst <= 1800.0, "slowest model " + fmt(worst) + " CPU s <= 1800 s");
  return o;
}

// --- probe ---------------------------------------------------------------

Outcome probe_suite(const std::vector<TrainedRun>& k1000_runs) {
  Outcome o;
  // Closed forms and an independent two-pass recomputation.
  bool closed = probe::s_std({{1, 2}, {1, 2}}) == 0.0 &&
                std::abs(probe::s_std({{0, 4}, {0, 4.5}}) - 0.25) <= 1e-10 &&
                std::abs(probe::s_dist({1, 1, 1}, {{2, 2, 2}}) - 3.0) <= 1e-10 &&
                probe::s_dist({1, 1}, {{1, 1}, {1, 1}}) == 0.0;
  Rng rng(23);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t count = 2 + rng.below(8), dim = 1 + rng.below(64);
    std::vector<std::vector<double>> tr(count, std::vector<double>(dim));
    for (auto& v : tr) {
      for (double& x : v) x = rng.normal();
    }
    double naive = 0.0, dist = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      double mean = 0.0, var = 0.0;
      for (const auto& v : tr) mean += v[k] / static_cast<double>(count);
      for (const auto& v : tr) var += (v[k] - mean) * (v[k] - mean);
      naive += std::sqrt(var / static_cast<double>(count));
      for (std::size_t i = 1; i < count; ++i) dist += std::abs(tr[i][k] - tr[0][k]);
    }
    const std::vector<std::vector<double>> rest(tr.begin() + 1, tr.end());
    worst = std::max({worst, std::abs(probe::s_std(tr) - naive), std::abs(probe::s_dist(tr[0], rest) - dist)});
  }
  o.check(closed && worst <= 1e-10, "metric oracles match (max deviation " + fmt(worst) + ")");

  int negative = 0;
  for (const auto& r : k1000_runs) {
    const Params p = load_checkpoint(r.dir / "model.ckpt");
    probe::ProbeConfig cfg;
    cfg.seed = r.seed;
    const auto inputs = probe::make_probe_inputs(p.config.n, p.config.m, cfg);
    const auto scores = probe::score_checkpoint(p, inputs);
    double sum = 0.0;
    int terms = 0;
    for (const auto& s : scores) {
      if (s.against != OperatorKind::Left && s.against != OperatorKind::Right) continue;
      for (std::size_t l = s.s_com.size() - 3; l < s.s_com.size(); ++l) {
        sum += s.s_com[l];
        ++terms;
      }
    }
    const double mean = sum / terms;
    negative += mean < 0.0 ? 1 : 0;
    o.note("seed " + std::to_string(r.seed) + ": mean S_com over last 3 layers vs lt/rt = " + fmt(mean));
  }
  o.check(negative == 2, "negative on " + std::to_string(negative) + " of 2 seeds (majority of 2 needs both)");
  return o;
}

// --- determinism ---------------------------------------------------------

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ALGSTRUCT_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    // The resolved config records the output paths, which differ per run.
    if (e.path().filename() == "config.json" || e.path().filename() == "eval.json") continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    files[fs::relative(e.path(), root).string()] = ss.str();
  }
  return files;
}

Outcome determinism_suite(const fs::path& work) {
  Outcome o;
  std::vector<std::map<std::string, std::string>> snaps;
  for (const char* name : {"run_a", "run_b"}) {
    const fs::path root = work / "determinism" / name;
    fs::remove_all(root);
    const std::string d = (root / "data").string();
    int rc = run_cli("--deterministic gen --n 7 --m 6 --k-train 1000 --k-test 100 --seed 7 --out " + d);
    rc |= run_cli("--deterministic train --data " + d + " --seed 7 --steps 60 --eval-interval 30 --out " +
                  (root / "train").string());
    rc |= run_cli("--deterministic probe --checkpoints " + (root / "train").string() +
                  " --seed 7 --bases 8 --out " + (root / "probe").string());
    o.check(rc == 0, std::string(name) + " pipeline exit status");
    snaps.push_back(snapshot(root));
  }
  const auto& a = snaps[0];
  const auto& b = snaps[1];
  std::size_t differing = 0;
  for (const auto& [name, bytes] : a) {
    auto it = b.find(name);
    if (it == b.end() || it->second != bytes) {
      ++differing;
      o.note("differs: " + name);
    }
  }
  const bool has_all = a.count("data/train.txt") && a.count("data/manifest.json") &&
                       a.count("train/model.ckpt") && a.count("train/metrics.csv") &&
                       a.count("probe/s_com_lt.csv");
  o.check(has_all, std::to_string(a.size()) + " artifacts compared (dataset, metrics, checkpoint, probe)");
  o.check(a.size() == b.size() && differing == 0, std::to_string(differing) + " files differ");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "algstruct_acceptance";
  std::set<std::string> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--work-dir" && i + 1 < argc) {
      work = argv[++i];
    } else if (arg == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string item; std::getline(ss, item, ',');) only.insert(item);
    } else {
      std::cerr << "usage: acceptance [--work-dir DIR] [--only NAME,...]\n";
      return 2;
    }
  }
  fs::create_directories(work);
  auto wanted = [&](const std::string& name) { return only.empty() || only.count(name); };

  bool all = true;
  auto report = [&](const std::string& name, const Outcome& o) {
    std::cout << (o.passed ? "PASS " : "FAIL ") << name << '\n';
    for (const auto& d : o.details) std::cout << "    " << d << '\n';
    std::cout.flush();
    all = all && o.passed;
  };
  auto guarded = [&](const std::string& name, const std::function<Outcome()>& fn) {
    if (!wanted(name)) return;
    try {
      report(name, fn());
    } catch (const std::exception& e) {
      Outcome o;
      o.check(false, std::string("exception: ") + e.what());
      report(name, o);
    }
  };

  guarded("algebra", algebra_suite);
  guarded("dataset", dataset_suite);
  guarded("theorem", theorem_suite);
  guarded("gradcheck", gradcheck_suite);
  std::vector<TrainedRun> k1000;
  guarded("training", [&] { return training_suite(work, k1000); });
  if (wanted("probe")) {
    if (k1000.empty()) {
      // Reuse checkpoints from an earlier training run in the same work dir.
      for (std::uint64_t s : {1, 2}) {
        TrainedRun r;
        r.seed = s;
        r.dir = work / ("k1000_seed" + std::to_string(s));
        k1000.push_back(r);
      }
    }
    guarded("probe", [&] { return probe_suite(k1000); });
  }
  guarded("determinism", [&] { return determinism_suite(work); });
  return all ? 0 : 1;
}
