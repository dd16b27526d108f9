// algstruct: generate -> train / sweep -> eval -> probe -> verify-theorems.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "algstruct/datagen.hpp"
#include "algstruct/error.hpp"
#include "algstruct/kernels.hpp"
#include "algstruct/model.hpp"
#include "algstruct/probe.hpp"
#include "algstruct/run_config.hpp"
#include "algstruct/theorem_lab.hpp"
#include "algstruct/trainer.hpp"

namespace fs = std::filesystem;
using namespace algstruct;

namespace {

// Every flag that mirrors a RunConfig field. Unset flags leave the file (or
// default) value alone.
struct Overrides {
  std::optional<std::string> config_file;
  std::optional<int> n, m, k_train, k_test, perms_per_family;
  std::optional<std::uint64_t> seed;
  std::optional<int> layers, heads, d_model, d_ff, context;
  std::optional<double> lr, weight_decay, grad_clip, final_lr_ratio;
  std::optional<int> batch, steps, eval_interval, warmup, patience;
  bool full_lm = false;
  std::optional<int> threads;
  std::optional<int> bases, perms;
};

void add_data_flags(CLI::App* app, Overrides& o) {
  app->add_option("--n", o.n, "Group order n of Z_n");
  app->add_option("--m", o.m, "Operand count M");
  app->add_option("--k-train", o.k_train, "Training scale K");
  app->add_option("--k-test", o.k_test, "Test scale K");
  app->add_option("--seed", o.seed, "Root seed");
  app->add_option("--perms-per-family", o.perms_per_family, "Orderings per commutativity family");
}

void add_model_flags(CLI::App* app, Overrides& o) {
  app->add_option("--layers", o.layers);
  app->add_option("--heads", o.heads);
  app->add_option("--d-model", o.d_model);
  app->add_option("--d-ff", o.d_ff);
  app->add_option("--context", o.context, "Context length in tokens");
  app->add_option("--lr", o.lr, "Learning rate");
  app->add_option("--weight-decay", o.weight_decay);
  app->add_option("--grad-clip", o.grad_clip, "Global gradient-norm clip (0 disables)");
  app->add_option("--final-lr-ratio", o.final_lr_ratio, "Cosine decay target as a fraction of lr (1 disables)");
  app->add_option("--batch", o.batch, "Batch size");
  app->add_option("--steps", o.steps, "Maximum optimizer steps");
  app->add_option("--eval-interval", o.eval_interval);
  app->add_option("--warmup", o.warmup, "Linear warmup steps");
  app->add_option("--patience", o.patience, "Early-stop patience in evaluations");
  app->add_flag("--full-lm", o.full_lm, "Next-token loss over the whole sequence");
}

template <typename T>
void apply(const std::optional<T>& v, T& field) {
  if (v) field = *v;
}

RunConfig resolve_config(const Overrides& o, bool deterministic) {
  RunConfig c = o.config_file ? RunConfig::load(*o.config_file) : RunConfig{};
  apply(o.n, c.n);
  apply(o.m, c.m);
  apply(o.k_train, c.k_train);
  apply(o.k_test, c.k_test);
  apply(o.seed, c.seed);
  apply(o.perms_per_family, c.generation.perms_per_family);
  apply(o.layers, c.model.layers);
  apply(o.heads, c.model.heads);
  apply(o.d_model, c.model.d_model);
  apply(o.d_ff, c.model.d_ff);
  apply(o.context, c.model.context_len);
  apply(o.lr, c.train.lr);
  apply(o.weight_decay, c.train.weight_decay);
  apply(o.grad_clip, c.train.grad_clip);
  apply(o.final_lr_ratio, c.train.final_lr_ratio);
  apply(o.batch, c.train.batch_size);
  apply(o.steps, c.train.max_steps);
  apply(o.eval_interval, c.train.eval_interval);
  apply(o.warmup, c.train.warmup_steps);
  apply(o.patience, c.train.early_stop_patience);
  if (o.full_lm) c.train.full_lm_loss = true;
  apply(o.threads, c.threads);
  apply(o.bases, c.probe.bases);
  apply(o.perms, c.probe.permutations);
  if (deterministic) c.deterministic = true;
  if (const char* env = std::getenv("ALGSTRUCT_THREADS"); env && !o.threads) c.threads = std::atoi(env);
  c.resolve();
  if (c.threads > 0) kernels::set_num_threads(c.threads);
  return c;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw ConfigError("'" + item + "' is not an integer");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("empty integer list '" + text + "'");
  return out;
}

void print_eval(const EvalRecord& rec) {
  std::cerr << "step " << rec.step << "  loss " << rec.train.loss << " / " << rec.test.loss;
  for (const auto& [tag, acc] : rec.test.accuracy) {
    std::cerr << "  " << tag_name(tag) << " " << rec.train.accuracy.at(tag) << "/" << acc;
  }
  std::cerr << '\n';
}

void print_accuracy(std::ostream& out, const std::string& split, const AccuracyMap& acc) {
  for (const auto& [tag, a] : acc) out << tag_name(tag) << ',' << split << ',' << a << '\n';
}

int run_gen(const RunConfig& c, const fs::path& out) {
  const DatasetBundle bundle = compose_dataset(c.n, c.m, c.k_train, c.k_test, c.seed, c.generation);
  serialize(bundle, out);
  c.write(out / "config.json");
  std::cout << "wrote " << bundle.train.size() << " train / " << bundle.test.size() << " test equations to "
            << out.string() << '\n';
  return 0;
}

int run_audit(const fs::path& data) {
  const DatasetBundle bundle = parse(data);
  const AuditReport report = audit_no_leakage(bundle);
  const std::size_t mismatched = label_mismatches(bundle);
  for (const auto& [tag, count] : category_counts(bundle.train)) {
    std::cout << "train " << tag_name(tag) << ' ' << count << '\n';
  }
  for (const auto& [tag, count] : category_counts(bundle.test)) {
    std::cout << "test " << tag_name(tag) << ' ' << count << '\n';
  }
  for (const auto& v : report.violations) std::cout << "violation: " << v << '\n';
  std::cout << "label mismatches: " << mismatched << '\n';
  if (!report.ok() || mismatched != 0) {
    throw Error("audit", std::to_string(report.violations.size()) + " leakage violations, " +
                             std::to_string(mismatched) + " label mismatches");
  }
  std::cout << "audit ok\n";
  return 0;
}

int run_train(RunConfig c, const fs::path& data, const fs::path& out) {
  const DatasetBundle bundle = parse(data);
  c.n = bundle.manifest.n;
  c.m = bundle.manifest.m;
  c.k_train = bundle.manifest.k_train;
  c.k_test = bundle.manifest.k_test;
  c.resolve();
  fs::create_directories(out);
  c.write(out / "config.json");
  const TrainResult res = train(c.train, c.model, bundle, out, print_eval);
  std::cout << "trained " << res.history.steps_run << " steps"
            << (res.history.early_stopped ? " (early stop)" : "") << "; checkpoint "
            << (out / "model.ckpt").string() << '\n';
  print_accuracy(std::cout, "train", res.history.records.back().train.accuracy);
  print_accuracy(std::cout, "test", res.history.records.back().test.accuracy);
  return 0;
}

int run_sweep(RunConfig c, const fs::path& out, bool full) {
  if (full) {
    // GPT-2 small shape and the large-K grid; far beyond a desk budget.
    c.model.layers = 12;
    c.model.heads = 12;
    c.model.d_model = 768;
    c.model.d_ff = 3072;
    c.k_values = {1000, 3000, 10000, 20000, 30000};
    c.k_test = 1000;
    c.resolve();
  }
  fs::create_directories(out);
  c.write(out / "config.json");
  SweepSpec spec;
  spec.k_values = c.k_values;
  spec.k_test = c.k_test;
  spec.data_seed = c.seed;
  spec.options = c.generation;
  const auto rows = k_sweep(spec, c.train, c.model, out, print_eval);
  std::cout << "k,tag,accuracy\n";
  for (const auto& r : rows) std::cout << r.k << ',' << tag_name(r.tag) << ',' << r.accuracy << '\n';
  return 0;
}

int run_eval(const fs::path& checkpoint, const fs::path& data, const std::optional<std::string>& out) {
  nlohmann::json meta;
  const Params params = load_checkpoint(checkpoint, &meta);
  const DatasetBundle bundle = parse(data);
  if (params.config.n != bundle.manifest.n || params.config.m != bundle.manifest.m) {
    throw ConfigError("checkpoint is for n=" + std::to_string(params.config.n) + ", M=" +
                      std::to_string(params.config.m) + " but the data has n=" +
                      std::to_string(bundle.manifest.n) + ", M=" + std::to_string(bundle.manifest.m));
  }
  const SplitEval tr = evaluate_split(params, bundle.train);
  const SplitEval te = evaluate_split(params, bundle.test);
  std::ostringstream csv;
  csv.precision(17);
  csv << "tag,split,accuracy\n";
  print_accuracy(csv, "train", tr.accuracy);
  print_accuracy(csv, "test", te.accuracy);
  std::cout << csv.str();
  if (out) {
    fs::create_directories(*out);
    std::ofstream f(fs::path(*out) / "eval.csv");
    f << csv.str();
    nlohmann::json info{{"checkpoint", checkpoint.string()}, {"data", data.string()}, {"meta", meta},
                        {"model", params.config}, {"train_loss", tr.loss}, {"test_loss", te.loss}};
    std::ofstream(fs::path(*out) / "eval.json") << info.dump(2) << '\n';
  }
  return 0;
}

int run_probe(const RunConfig& c, const fs::path& checkpoints, const fs::path& out, bool svg) {
  const auto loaded = probe::load_checkpoints(checkpoints);
  const auto matrices = probe::build_heatmaps(loaded, c.probe);
  fs::create_directories(out);
  for (const auto& m : matrices) {
    probe::write_heatmap_csv(m, out / (m.name() + ".csv"));
    if (svg) probe::write_heatmap_svg(m, out / (m.name() + ".svg"));
  }
  nlohmann::json meta{{"probe", c.probe},
                      {"std", "population"},
                      {"position", "="},
                      {"aggregation", "mean over probe bases"},
                      {"k_values", matrices.front().k_values},
                      {"layers", loaded.front().second.config.layers + 1}};
  std::ofstream(out / "probe_meta.json") << meta.dump(2) << '\n';
  c.write(out / "config.json");
  for (const auto& m : matrices) {
    std::cout << m.name() << '\n';
    for (std::size_t r = 0; r < m.values.size(); ++r) {
      std::cout << "  K=" << m.k_values[r];
      for (double v : m.values[r]) std::cout << ' ' << v;
      std::cout << '\n';
    }
  }
  return 0;
}

int run_verify(const std::string& ns, const std::string& ms, int trials, std::uint64_t seed,
               int context_factor, const std::optional<std::string>& out) {
  theorem::VerificationSpec spec;
  spec.n_values = parse_int_list(ns);
  spec.m_values = parse_int_list(ms);
  spec.trials = trials;
  spec.seed = seed;
  spec.context_factor = context_factor;
  const auto report = theorem::verify_theorems(spec);
  const std::string text = report.render();
  std::cout << text;
  if (out) {
    fs::create_directories(*out);
    std::ofstream(fs::path(*out) / "theorems.txt") << text;
  }
  if (!report.passed()) throw Error("theorem", "constructive invariance checks failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Algebraic-structure learning experiments on Z_n"};
  app.require_subcommand(1);
  bool deterministic = false;
  app.add_flag("--deterministic", deterministic,
               "Record deterministic mode; kernels already reduce in a fixed order");

  Overrides o;
  std::string out_dir;
  std::string data_dir;

  auto* gen = app.add_subcommand("gen", "Generate a leakage-controlled dataset");
  gen->add_option("--config", o.config_file, "JSON run config");
  add_data_flags(gen, o);
  gen->add_option("--out", out_dir, "Output directory")->required();

  auto* audit = app.add_subcommand("audit", "Check a dataset for leakage and label errors");
  audit->add_option("--data", data_dir, "Dataset directory")->required();

  auto* tr = app.add_subcommand("train", "Train one model on a dataset");
  tr->add_option("--data", data_dir, "Dataset directory")->required();
  tr->add_option("--config", o.config_file, "JSON run config");
  tr->add_option("--seed", o.seed, "Root seed");
  tr->add_option("--threads", o.threads);
  add_model_flags(tr, o);
  tr->add_option("--out", out_dir, "Output directory")->required();

  std::string k_list;
  bool full = false;
  auto* sweep = app.add_subcommand("sweep", "Train one fresh model per K");
  sweep->add_option("--k", k_list, "Comma-separated K values, ascending");
  sweep->add_option("--config", o.config_file, "JSON run config");
  add_data_flags(sweep, o);
  add_model_flags(sweep, o);
  sweep->add_option("--threads", o.threads);
  sweep->add_flag("--full", full, "GPT-2-small shape and large K grid (not a desk run)");
  sweep->add_option("--out", out_dir, "Output directory")->required();

  std::string checkpoint;
  std::optional<std::string> eval_out;
  auto* ev = app.add_subcommand("eval", "Per-category accuracy of a checkpoint");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ev->add_option("--data", data_dir, "Dataset directory")->required();
  ev->add_option("--out", eval_out, "Directory for eval.csv");

  std::string ckpt_dir;
  bool svg = false;
  auto* pr = app.add_subcommand("probe", "Hidden-state S_com / S_ide heatmaps");
  pr->add_option("--checkpoints", ckpt_dir, "Directory searched for *.ckpt")->required();
  pr->add_option("--config", o.config_file, "JSON run config");
  pr->add_option("--seed", o.seed, "Root seed");
  pr->add_option("--bases", o.bases, "Probe bases per operator");
  pr->add_option("--perms", o.perms, "Orderings per permutation base");
  pr->add_flag("--svg", svg, "Also render SVG heatmaps");
  pr->add_option("--out", out_dir, "Output directory")->required();

  std::string ns = "7", ms = "6";
  int trials = 1000;
  std::uint64_t th_seed = 1;
  int context_factor = 16;
  std::optional<std::string> th_out;
  auto* vt = app.add_subcommand("verify-theorems", "Check the constructive invariance proofs numerically");
  vt->add_option("--n", ns, "Group order(s), comma-separated");
  vt->add_option("--m", ms, "Operand count(s), comma-separated");
  vt->add_option("--trials", trials, "Random trials per (n, M)");
  vt->add_option("--seed", th_seed);
  vt->add_option("--context-factor", context_factor, "Context length L as a multiple of M");
  vt->add_option("--out", th_out, "Directory for the report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cout << "error usage: " << e.what() << std::endl;
    return 2;
  }

  try {
    if (*gen) return run_gen(resolve_config(o, deterministic), out_dir);
    if (*audit) return run_audit(data_dir);
    if (*tr) return run_train(resolve_config(o, deterministic), data_dir, out_dir);
    if (*sweep) {
      RunConfig c = resolve_config(o, deterministic);
      if (!k_list.empty()) c.k_values = parse_int_list(k_list);
      return run_sweep(c, out_dir, full);
    }
    if (*ev) return run_eval(checkpoint, data_dir, eval_out);
    if (*pr) return run_probe(resolve_config(o, deterministic), ckpt_dir, out_dir, svg);
    if (*vt) return run_verify(ns, ms, trials, th_seed, context_factor, th_out);
  } catch (const Error& e) {
    std::cout << "error " << e.kind() << ": " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cout << "error internal: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
