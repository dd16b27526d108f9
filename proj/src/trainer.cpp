#include "algstruct/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "algstruct/error.hpp"
#include "algstruct/rng.hpp"
#include "algstruct/tape.hpp"

namespace algstruct {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (max_steps < 0) throw ConfigError("max steps must be >= 0");
  if (eval_interval < 1) throw ConfigError("eval interval must be >= 1");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("optimizer betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("optimizer eps must be > 0");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be >= 0");
  if (warmup_steps < 0) throw ConfigError("warmup steps must be >= 0");
  if (final_lr_ratio < 0.0 || final_lr_ratio > 1.0) {
    throw ConfigError("final lr ratio must lie in [0, 1]");
  }
  if (grad_clip < 0.0) throw ConfigError("gradient clip must be >= 0");
  if (early_stop_patience < 1) throw ConfigError("early-stop patience must be >= 1");
  if (eval_batch < 1) throw ConfigError("eval batch must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr", c.lr},
                     {"batch_size", c.batch_size},
                     {"max_steps", c.max_steps},
                     {"eval_interval", c.eval_interval},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"eps", c.eps},
                     {"weight_decay", c.weight_decay},
                     {"warmup_steps", c.warmup_steps},
                     {"final_lr_ratio", c.final_lr_ratio},
                     {"grad_clip", c.grad_clip},
                     {"seed", c.seed},
                     {"early_stop_accuracy", c.early_stop_accuracy},
                     {"early_stop_patience", c.early_stop_patience},
                     {"full_lm_loss", c.full_lm_loss},
                     {"eval_batch", c.eval_batch}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.eval_interval = j.value("eval_interval", c.eval_interval);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.final_lr_ratio = j.value("final_lr_ratio", c.final_lr_ratio);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.seed = j.value("seed", c.seed);
  c.early_stop_accuracy = j.value("early_stop_accuracy", c.early_stop_accuracy);
  c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
  c.full_lm_loss = j.value("full_lm_loss", c.full_lm_loss);
  c.eval_batch = j.value("eval_batch", c.eval_batch);
}

namespace {

void check_compatible(const ModelConfig& mc, const Manifest& manifest) {
  if (mc.n != manifest.n || mc.m != manifest.m) {
    throw ConfigError("model is built for n=" + std::to_string(mc.n) + ", M=" + std::to_string(mc.m) +
                      " but the dataset has n=" + std::to_string(manifest.n) +
                      ", M=" + std::to_string(manifest.m));
  }
}

struct Prepared {
  std::vector<std::vector<std::size_t>> prompts;
  std::vector<std::size_t> labels;
};

Prepared prepare(const Vocabulary& vocab, const std::vector<TaggedEquation>& split) {
  Prepared p;
  p.prompts.reserve(split.size());
  p.labels.reserve(split.size());
  for (const auto& te : split) {
    p.prompts.push_back(encode_prompt(vocab, te.eq));
    p.labels.push_back(vocab.label(te.eq.label));
  }
  return p;
}

class AdamW {
 public:
  AdamW(const TrainConfig& c, Params& params) : c_(c) {
    for (auto& [name, t] : params.named()) {
      m_.emplace_back(t->shape());
      v_.emplace_back(t->shape());
      // Embeddings are 2-D too but, as in GPT-2, only the block and head
      // matrices are decayed.
      decay_.push_back(t->ndim() == 2 && name != "wpe");
    }
  }

  void step(Params& params, const std::vector<const nn::Tensor*>& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(c_.beta1, t_);
    const double bc2 = 1.0 - std::pow(c_.beta2, t_);
    double gscale = 1.0;
    if (c_.grad_clip > 0.0) {
      double sq = 0.0;
      for (const nn::Tensor* g : grads) {
        for (double x : g->data()) sq += x * x;
      }
      const double norm = std::sqrt(sq);
      if (norm > c_.grad_clip) gscale = c_.grad_clip / norm;
    }
    auto named = params.named();
    for (std::size_t i = 0; i < named.size(); ++i) {
      auto w = named[i].second->data();
      auto g = grads[i]->data();
      auto m = m_[i].data();
      auto v = v_[i].data();
      const double wd = decay_[i] ? c_.weight_decay : 0.0;
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = g[j] * gscale;
        m[j] = c_.beta1 * m[j] + (1.0 - c_.beta1) * gj;
        v[j] = c_.beta2 * v[j] + (1.0 - c_.beta2) * gj * gj;
        const double mh = m[j] / bc1;
        const double vh = v[j] / bc2;
        w[j] -= lr * (mh / (std::sqrt(vh) + c_.eps) + wd * w[j]);
      }
    }
  }

 private:
  const TrainConfig& c_;
  std::vector<nn::Tensor> m_, v_;
  std::vector<bool> decay_;
  int t_ = 0;
};

}  // namespace

SplitEval evaluate_split(const Params& params, const std::vector<TaggedEquation>& split,
                         int eval_batch) {
  const Vocabulary vocab(params.config.n, params.config.m);
  const Prepared data = prepare(vocab, split);
  std::map<TaskTag, std::pair<std::size_t, std::size_t>> hits;  // correct, total
  double loss_sum = 0.0;
  const std::size_t V = vocab.size();
  const std::size_t chunk = static_cast<std::size_t>(std::max(1, eval_batch));
  for (std::size_t start = 0; start < split.size(); start += chunk) {
    const std::size_t end = std::min(split.size(), start + chunk);
    std::vector<std::vector<std::size_t>> seqs(data.prompts.begin() + static_cast<std::ptrdiff_t>(start),
                                               data.prompts.begin() + static_cast<std::ptrdiff_t>(end));
    const BatchInput batch =
        make_batch(vocab, seqs, static_cast<std::size_t>(params.config.context_len));
    nn::Tape tape(false);
    const BatchGraph g = build_graph(tape, params, batch, batch.answer_rows);
    const nn::Tensor& logits = g.logits.value();
    for (std::size_t r = 0; r < end - start; ++r) {
      const double* row = logits.ptr() + r * V;
      const std::size_t arg = static_cast<std::size_t>(std::max_element(row, row + V) - row);
      const double mx = row[arg];
      double z = 0.0;
      for (std::size_t c = 0; c < V; ++c) z += std::exp(row[c] - mx);
      const std::size_t label = data.labels[start + r];
      loss_sum += std::log(z) + mx - row[label];
      auto& h = hits[split[start + r].tag];
      h.first += arg == label ? 1 : 0;
      h.second += 1;
    }
  }
  SplitEval out;
  for (const auto& [tag, h] : hits) out.accuracy[tag] = static_cast<double>(h.first) / static_cast<double>(h.second);
  out.loss = split.empty() ? 0.0 : loss_sum / static_cast<double>(split.size());
  return out;
}

AccuracyMap evaluate(const Params& params, const std::vector<TaggedEquation>& split) {
  return evaluate_split(params, split).accuracy;
}

TrainResult train(const TrainConfig& config, const ModelConfig& model_config,
                  const DatasetBundle& bundle, const std::optional<std::filesystem::path>& out_dir,
                  const EvalCallback& on_eval) {
  config.validate();
  model_config.validate();
  check_compatible(model_config, bundle.manifest);
  if (bundle.train.empty()) throw ConfigError("training split is empty");

#ifdef __GLIBC__
  // Every step allocates and frees the same few-MB activation buffers; keep
  // them on the heap instead of paying fresh page faults through mmap.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
  const Vocabulary vocab(model_config.n, model_config.m);
  const Prepared data = prepare(vocab, bundle.train);
  TrainResult result{init_params(model_config, model_config.seed), {}};
  Params& params = result.params;
  AdamW opt(config, params);
  Rng shuffle_rng(config.seed, "shuffle");

  std::vector<std::size_t> order(bundle.train.size());
  std::size_t cursor = order.size();

  auto run_eval = [&](int step) {
    EvalRecord rec;
    rec.step = step;
    rec.train = evaluate_split(params, bundle.train, config.eval_batch);
    rec.test = evaluate_split(params, bundle.test, config.eval_batch);
    result.history.records.push_back(rec);
    if (on_eval) on_eval(rec);
    return rec;
  };

  auto converged = [&](const EvalRecord& rec) {
    return std::all_of(rec.train.accuracy.begin(), rec.train.accuracy.end(),
                       [&](const auto& kv) { return kv.second >= config.early_stop_accuracy; });
  };

  int streak = converged(run_eval(0)) ? 1 : 0;
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  for (int step = 1; step <= config.max_steps; ++step) {
    std::vector<std::vector<std::size_t>> seqs;
    std::vector<std::size_t> targets;
    std::vector<std::size_t> picked;
    for (std::size_t b = 0; b < bs; ++b) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle_rng.shuffle(order);
        cursor = 0;
      }
      picked.push_back(order[cursor++]);
    }
    for (std::size_t idx : picked) {
      seqs.push_back(data.prompts[idx]);
      if (config.full_lm_loss) seqs.back().push_back(data.labels[idx]);
    }
    const BatchInput batch =
        make_batch(vocab, seqs, static_cast<std::size_t>(model_config.context_len));
    std::vector<std::size_t> rows;
    if (config.full_lm_loss) {
      for (std::size_t b = 0; b < bs; ++b) {
        for (std::size_t t = 0; t + 1 < seqs[b].size(); ++t) {
          rows.push_back(b * batch.seq + t);
          targets.push_back(seqs[b][t + 1]);
        }
      }
    } else {
      rows = batch.answer_rows;
      for (std::size_t idx : picked) targets.push_back(data.labels[idx]);
    }

    nn::Tape tape(true);
    const BatchGraph g = build_graph(tape, params, batch, rows);
    const nn::Var loss = nn::cross_entropy(g.logits, targets);
    const double loss_value = loss.value()[0];
    if (!std::isfinite(loss_value)) {
      throw DivergenceError("non-finite loss " + std::to_string(loss_value) + " at step " +
                            std::to_string(step));
    }
    tape.backward(loss);
    std::vector<const nn::Tensor*> grads;
    for (const nn::Var& p : g.parameters) grads.push_back(&tape.grad(p));
    double lr = config.lr;
    if (config.warmup_steps > 0 && step <= config.warmup_steps) {
      lr *= static_cast<double>(step) / static_cast<double>(config.warmup_steps);
    } else if (config.final_lr_ratio < 1.0 && config.max_steps > config.warmup_steps) {
      const double t = static_cast<double>(step - config.warmup_steps) /
                       static_cast<double>(config.max_steps - config.warmup_steps);
      lr *= config.final_lr_ratio + (1.0 - config.final_lr_ratio) * 0.5 * (1.0 + std::cos(M_PI * t));
    }
    opt.step(params, grads, lr);
    if (!params.all_finite()) {
      throw DivergenceError("non-finite parameters after step " + std::to_string(step) +
                            " (loss " + std::to_string(loss_value) + ")");
    }
    result.history.steps_run = step;

    if (step % config.eval_interval == 0 || step == config.max_steps) {
      const EvalRecord rec = run_eval(step);
      streak = converged(rec) ? streak + 1 : 0;
      if (streak >= config.early_stop_patience) {
        result.history.early_stopped = true;
        break;
      }
    }
  }

  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    nlohmann::json meta{{"k_train", bundle.manifest.k_train},
                        {"k_test", bundle.manifest.k_test},
                        {"data_seed", bundle.manifest.seed},
                        {"oplus_digest", bundle.manifest.oplus_digest},
                        {"steps", result.history.steps_run},
                        {"early_stopped", result.history.early_stopped},
                        {"train_config", config}};
    save_checkpoint(params, meta, *out_dir / "model.ckpt");
    write_metrics_csv(result.history, *out_dir / "metrics.csv");
    write_loss_csv(result.history, *out_dir / "loss.csv");
  }
  return result;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw IoError("cannot write " + file.string());
  out.precision(17);
  return out;
}

}  // namespace

void write_metrics_csv(const MetricsHistory& history, const std::filesystem::path& file) {
  auto out = open_csv(file);
  out << "step,tag,split,accuracy\n";
  for (const auto& rec : history.records) {
    for (const auto& [tag, acc] : rec.train.accuracy) {
      out << rec.step << ',' << tag_name(tag) << ",train," << acc << '\n';
    }
    for (const auto& [tag, acc] : rec.test.accuracy) {
      out << rec.step << ',' << tag_name(tag) << ",test," << acc << '\n';
    }
  }
}

void write_loss_csv(const MetricsHistory& history, const std::filesystem::path& file) {
  auto out = open_csv(file);
  out << "step,split,loss\n";
  for (const auto& rec : history.records) {
    out << rec.step << ",train," << rec.train.loss << '\n';
    out << rec.step << ",test," << rec.test.loss << '\n';
  }
}

std::vector<SweepRow> k_sweep(const SweepSpec& spec, const TrainConfig& config,
                              const ModelConfig& model_config,
                              const std::optional<std::filesystem::path>& out_dir,
                              const EvalCallback& on_eval) {
  if (spec.k_values.empty()) throw ConfigError("sweep needs at least one K");
  if (!std::is_sorted(spec.k_values.begin(), spec.k_values.end())) {
    throw ConfigError("sweep K values must be ascending");
  }
  std::vector<SweepRow> rows;
  for (int k : spec.k_values) {
    const DatasetBundle bundle =
        compose_dataset(model_config.n, model_config.m, k, spec.k_test, spec.data_seed, spec.options);
    std::optional<std::filesystem::path> dir;
    if (out_dir) dir = *out_dir / ("k" + std::to_string(k));
    const TrainResult res = train(config, model_config, bundle, dir, on_eval);
    const AccuracyMap acc = res.history.records.back().test.accuracy;
    for (TaskTag tag : kAllTags) {
      auto it = acc.find(tag);
      rows.push_back({k, tag, it == acc.end() ? 0.0 : it->second});
    }
  }
  if (out_dir) write_sweep_csv(rows, *out_dir / "k_sweep.csv");
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& file) {
  auto out = open_csv(file);
  out << "k,tag,accuracy\n";
  for (const auto& r : rows) out << r.k << ',' << tag_name(r.tag) << ',' << r.accuracy << '\n';
}

}  // namespace algstruct
