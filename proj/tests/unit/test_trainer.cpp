#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "algstruct/error.hpp"
#include "algstruct/trainer.hpp"

using namespace algstruct;
namespace fs = std::filesystem;

namespace {

ModelConfig small_model() {
  ModelConfig c;
  c.layers = 2;
  c.heads = 2;
  c.d_model = 32;
  c.d_ff = 64;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("algstruct_trainer_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(TrainConfig, ValidationAndJson) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.lr = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.final_lr_ratio = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.warmup_steps = 40;
  c.weight_decay = 0.1;
  c.final_lr_ratio = 0.25;
  nlohmann::json j = c;
  EXPECT_EQ(j.get<TrainConfig>(), c);
}

TEST(Train, ZeroStepsEvaluatesInitOnly) {
  TrainConfig c;
  c.max_steps = 0;
  const auto bundle = compose_dataset(7, 6, 5, 5, 1);
  const auto r = train(c, small_model(), bundle);
  ASSERT_EQ(r.history.records.size(), 1u);
  EXPECT_EQ(r.history.records[0].step, 0);
  EXPECT_EQ(r.history.steps_run, 0);
  EXPECT_EQ(r.params, init_params(small_model(), small_model().seed));
  EXPECT_EQ(r.history.records[0].train.accuracy.size(), 7u);
}

TEST(Train, MismatchedBundleIsConfigError) {
  TrainConfig c;
  c.max_steps = 1;
  ModelConfig m = small_model();
  m.n = 11;
  m.context_len = 16;
  EXPECT_THROW(train(c, m, compose_dataset(7, 6, 5, 5, 1)), ConfigError);
}

TEST(Train, MemorizesTinyCorpus) {
  TrainConfig c;
  c.lr = 3e-3;
  c.batch_size = 50;
  c.max_steps = 400;
  c.eval_interval = 50;
  c.early_stop_patience = 1;
  const auto bundle = compose_dataset(7, 6, 5, 5, 3);
  const auto r = train(c, small_model(), bundle);
  const auto& last = r.history.records.back();
  for (const auto& [tag, acc] : last.train.accuracy) EXPECT_EQ(acc, 1.0) << tag_name(tag);
  EXPECT_LT(last.train.loss, r.history.records.front().train.loss);
  EXPECT_TRUE(r.history.early_stopped);
  EXPECT_LT(r.history.steps_run, 400);
}

TEST(Train, EvaluateAgreesWithBatchedEval) {
  TrainConfig c;
  c.max_steps = 30;
  c.lr = 1e-3;
  const auto bundle = compose_dataset(7, 6, 10, 10, 4);
  const auto r = train(c, small_model(), bundle);
  const auto a = evaluate(r.params, bundle.test);
  const auto b = evaluate_split(r.params, bundle.test, 7).accuracy;
  EXPECT_EQ(a, b);
  EXPECT_EQ(r.history.records.back().test.accuracy, b);
}

TEST(Train, DeterministicArtifacts) {
  TrainConfig c;
  c.max_steps = 20;
  c.eval_interval = 10;
  c.lr = 1e-3;
  const auto bundle = compose_dataset(7, 6, 5, 5, 2);
  const auto d1 = scratch("det1");
  const auto d2 = scratch("det2");
  const auto r1 = train(c, small_model(), bundle, d1);
  const auto r2 = train(c, small_model(), bundle, d2);
  EXPECT_EQ(r1.params, r2.params);
  for (const char* f : {"model.ckpt", "metrics.csv", "loss.csv"}) {
    EXPECT_EQ(slurp(d1 / f), slurp(d2 / f)) << f;
  }
  c.seed = 99;
  const auto r3 = train(c, small_model(), bundle);
  EXPECT_NE(r1.params, r3.params);
}

TEST(Train, CsvLayout) {
  TrainConfig c;
  c.max_steps = 7;
  c.eval_interval = 5;
  const auto dir = scratch("csv");
  const auto r = train(c, small_model(), compose_dataset(7, 6, 3, 3, 1), dir);
  // Evaluations at 0, 5 and the final step.
  ASSERT_EQ(r.history.records.size(), 3u);
  EXPECT_EQ(r.history.records[2].step, 7);
  std::ifstream in(dir / "metrics.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "step,tag,split,accuracy");
  int lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  EXPECT_EQ(lines, 3 * 7 * 2);
  std::ifstream loss(dir / "loss.csv");
  std::getline(loss, header);
  EXPECT_EQ(header, "step,split,loss");

  nlohmann::json meta;
  load_checkpoint(dir / "model.ckpt", &meta);
  EXPECT_EQ(meta.at("k_train"), 3);
  EXPECT_EQ(meta.at("steps"), 7);
}

TEST(Train, HugeLearningRateDiverges) {
  TrainConfig c;
  c.lr = 1e300;
  c.max_steps = 10;
  EXPECT_THROW(train(c, small_model(), compose_dataset(7, 6, 3, 3, 1)), DivergenceError);
}

TEST(Sweep, OneModelPerK) {
  TrainConfig c;
  c.max_steps = 2;
  SweepSpec spec;
  spec.k_values = {2, 4};
  spec.k_test = 2;
  const auto dir = scratch("sweep");
  const auto rows = k_sweep(spec, c, small_model(), dir);
  EXPECT_EQ(rows.size(), 14u);
  EXPECT_EQ(rows[7].k, 4);
  EXPECT_TRUE(fs::exists(dir / "k2" / "model.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "k4" / "metrics.csv"));
  std::ifstream in(dir / "k_sweep.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "k,tag,accuracy");
  spec.k_values = {4, 2};
  EXPECT_THROW(k_sweep(spec, c, small_model()), ConfigError);
}
