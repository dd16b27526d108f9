#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "algstruct/datagen.hpp"
#include "algstruct/error.hpp"
#include "algstruct/model.hpp"
#include "algstruct/rng.hpp"

using namespace algstruct;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.layers = 2;
  c.heads = 2;
  c.d_model = 16;
  c.d_ff = 32;
  return c;
}

std::vector<std::size_t> ids_of(const Vocabulary& v, const std::string& prompt) {
  return encode(v, prompt);
}

}  // namespace

TEST(Vocabulary, LayoutAndStability) {
  const Vocabulary v(7, 6);
  // 7 z + 7 r + 7 c + 6 operator/equals words + PAD.
  EXPECT_EQ(v.size(), 28u);
  EXPECT_EQ(v.element(3), 3u);
  EXPECT_EQ(v.symbol(v.result(2)), "r2");
  EXPECT_EQ(v.symbol(v.count(6)), "c6");
  EXPECT_EQ(v.symbol(v.op(OperatorKind::Ominus)), "om");
  EXPECT_EQ(v.symbol(v.equals()), "=");
  EXPECT_EQ(v.pad(), v.size() - 1);
  std::set<std::string> seen;
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_TRUE(seen.insert(v.symbol(i)).second);
  const Vocabulary w(7, 6);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(v.symbol(i), w.symbol(i));
  EXPECT_FALSE(v.find("z7").has_value());
  EXPECT_EQ(v.label(Label{Label::Kind::Count, 2}), v.count(2));
}

TEST(Encode, PromptLayout) {
  const Vocabulary v(7, 6);
  EXPECT_EQ(ids_of(v, "z3 + z4 = "),
            (std::vector<std::size_t>{v.element(3), v.op(OperatorKind::Plus), v.element(4), v.equals()}));
  const auto ids = ids_of(v, "z3 + z4 + z5 + z5 + z5 + z6 =");
  EXPECT_EQ(ids.size(), 12u);
  EXPECT_EQ(decode(v, ids), "z3 + z4 + z5 + z5 + z5 + z6 =");
  EXPECT_THROW(ids_of(v, "z3 * z4 ="), ParseError);
  EXPECT_THROW(ids_of(v, "z9 + z4 ="), ParseError);

  const Equation eq = parse_equation("z4 om z2 om z1 = c2");
  const auto p = encode_prompt(v, eq);
  EXPECT_EQ(p.size(), 6u);
  EXPECT_EQ(p.back(), v.equals());
  EXPECT_EQ(decode(v, p), "z4 om z2 om z1 =");
}

TEST(ModelConfig, Validation) {
  ModelConfig c = tiny_config();
  EXPECT_NO_THROW(c.validate());
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.context_len = 13;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  nlohmann::json j = c;
  EXPECT_EQ(j.get<ModelConfig>(), c);
}

TEST(Init, DeterministicAndScaled) {
  const auto a = init_params(tiny_config(), 3);
  const auto b = init_params(tiny_config(), 3);
  const auto c = init_params(tiny_config(), 4);
  EXPECT_EQ(a, b);
  EXPECT_NE(a.token_embedding, c.token_embedding);
  EXPECT_TRUE(a.all_finite());
  const auto& w = a.blocks[0].w_fc.data();
  double s2 = 0.0;
  for (double x : w) s2 += x * x;
  EXPECT_NEAR(std::sqrt(s2 / static_cast<double>(w.size())), 0.02, 0.002);
  for (double x : a.blocks[1].b_q.data()) EXPECT_EQ(x, 0.0);
  for (double x : a.lnf_gain.data()) EXPECT_EQ(x, 1.0);
  const ModelConfig d;
  EXPECT_EQ(init_params(d, 1).parameter_count(), 798976u);
}

TEST(Forward, ShapesAndTraceLength) {
  const auto p = init_params(tiny_config(), 1);
  const Vocabulary v(7, 6);
  const auto ids = ids_of(v, "z1 + z2 + z3 =");
  const auto r = forward(p, ids);
  EXPECT_EQ(r.logits.size(), v.size());
  ASSERT_EQ(r.trace.size(), 3u);
  for (const auto& layer : r.trace) EXPECT_EQ(layer.size(), 16u);
  // Layer 0 is the token plus position embedding of `=`.
  const std::size_t eq_pos = ids.size() - 1;
  for (std::size_t d = 0; d < 16; ++d) {
    EXPECT_EQ(r.trace[0][d], p.token_embedding.at(v.equals(), d) + p.position_embedding.at(eq_pos, d));
  }
  EXPECT_EQ(forward(p, ids).logits, r.logits);
}

TEST(Forward, RejectsOverlengthAndUnknownIds) {
  const auto p = init_params(tiny_config(), 1);
  std::vector<std::size_t> ids(17, 0);
  EXPECT_THROW(forward(p, ids), ShapeError);
  const std::vector<std::size_t> bad{0, 999};
  EXPECT_THROW(forward(p, bad), ShapeError);
}

TEST(Forward, CausalAndPadInvariance) {
  const auto p = init_params(tiny_config(), 2);
  const Vocabulary v(7, 6);
  const auto prompt = ids_of(v, "z1 lt z5 lt z2 =");
  const auto base = forward(p, prompt);

  std::vector<std::vector<std::size_t>> seqs{prompt, ids_of(v, "z1 + z5 + z2 + z3 + z3 + z6 =")};
  const auto batch = make_batch(v, seqs, 16);
  EXPECT_EQ(batch.seq, 12u);
  EXPECT_EQ(batch.answer_rows[0], 5u);
  nn::Tape tape(false);
  const auto g = build_graph(tape, p, batch, batch.answer_rows);
  for (std::size_t c = 0; c < v.size(); ++c) {
    EXPECT_NEAR(g.logits.value().at(0, c), base.logits[c], 1e-12);
  }

  // Tokens after `=` do not change its logits.
  auto extended = prompt;
  extended.push_back(v.element(4));
  extended.push_back(v.pad());
  nn::Tape t2(false);
  std::vector<std::vector<std::size_t>> one{extended};
  auto b2 = make_batch(v, one, 16);
  b2.answer_rows = {prompt.size() - 1};
  const auto g2 = build_graph(t2, p, b2, b2.answer_rows);
  for (std::size_t c = 0; c < v.size(); ++c) {
    EXPECT_NEAR(g2.logits.value().at(0, c), base.logits[c], 1e-12);
  }
}

TEST(Forward, InitLossNearLogVocab) {
  const ModelConfig c;
  const auto p = init_params(c, 5);
  const auto bundle = compose_dataset(7, 6, 20, 5, 1);
  const Vocabulary v(7, 6);
  std::vector<std::vector<std::size_t>> seqs;
  std::vector<std::size_t> targets;
  for (const auto& te : bundle.train) {
    seqs.push_back(encode_prompt(v, te.eq));
    targets.push_back(v.label(te.eq.label));
  }
  const auto batch = make_batch(v, seqs, c.context_len);
  nn::Tape tape(false);
  const auto g = build_graph(tape, p, batch, batch.answer_rows);
  const double loss = nn::cross_entropy(g.logits, targets).value()[0];
  EXPECT_NEAR(loss, std::log(static_cast<double>(v.size())), 0.1);
}

TEST(Forward, UntrainedAccuracyNearChance) {
  const auto p = init_params(ModelConfig{}, 6);
  const auto bundle = compose_dataset(7, 6, 50, 50, 2);
  const Vocabulary v(7, 6);
  int correct = 0;
  for (const auto& te : bundle.test) {
    correct += predict(p, encode_prompt(v, te.eq)) == v.label(te.eq.label) ? 1 : 0;
  }
  EXPECT_LT(static_cast<double>(correct) / static_cast<double>(bundle.test.size()), 0.25);
}

TEST(Gradient, FullModelMatchesFiniteDifferences) {
  ModelConfig c = tiny_config();
  c.d_model = 8;
  c.d_ff = 16;
  auto p = init_params(c, 7);
  // Larger weights so every path carries a measurable gradient.
  Rng rng(11);
  for (auto& [name, t] : p.named()) {
    for (double& x : t->data()) x += 0.3 * rng.normal();
  }
  const Vocabulary v(7, 6);
  const auto bundle = compose_dataset(7, 6, 2, 1, 3);
  std::vector<std::vector<std::size_t>> seqs;
  std::vector<std::size_t> targets;
  for (std::size_t i = 0; i < 6; ++i) {
    seqs.push_back(encode_prompt(v, bundle.train[i * 3].eq));
    targets.push_back(v.label(bundle.train[i * 3].eq.label));
  }
  const auto batch = make_batch(v, seqs, c.context_len);

  nn::Tape tape;
  const auto g = build_graph(tape, p, batch, batch.answer_rows);
  const auto loss = nn::cross_entropy(g.logits, targets);
  tape.backward(loss);
  std::vector<nn::Tensor> analytic;
  std::vector<nn::Tensor*> ptrs;
  for (std::size_t i = 0; i < g.parameters.size(); ++i) analytic.push_back(tape.grad(g.parameters[i]));
  for (auto& [name, t] : p.named()) ptrs.push_back(t);
  auto f = [&]() {
    nn::Tape t(false);
    const auto gg = build_graph(t, p, batch, batch.answer_rows);
    return nn::cross_entropy(gg.logits, targets).value()[0];
  };
  const auto r = nn::grad_check(f, ptrs, analytic, 1e-5, 1e-4, 300, 5);
  EXPECT_EQ(r.coordinates, 300u);
  EXPECT_TRUE(r.passed) << r.max_relative_error;
}

TEST(Checkpoint, BitwiseRoundTrip) {
  const auto dir = fs::temp_directory_path() / "algstruct_model_ckpt";
  fs::create_directories(dir);
  auto p = init_params(tiny_config(), 9);
  p.blocks[0].b_o[1] = std::nextafter(1.0, 2.0);
  const nlohmann::json meta{{"k_train", 300}};
  save_checkpoint(p, meta, dir / "m.ckpt");
  nlohmann::json back_meta;
  const auto q = load_checkpoint(dir / "m.ckpt", &back_meta);
  EXPECT_EQ(p, q);
  EXPECT_EQ(back_meta.at("k_train"), 300);
  save_checkpoint(q, meta, dir / "m2.ckpt");
  std::ifstream a(dir / "m.ckpt", std::ios::binary), b(dir / "m2.ckpt", std::ios::binary);
  EXPECT_TRUE(std::equal(std::istreambuf_iterator<char>(a), {}, std::istreambuf_iterator<char>(b)));
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const auto dir = fs::temp_directory_path() / "algstruct_model_ckpt_bad";
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "junk.ckpt", std::ios::binary);
    out << "NOTACKPT";
  }
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), Error);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
  save_checkpoint(init_params(tiny_config(), 1), {}, dir / "t.ckpt");
  fs::resize_file(dir / "t.ckpt", fs::file_size(dir / "t.ckpt") - 8);
  EXPECT_THROW(load_checkpoint(dir / "t.ckpt"), Error);
}
