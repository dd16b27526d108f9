#pragma once

// Tokenizer and a small decoder-only transformer (GPT-2 block layout) with
// per-layer hidden-state capture at the `=` position.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "algstruct/algebra.hpp"
#include "algstruct/datagen.hpp"
#include "algstruct/tape.hpp"
#include "algstruct/tensor.hpp"

namespace algstruct {

// z_0..z_{n-1}, r_0..r_{n-1}, c_0..c_M, + op om lt rt =, PAD.
class Vocabulary {
 public:
  Vocabulary(int n, int m);

  int n() const noexcept { return n_; }
  int m() const noexcept { return m_; }
  std::size_t size() const noexcept { return symbols_.size(); }

  std::size_t element(int i) const;
  std::size_t result(int i) const;
  std::size_t count(int k) const;
  std::size_t op(OperatorKind op) const;
  std::size_t equals() const noexcept { return equals_; }
  std::size_t pad() const noexcept { return symbols_.size() - 1; }
  std::size_t label(const Label& label) const;

  const std::string& symbol(std::size_t id) const { return symbols_.at(id); }
  std::optional<std::size_t> find(std::string_view symbol) const;

 private:
  int n_;
  int m_;
  std::size_t equals_ = 0;
  std::vector<std::string> symbols_;
};

struct ModelConfig {
  int n = 7;
  int m = 6;
  int layers = 4;
  int heads = 4;
  int d_model = 128;
  int d_ff = 512;
  int context_len = 16;
  std::uint64_t seed = 1;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct BlockParams {
  nn::Tensor ln1_gain, ln1_bias;
  nn::Tensor w_q, w_k, w_v, w_o;  // [D, D], applied as x * W
  nn::Tensor b_q, b_k, b_v, b_o;
  nn::Tensor ln2_gain, ln2_bias;
  nn::Tensor w_fc, b_fc;      // [D, F]
  nn::Tensor w_proj, b_proj;  // [F, D]

  friend bool operator==(const BlockParams&, const BlockParams&) = default;
};

struct Params {
  ModelConfig config;
  nn::Tensor token_embedding;     // [V, D]; also the output head
  nn::Tensor position_embedding;  // [context, D]
  std::vector<BlockParams> blocks;
  nn::Tensor lnf_gain, lnf_bias;

  std::vector<std::pair<std::string, nn::Tensor*>> named();
  std::vector<std::pair<std::string, const nn::Tensor*>> named() const;
  std::size_t parameter_count() const;
  bool all_finite() const;

  friend bool operator==(const Params&, const Params&) = default;
};

// Scaled normal (std 0.02) weights, zero biases, unit layer-norm gains.
Params init_params(const ModelConfig& config, std::uint64_t seed);

// Prompt text such as "z3 + z4 =" (whitespace separated) to ids.
std::vector<std::size_t> encode(const Vocabulary& vocab, std::string_view prompt);
std::string decode(const Vocabulary& vocab, std::size_t id);
std::string decode(const Vocabulary& vocab, std::span<const std::size_t> ids);
// Prompt ids for an equation; the label is not part of the prompt.
std::vector<std::size_t> encode_prompt(const Vocabulary& vocab, const Equation& eq);

// Hidden state at the `=` position: embedding output followed by the residual
// stream after every block (layers + 1 snapshots).
using LayerTrace = std::vector<std::vector<double>>;

struct ForwardResult {
  std::vector<double> logits;  // over the full vocabulary, read at `=`
  LayerTrace trace;
};

ForwardResult forward(const Params& params, std::span<const std::size_t> ids);
std::size_t predict(const Params& params, std::span<const std::size_t> prompt);

// Batched graph construction shared by training and evaluation. Sequences are
// right-padded to a common length; `read_rows` picks rows of the flattened
// [batch*seq] grid whose logits are produced.
struct BatchInput {
  std::vector<std::size_t> ids;  // batch*seq
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::size_t> answer_rows;  // flat row of the `=` token per sequence
};

BatchInput make_batch(const Vocabulary& vocab, const std::vector<std::vector<std::size_t>>& seqs,
                      std::size_t context_len);

struct BatchGraph {
  nn::Var logits;                    // [read_rows, V]
  std::vector<nn::Var> residuals;    // layers + 1 entries of [batch*seq, D]
  std::vector<nn::Var> parameters;   // same order as Params::named()
};

BatchGraph build_graph(nn::Tape& tape, const Params& params, const BatchInput& batch,
                       std::span<const std::size_t> read_rows);

// Versioned binary checkpoint: config + metadata JSON followed by raw tensors.
void save_checkpoint(const Params& params, const nlohmann::json& meta,
                     const std::filesystem::path& file);
Params load_checkpoint(const std::filesystem::path& file, nlohmann::json* meta = nullptr);

}  // namespace algstruct
