#include "algstruct/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "algstruct/error.hpp"
#include "algstruct/rng.hpp"

namespace algstruct {

using nn::Tensor;
using nn::Var;

Vocabulary::Vocabulary(int n, int m) : n_(n), m_(m) {
  if (n < 2) throw ConfigError("vocabulary needs n >= 2");
  if (m < 1) throw ConfigError("vocabulary needs M >= 1");
  for (int i = 0; i < n; ++i) symbols_.push_back("z" + std::to_string(i));
  for (int i = 0; i < n; ++i) symbols_.push_back("r" + std::to_string(i));
  for (int k = 0; k <= m; ++k) symbols_.push_back("c" + std::to_string(k));
  for (OperatorKind op : kAllOperators) symbols_.emplace_back(operator_token(op));
  equals_ = symbols_.size();
  symbols_.push_back("=");
  symbols_.push_back("<pad>");
}

std::size_t Vocabulary::element(int i) const {
  if (i < 0 || i >= n_) throw ConfigError("element z" + std::to_string(i) + " not in vocabulary");
  return static_cast<std::size_t>(i);
}

std::size_t Vocabulary::result(int i) const {
  if (i < 0 || i >= n_) throw ConfigError("result r" + std::to_string(i) + " not in vocabulary");
  return static_cast<std::size_t>(n_ + i);
}

std::size_t Vocabulary::count(int k) const {
  if (k < 0 || k > m_) throw ConfigError("count c" + std::to_string(k) + " not in vocabulary");
  return static_cast<std::size_t>(2 * n_ + k);
}

std::size_t Vocabulary::op(OperatorKind op) const {
  return static_cast<std::size_t>(2 * n_ + m_ + 1) + static_cast<std::size_t>(op);
}

std::size_t Vocabulary::label(const Label& label) const {
  switch (label.kind) {
    case Label::Kind::Element: return element(label.value);
    case Label::Kind::Result: return result(label.value);
    case Label::Kind::Count: return count(label.value);
  }
  throw ConfigError("unknown label kind");
}

std::optional<std::size_t> Vocabulary::find(std::string_view symbol) const {
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    if (symbols_[i] == symbol) return i;
  }
  return std::nullopt;
}

void ModelConfig::validate() const {
  if (n < 2 || m < 2) throw ConfigError("model needs n >= 2 and M >= 2");
  if (layers < 1 || heads < 1 || d_model < 1 || d_ff < 1) throw ConfigError("model dimensions must be positive");
  if (d_model % heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by heads " + std::to_string(heads));
  }
  if (context_len < 2 * m + 2) {
    throw ConfigError("context_len " + std::to_string(context_len) + " < 2M+2 = " + std::to_string(2 * m + 2));
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"n", c.n},           {"m", c.m},         {"layers", c.layers},
                     {"heads", c.heads},   {"d_model", c.d_model}, {"d_ff", c.d_ff},
                     {"context_len", c.context_len}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.n = j.value("n", c.n);
  c.m = j.value("m", c.m);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.d_model = j.value("d_model", c.d_model);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.context_len = j.value("context_len", c.context_len);
  c.seed = j.value("seed", c.seed);
}

std::vector<std::pair<std::string, Tensor*>> Params::named() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("wte", &token_embedding);
  out.emplace_back("wpe", &position_embedding);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    auto& b = blocks[l];
    const std::string p = "h" + std::to_string(l) + ".";
    out.emplace_back(p + "ln1.g", &b.ln1_gain);
    out.emplace_back(p + "ln1.b", &b.ln1_bias);
    out.emplace_back(p + "attn.wq", &b.w_q);
    out.emplace_back(p + "attn.wk", &b.w_k);
    out.emplace_back(p + "attn.wv", &b.w_v);
    out.emplace_back(p + "attn.bq", &b.b_q);
    out.emplace_back(p + "attn.bk", &b.b_k);
    out.emplace_back(p + "attn.bv", &b.b_v);
    out.emplace_back(p + "attn.wo", &b.w_o);
    out.emplace_back(p + "attn.bo", &b.b_o);
    out.emplace_back(p + "ln2.g", &b.ln2_gain);
    out.emplace_back(p + "ln2.b", &b.ln2_bias);
    out.emplace_back(p + "mlp.wfc", &b.w_fc);
    out.emplace_back(p + "mlp.bfc", &b.b_fc);
    out.emplace_back(p + "mlp.wproj", &b.w_proj);
    out.emplace_back(p + "mlp.bproj", &b.b_proj);
  }
  out.emplace_back("lnf.g", &lnf_gain);
  out.emplace_back("lnf.b", &lnf_bias);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> Params::named() const {
  auto mut = const_cast<Params*>(this)->named();
  return {mut.begin(), mut.end()};
}

std::size_t Params::parameter_count() const {
  std::size_t c = 0;
  for (const auto& [name, t] : named()) c += t->size();
  return c;
}

bool Params::all_finite() const {
  for (const auto& [name, t] : named()) {
    for (double v : t->data()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

Params init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const Vocabulary vocab(config.n, config.m);
  const auto V = vocab.size();
  const auto D = static_cast<std::size_t>(config.d_model);
  const auto F = static_cast<std::size_t>(config.d_ff);
  const auto L = static_cast<std::size_t>(config.context_len);
  Rng rng(seed, "init");
  auto normal = [&rng](std::vector<std::size_t> shape) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = 0.02 * rng.normal();
    return t;
  };
  auto zeros = [](std::size_t n) { return Tensor({n}); };
  auto ones = [](std::size_t n) { return Tensor({n}, 1.0); };

  Params p;
  p.config = config;
  p.token_embedding = normal({V, D});
  p.position_embedding = normal({L, D});
  for (int l = 0; l < config.layers; ++l) {
    BlockParams b;
    b.ln1_gain = ones(D);
    b.ln1_bias = zeros(D);
    b.w_q = normal({D, D});
    b.w_k = normal({D, D});
    b.w_v = normal({D, D});
    b.b_q = zeros(D);
    b.b_k = zeros(D);
    b.b_v = zeros(D);
    b.w_o = normal({D, D});
    b.b_o = zeros(D);
    b.ln2_gain = ones(D);
    b.ln2_bias = zeros(D);
    b.w_fc = normal({D, F});
    b.b_fc = zeros(F);
    b.w_proj = normal({F, D});
    b.b_proj = zeros(D);
    p.blocks.push_back(std::move(b));
  }
  p.lnf_gain = ones(D);
  p.lnf_bias = zeros(D);
  return p;
}

std::vector<std::size_t> encode(const Vocabulary& vocab, std::string_view prompt) {
  std::vector<std::size_t> ids;
  std::istringstream in{std::string(prompt)};
  std::string tok;
  while (in >> tok) {
    auto id = vocab.find(tok);
    if (!id || *id == vocab.pad()) throw ParseError(1, "unknown symbol '" + tok + "'");
    ids.push_back(*id);
  }
  return ids;
}

std::string decode(const Vocabulary& vocab, std::size_t id) { return vocab.symbol(id); }

std::string decode(const Vocabulary& vocab, std::span<const std::size_t> ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += vocab.symbol(ids[i]);
  }
  return out;
}

std::vector<std::size_t> encode_prompt(const Vocabulary& vocab, const Equation& eq) {
  std::vector<std::size_t> ids;
  ids.reserve(2 * eq.operands.size());
  for (std::size_t i = 0; i < eq.operands.size(); ++i) {
    if (i) ids.push_back(vocab.op(eq.op));
    ids.push_back(vocab.element(eq.operands[i]));
  }
  ids.push_back(vocab.equals());
  return ids;
}

BatchInput make_batch(const Vocabulary& vocab, const std::vector<std::vector<std::size_t>>& seqs,
                      std::size_t context_len) {
  BatchInput b;
  b.batch = seqs.size();
  for (const auto& s : seqs) b.seq = std::max(b.seq, s.size());
  if (b.batch == 0 || b.seq == 0) throw ShapeError("empty batch");
  if (b.seq > context_len) {
    throw ShapeError("sequence length " + std::to_string(b.seq) + " exceeds context " +
                     std::to_string(context_len));
  }
  b.ids.assign(b.batch * b.seq, vocab.pad());
  for (std::size_t i = 0; i < b.batch; ++i) {
    const auto& s = seqs[i];
    std::copy(s.begin(), s.end(), b.ids.begin() + static_cast<std::ptrdiff_t>(i * b.seq));
    auto eq = std::find(s.begin(), s.end(), vocab.equals());
    const std::size_t pos = eq == s.end() ? s.size() - 1 : static_cast<std::size_t>(eq - s.begin());
    b.answer_rows.push_back(i * b.seq + pos);
  }
  return b;
}

BatchGraph build_graph(nn::Tape& tape, const Params& params, const BatchInput& batch,
                       std::span<const std::size_t> read_rows) {
  const ModelConfig& cfg = params.config;
  BatchGraph g;
  for (const auto& [name, t] : params.named()) g.parameters.push_back(tape.parameter(*t));
  std::size_t pi = 0;
  auto next = [&]() { return g.parameters[pi++]; };

  const Var wte = next();
  const Var wpe = next();
  std::vector<std::size_t> positions(batch.batch * batch.seq);
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i % batch.seq;
  Var x = nn::add(nn::gather_rows(wte, batch.ids), nn::gather_rows(wpe, positions));
  g.residuals.push_back(x);

  for (int l = 0; l < cfg.layers; ++l) {
    const Var ln1g = next(), ln1b = next();
    const Var wq = next(), wk = next(), wv = next();
    const Var bq = next(), bk = next(), bv = next();
    const Var wo = next(), bo = next();
    const Var ln2g = next(), ln2b = next();
    const Var wfc = next(), bfc = next(), wproj = next(), bproj = next();

    const Var h = nn::layer_norm(x, ln1g, ln1b);
    const Var q = nn::add_bias(nn::matmul(h, wq), bq);
    const Var k = nn::add_bias(nn::matmul(h, wk), bk);
    const Var v = nn::add_bias(nn::matmul(h, wv), bv);
    const Var att = nn::causal_attention(q, k, v, batch.batch, batch.seq,
                                         static_cast<std::size_t>(cfg.heads));
    x = nn::add(x, nn::add_bias(nn::matmul(att, wo), bo));
    const Var h2 = nn::layer_norm(x, ln2g, ln2b);
    const Var f = nn::gelu(nn::add_bias(nn::matmul(h2, wfc), bfc));
    x = nn::add(x, nn::add_bias(nn::matmul(f, wproj), bproj));
    g.residuals.push_back(x);
  }
  const Var lnfg = next(), lnfb = next();
  const Var picked = nn::gather_rows(x, read_rows);
  g.logits = nn::matmul_nt(nn::layer_norm(picked, lnfg, lnfb), wte);
  return g;
}

ForwardResult forward(const Params& params, std::span<const std::size_t> ids) {
  const Vocabulary vocab(params.config.n, params.config.m);
  if (ids.empty()) throw ShapeError("forward on an empty sequence");
  if (ids.size() > static_cast<std::size_t>(params.config.context_len)) {
    throw ShapeError("input length " + std::to_string(ids.size()) + " exceeds context " +
                     std::to_string(params.config.context_len));
  }
  for (std::size_t id : ids) {
    if (id >= vocab.size()) throw ShapeError("token id " + std::to_string(id) + " outside vocabulary");
  }
  const BatchInput batch =
      make_batch(vocab, {std::vector<std::size_t>(ids.begin(), ids.end())},
                 static_cast<std::size_t>(params.config.context_len));
  nn::Tape tape(false);
  const BatchGraph g = build_graph(tape, params, batch, batch.answer_rows);
  ForwardResult out;
  const auto logits = g.logits.value().data();
  out.logits.assign(logits.begin(), logits.end());
  const std::size_t D = static_cast<std::size_t>(params.config.d_model);
  const std::size_t row = batch.answer_rows.front();
  for (const Var& r : g.residuals) {
    const auto data = r.value().data();
    out.trace.emplace_back(data.begin() + static_cast<std::ptrdiff_t>(row * D),
                           data.begin() + static_cast<std::ptrdiff_t>((row + 1) * D));
  }
  return out;
}

std::size_t predict(const Params& params, std::span<const std::size_t> prompt) {
  const auto res = forward(params, prompt);
  return static_cast<std::size_t>(std::max_element(res.logits.begin(), res.logits.end()) -
                                  res.logits.begin());
}

namespace {

constexpr char kMagic[8] = {'A', 'L', 'G', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw IoError("truncated checkpoint");
  return v;
}

}  // namespace

void save_checkpoint(const Params& params, const nlohmann::json& meta,
                     const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  const std::string header = nlohmann::json{{"config", params.config}, {"meta", meta}}.dump();
  put<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  const auto named = params.named();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t->ndim()));
    for (std::size_t d : t->shape()) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t->ptr()), static_cast<std::streamsize>(t->size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing " + file.string());
}

Params load_checkpoint(const std::filesystem::path& file, nlohmann::json* meta) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read " + file.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw IoError(file.string() + " is not a checkpoint");
  const auto version = get<std::uint32_t>(in);
  if (version != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto hlen = get<std::uint64_t>(in);
  std::string header(hlen, '\0');
  in.read(header.data(), static_cast<std::streamsize>(hlen));
  const auto hj = nlohmann::json::parse(header);
  const ModelConfig config = hj.at("config").get<ModelConfig>();
  if (meta) *meta = hj.value("meta", nlohmann::json::object());
  Params p = init_params(config, 0);
  auto named = p.named();
  const auto count = get<std::uint32_t>(in);
  if (count != named.size()) throw IoError("checkpoint tensor count mismatch");
  for (auto& [name, t] : named) {
    const auto nlen = get<std::uint32_t>(in);
    std::string got(nlen, '\0');
    in.read(got.data(), nlen);
    if (got != name) throw IoError("checkpoint tensor '" + got + "' where '" + name + "' expected");
    const auto nd = get<std::uint32_t>(in);
    std::vector<std::size_t> shape;
    for (std::uint32_t i = 0; i < nd; ++i) shape.push_back(static_cast<std::size_t>(get<std::uint64_t>(in)));
    if (shape != t->shape()) throw IoError("checkpoint tensor '" + name + "' has wrong shape");
    in.read(reinterpret_cast<char*>(t->ptr()), static_cast<std::streamsize>(t->size() * sizeof(double)));
    if (!in) throw IoError("truncated checkpoint");
  }
  return p;
}

}  // namespace algstruct
