#include "dres/detailbase.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dres/error.hpp"
#include "dres/rng.hpp"

namespace dres {

namespace {

std::string layer_prefix(int layer) { return "layers." + std::to_string(layer) + "."; }

struct TensorSpec {
  std::string name;
  int rows;
  int cols;
  enum class Init { Weight, Zero, One } init;
};

std::vector<TensorSpec> tensor_specs(const ModelConfig& cfg) {
  using I = TensorSpec::Init;
  std::vector<TensorSpec> specs{
      {"proj.w1", cfg.c, cfg.d, I::Weight},
      {"proj.w2", cfg.c, cfg.d, I::Weight},
      {"query.w3", cfg.e, cfg.d, I::Weight},
      {"score.w1", cfg.d, cfg.d, I::Weight},
      {"score.b1", 1, cfg.d, I::Zero},
      {"score.w2", cfg.d, 1, I::Weight},
      {"score.b2", 1, 1, I::Zero},
  };
  for (int l = 0; l < cfg.num_layers; ++l) {
    const auto p = layer_prefix(l);
    for (const char* block : {"cross.", "self."}) {
      const auto b = p + block;
      specs.push_back({b + "norm.gamma", 1, cfg.d, I::One});
      specs.push_back({b + "norm.beta", 1, cfg.d, I::Zero});
      for (const char* proj : {"q", "k", "v", "o"}) {
        specs.push_back({b + "w" + proj, cfg.d, cfg.d, I::Weight});
        specs.push_back({b + "b" + proj, 1, cfg.d, I::Zero});
      }
    }
    specs.push_back({p + "ffn.norm.gamma", 1, cfg.d, I::One});
    specs.push_back({p + "ffn.norm.beta", 1, cfg.d, I::Zero});
    specs.push_back({p + "ffn.w1", cfg.d, cfg.ffn_hidden, I::Weight});
    specs.push_back({p + "ffn.b1", 1, cfg.ffn_hidden, I::Zero});
    specs.push_back({p + "ffn.w2", cfg.ffn_hidden, cfg.d, I::Weight});
    specs.push_back({p + "ffn.b2", 1, cfg.d, I::Zero});
  }
  return specs;
}

void check_finite(const Matrix& m, const std::string& what) {
  if (!m.allFinite()) throw Error(ErrorCode::NonFiniteActivation, what);
}

ag::Var param(const detail::ParamVars& params, const std::string& name) {
  const auto it = params.find(name);
  if (it == params.end()) throw Error(ErrorCode::ShapeMismatch, "missing parameter " + name);
  return it->second;
}

ag::Var linear(ag::Tape& t, const detail::ParamVars& params, ag::Var x, const std::string& w,
               const std::string& b) {
  return t.add_row(t.matmul(x, param(params, w)), param(params, b));
}

/// Multi-head scaled dot-product attention of `queries` over `keys_values`.
ag::Var attention(ag::Tape& t, const detail::ParamVars& params, const std::string& prefix,
                  ag::Var queries, ag::Var keys_values, const ModelConfig& cfg, int layer, bool cross,
                  std::vector<AttentionRecord>* records) {
  const ag::Var q = linear(t, params, queries, prefix + "wq", prefix + "bq");
  const ag::Var k = linear(t, params, keys_values, prefix + "wk", prefix + "bk");
  const ag::Var v = linear(t, params, keys_values, prefix + "wv", prefix + "bv");
  const int head_dim = cfg.d / cfg.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<ag::Var> heads;
  heads.reserve(static_cast<std::size_t>(cfg.heads));
  for (int h = 0; h < cfg.heads; ++h) {
    const ag::Var qh = t.cols(q, h * head_dim, head_dim);
    const ag::Var kh = t.cols(k, h * head_dim, head_dim);
    const ag::Var vh = t.cols(v, h * head_dim, head_dim);
    const ag::Var weights = t.softmax_rows(t.scale(t.matmul_nt(qh, kh), scale));
    if (records) records->push_back({layer, cross, h, t.value(weights)});
    heads.push_back(t.matmul(weights, vh));
  }
  return linear(t, params, t.hcat(heads), prefix + "wo", prefix + "bo");
}

ag::Var norm(ag::Tape& t, const detail::ParamVars& params, const std::string& prefix, ag::Var x,
             const ModelConfig& cfg) {
  return t.layer_norm(x, param(params, prefix + "norm.gamma"), param(params, prefix + "norm.beta"),
                      cfg.norm_eps);
}

ag::Var decoder_block(ag::Tape& t, const detail::ParamVars& params, ag::Var q, ag::Var visual,
                      int layer, const ModelConfig& cfg, std::vector<AttentionRecord>* records) {
  const auto p = layer_prefix(layer);
  // Cross: queries read the scene.
  q = t.add(q, attention(t, params, p + "cross.", norm(t, params, p + "cross.", q, cfg), visual, cfg,
                         layer, true, records));
  // Self: queries exchange context.
  const ag::Var normed = norm(t, params, p + "self.", q, cfg);
  q = t.add(q, attention(t, params, p + "self.", normed, normed, cfg, layer, false, records));
  // Position-wise FFN.
  const ag::Var h = t.gelu(linear(t, params, norm(t, params, p + "ffn.", q, cfg), p + "ffn.w1", p + "ffn.b1"));
  q = t.add(q, linear(t, params, h, p + "ffn.w2", p + "ffn.b2"));
  check_finite(t.value(q), "decoder layer " + std::to_string(layer));
  return q;
}

ag::Var score_head(ag::Tape& t, const detail::ParamVars& params, ag::Var q) {
  const ag::Var h = t.gelu(linear(t, params, q, "score.w1", "score.b1"));
  return t.sigmoid(linear(t, params, h, "score.w2", "score.b2"));
}

void expect_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  if ((rows >= 0 && m.rows() != rows) || m.cols() != cols) {
    throw Error(ErrorCode::ShapeMismatch, what + " is " + std::to_string(m.rows()) + "x" +
                                              std::to_string(m.cols()) + ", expected " +
                                              (rows >= 0 ? std::to_string(rows) : std::string("?")) +
                                              "x" + std::to_string(cols));
  }
}

// Little-endian byte helpers for checkpoints.
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

class Reader {
public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }

  std::string str(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error(ErrorCode::BadCheckpoint, "truncated checkpoint");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

constexpr char kMagic[] = "DRESCKPT";

}  // namespace

void ModelConfig::validate() const {
  if (d <= 0 || e <= 0 || c <= 0 || ffn_hidden <= 0 || heads <= 0) {
    throw Error(ErrorCode::ShapeMismatch, "model widths must be positive");
  }
  if (d % heads != 0) {
    throw Error(ErrorCode::ShapeMismatch,
                "d=" + std::to_string(d) + " not divisible by heads=" + std::to_string(heads));
  }
  if (num_layers < 1) throw Error(ErrorCode::ShapeMismatch, "num_layers must be >= 1");
}

const Matrix& ModelState::at(const std::string& name) const {
  const auto it = params.find(name);
  if (it == params.end()) throw Error(ErrorCode::ShapeMismatch, "missing parameter " + name);
  return it->second;
}

Matrix& ModelState::at(const std::string& name) {
  const auto it = params.find(name);
  if (it == params.end()) throw Error(ErrorCode::ShapeMismatch, "missing parameter " + name);
  return it->second;
}

std::size_t ModelState::num_scalars() const {
  std::size_t n = 0;
  for (const auto& [_, m] : params) n += static_cast<std::size_t>(m.size());
  return n;
}

std::vector<std::string> parameter_names(const ModelConfig& cfg) {
  std::vector<std::string> names;
  for (const auto& s : tensor_specs(cfg)) names.push_back(s.name);
  std::sort(names.begin(), names.end());
  return names;
}

ModelState init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelState state;
  for (const auto& spec : tensor_specs(cfg)) {
    Matrix m(spec.rows, spec.cols);
    switch (spec.init) {
      case TensorSpec::Init::Zero: m.setZero(); break;
      case TensorSpec::Init::One: m.setOnes(); break;
      case TensorSpec::Init::Weight: {
        Rng rng(mix_seed(seed, stable_hash(spec.name)));
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.rows));
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
        break;
      }
    }
    state.params.emplace(spec.name, std::move(m));
  }
  return state;
}

namespace detail {

ParamVars bind_parameters(ag::Tape& tape, const ModelState& state) {
  ParamVars vars;
  for (const auto& [name, value] : state.params) vars.emplace(name, tape.leaf(value));
  return vars;
}

ForwardGraph build_forward(ag::Tape& tape, const ParamVars& params, ag::Var visual,
                           ag::Var superpoint, ag::Var tokens, const ModelConfig& cfg,
                           std::vector<AttentionRecord>* attention) {
  cfg.validate();
  expect_shape(tape.value(visual), -1, cfg.d, "visual features");
  expect_shape(tape.value(superpoint), tape.value(visual).rows(), cfg.d, "superpoint features");
  expect_shape(tape.value(tokens), -1, cfg.e, "token features");

  ForwardGraph g;
  ag::Var q = tape.matmul(tokens, param(params, "query.w3"));
  auto snapshot = [&](ag::Var queries) {
    g.queries.push_back(queries);
    g.logits.push_back(tape.matmul_nt(queries, superpoint));
    g.scores.push_back(score_head(tape, params, queries));
  };
  snapshot(q);
  for (int l = 0; l < cfg.num_layers; ++l) {
    q = decoder_block(tape, params, q, visual, l, cfg, attention);
    snapshot(q);
  }
  return g;
}

}  // namespace detail

Matrix init_queries(const Matrix& token_features, const Matrix& w3) {
  if (token_features.cols() != w3.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "init_queries: token width " +
                                              std::to_string(token_features.cols()) + ", W3 has " +
                                              std::to_string(w3.rows()) + " rows");
  }
  return token_features * w3;
}

Matrix decoder_layer(const Matrix& queries, const Matrix& visual, const ModelState& state, int layer,
                     const ModelConfig& cfg, std::vector<AttentionRecord>* attention) {
  cfg.validate();
  expect_shape(queries, -1, cfg.d, "queries");
  expect_shape(visual, -1, cfg.d, "visual features");
  if (layer < 0 || layer >= cfg.num_layers) throw Error(ErrorCode::IndexOutOfRange, "layer");
  ag::Tape tape(false);
  const auto params = detail::bind_parameters(tape, state);
  const ag::Var out = decoder_block(tape, params, tape.constant(queries), tape.constant(visual), layer,
                                    cfg, attention);
  return tape.value(out);
}

ForwardTrace forward(const Matrix& visual, const Matrix& superpoint, const Matrix& token_features,
                     const ModelConfig& cfg, const ModelState& state, bool record_attention) {
  ag::Tape tape(false);
  const auto params = detail::bind_parameters(tape, state);
  ForwardTrace trace;
  const auto g = detail::build_forward(tape, params, tape.constant(visual), tape.constant(superpoint),
                                       tape.constant(token_features), cfg,
                                       record_attention ? &trace.attention : nullptr);
  for (std::size_t i = 0; i < g.queries.size(); ++i) {
    trace.queries.push_back(tape.value(g.queries[i]));
    trace.logits.push_back(tape.value(g.logits[i]));
    trace.scores.push_back(tape.value(g.scores[i]));
    check_finite(trace.logits.back(), "mask logits");
  }
  return trace;
}

ForwardTrace forward_pooled(const Matrix& pooled, const Matrix& token_features,
                            const ModelConfig& cfg, const ModelState& state) {
  const auto projected = project_features(pooled, state.at("proj.w1"), state.at("proj.w2"));
  return forward(projected.visual, projected.superpoint, token_features, cfg, state);
}

PhraseMaskSet predict_masks(const ForwardTrace& trace, const AnnotatedDescription& desc,
                            const SuperpointPartition& part, double threshold) {
  if (trace.logits.empty()) throw Error(ErrorCode::ShapeMismatch, "empty trace");
  const Matrix& logits = trace.logits.back();
  if (logits.cols() != part.num_superpoints) {
    throw Error(ErrorCode::ShapeMismatch, "trace has " + std::to_string(logits.cols()) +
                                              " superpoints, partition " +
                                              std::to_string(part.num_superpoints));
  }
  auto mask_for_row = [&](int row) {
    if (row < 0 || row >= logits.rows()) {
      throw Error(ErrorCode::IndexOutOfRange, "query row " + std::to_string(row) + " of " +
                                                  std::to_string(logits.rows()));
    }
    SuperpointBits bits(static_cast<std::size_t>(logits.cols()));
    for (Eigen::Index s = 0; s < logits.cols(); ++s) bits[static_cast<std::size_t>(s)] = logits(row, s) > threshold;
    return broadcast_mask(bits, part);
  };
  PhraseMaskSet out;
  out.description_id = desc.description_id;
  for (const auto& p : desc.phrases) {
    if (p.head_index < 0 || p.head_index >= desc.length()) {
      throw Error(ErrorCode::IndexOutOfRange, "head index " + std::to_string(p.head_index) +
                                                  " with L=" + std::to_string(desc.length()));
    }
    out.masks.push_back(mask_for_row(AnnotatedDescription::query_row(p)));
  }
  out.sentence_mask = mask_for_row(0);
  return out;
}

std::string checkpoint_bytes(const ModelConfig& cfg, const ModelState& state) {
  nlohmann::ordered_json j;
  j["format"] = "dres-checkpoint";
  j["d"] = cfg.d;
  j["e"] = cfg.e;
  j["c"] = cfg.c;
  j["num_layers"] = cfg.num_layers;
  j["heads"] = cfg.heads;
  j["ffn_hidden"] = cfg.ffn_hidden;
  j["binarize_threshold"] = cfg.binarize_threshold;
  j["norm_eps"] = cfg.norm_eps;
  const std::string config = j.dump();

  std::string out(kMagic, 8);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(config.size()));
  out += config;
  put_u32(out, static_cast<std::uint32_t>(state.params.size()));
  for (const auto& [name, m] : state.params) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) put_f64(out, m.data()[i]);
  }
  return out;
}

std::pair<ModelConfig, ModelState> parse_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.str(8) != std::string(kMagic, 8)) throw Error(ErrorCode::BadCheckpoint, "bad magic");
  const auto version = in.u32();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::BadCheckpoint, "unsupported version " + std::to_string(version));
  }
  ModelConfig cfg;
  try {
    const auto j = nlohmann::json::parse(in.str(in.u32()));
    cfg.d = j.at("d").get<int>();
    cfg.e = j.at("e").get<int>();
    cfg.c = j.at("c").get<int>();
    cfg.num_layers = j.at("num_layers").get<int>();
    cfg.heads = j.at("heads").get<int>();
    cfg.ffn_hidden = j.at("ffn_hidden").get<int>();
    cfg.binarize_threshold = j.at("binarize_threshold").get<double>();
    cfg.norm_eps = j.at("norm_eps").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadCheckpoint, std::string("config block: ") + e.what());
  }
  cfg.validate();
  ModelState state;
  const auto count = in.u32();
  for (std::uint32_t t = 0; t < count; ++t) {
    auto name = in.str(in.u32());
    const auto rows = in.u32();
    const auto cols = in.u32();
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = in.f64();
    state.params.emplace(std::move(name), std::move(m));
  }
  if (!in.done()) throw Error(ErrorCode::BadCheckpoint, "trailing bytes");
  const auto expected = init_model(cfg, 0);
  for (const auto& [name, m] : expected.params) {
    const auto it = state.params.find(name);
    if (it == state.params.end() || it->second.rows() != m.rows() || it->second.cols() != m.cols()) {
      throw Error(ErrorCode::BadCheckpoint, "parameter " + name + " missing or misshapen");
    }
  }
  return {cfg, std::move(state)};
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     const ModelState& state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::PathUnwritable, path.string());
  const auto bytes = checkpoint_bytes(cfg, state);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::PathUnwritable, path.string());
}

std::pair<ModelConfig, ModelState> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::FileUnreadable, path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace dres
