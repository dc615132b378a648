#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dres/annotation.hpp"
#include "dres/autograd.hpp"
#include "dres/core.hpp"
#include "dres/superpoint.hpp"
#include "dres/tensor.hpp"

namespace dres {

struct ModelConfig {
  int d = 32;           // model width
  int e = 32;           // token feature width
  int c = 16;           // pooled point feature width
  int num_layers = 6;
  int heads = 4;
  int ffn_hidden = 128;
  double binarize_threshold = 0.0;  // on logits
  double norm_eps = 1e-5;

  /// Throws ShapeMismatch when the widths are inconsistent.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Named parameter tensors. Names:
///   proj.w1, proj.w2 (c x d), query.w3 (e x d)
///   layers.<i>.{cross,self}.{norm.gamma,norm.beta,wq,bq,wk,bk,wv,bv,wo,bo}
///   layers.<i>.ffn.{norm.gamma,norm.beta,w1,b1,w2,b2}
///   score.{w1,b1,w2,b2} (d -> d -> 1)
struct ModelState {
  std::map<std::string, Matrix> params;

  const Matrix& at(const std::string& name) const;
  Matrix& at(const std::string& name);
  std::size_t num_scalars() const;
};

/// Uniform(+-1/sqrt(fan_in)) weights, zero biases, unit norm gains; each tensor drawn from
/// its own stream derived from (seed, name).
ModelState init_model(const ModelConfig& cfg, std::uint64_t seed);

/// Names of the parameters init_model creates for `cfg`, in sorted order.
std::vector<std::string> parameter_names(const ModelConfig& cfg);

struct AttentionRecord {
  int layer;
  bool cross;
  int head;
  Matrix weights;  // queries x keys, rows sum to 1
};

struct ForwardTrace {
  std::vector<Matrix> queries;  // Q_0..Q_Nl, each (L+2) x d
  std::vector<Matrix> logits;   // per snapshot, (L+2) x N_s
  std::vector<Matrix> scores;   // per snapshot, (L+2) x 1 in [0,1]
  std::vector<AttentionRecord> attention;  // only when requested
};

Matrix init_queries(const Matrix& token_features, const Matrix& w3);

Matrix decoder_layer(const Matrix& queries, const Matrix& visual, const ModelState& state, int layer,
                     const ModelConfig& cfg, std::vector<AttentionRecord>* attention = nullptr);

/// Q_0 and N_l decoder layers; mask logits Q F_sp^T and scores for every snapshot.
ForwardTrace forward(const Matrix& visual, const Matrix& superpoint, const Matrix& token_features,
                     const ModelConfig& cfg, const ModelState& state, bool record_attention = false);

/// Same, starting from pooled features so W1/W2 are applied internally.
ForwardTrace forward_pooled(const Matrix& pooled, const Matrix& token_features,
                            const ModelConfig& cfg, const ModelState& state);

/// Final-layer logits at each unit's query row, binarized and broadcast to points.
PhraseMaskSet predict_masks(const ForwardTrace& trace, const AnnotatedDescription& desc,
                            const SuperpointPartition& part, double threshold = 0.0);

namespace detail {

/// Tape variables of a forward pass; used by the gradient path.
struct ForwardGraph {
  std::vector<ag::Var> queries;
  std::vector<ag::Var> logits;
  std::vector<ag::Var> scores;
};

using ParamVars = std::map<std::string, ag::Var>;

ParamVars bind_parameters(ag::Tape& tape, const ModelState& state);

ForwardGraph build_forward(ag::Tape& tape, const ParamVars& params, ag::Var visual,
                           ag::Var superpoint, ag::Var tokens, const ModelConfig& cfg,
                           std::vector<AttentionRecord>* attention);

}  // namespace detail

// Checkpoints: "DRESCKPT", u32 version, u32-length JSON config, u32 tensor count, then per
// tensor u32-length name, u32 rows, u32 cols, rows*cols little-endian f64 (row-major).
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     const ModelState& state);
std::pair<ModelConfig, ModelState> load_checkpoint(const std::filesystem::path& path);

std::string checkpoint_bytes(const ModelConfig& cfg, const ModelState& state);
std::pair<ModelConfig, ModelState> parse_checkpoint(const std::string& bytes);

}  // namespace dres
