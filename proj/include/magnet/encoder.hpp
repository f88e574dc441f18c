#pragma once

// CPU forward pass of a CLIP-style causal text transformer (pre-LN blocks,
// final layer norm). Weights use the Hugging Face text-tower tensor names;
// see docs in README for the full list.

#include <cmath>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "magnet/error.hpp"
#include "magnet/safetensors.hpp"
#include "magnet/tokenizer.hpp"

namespace magnet {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<float, 1, Eigen::Dynamic>;

enum class Activation { kQuickGelu, kGelu };

inline std::string to_string(Activation a) { return a == Activation::kQuickGelu ? "quick_gelu" : "gelu"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "quick_gelu") return Activation::kQuickGelu;
  if (s == "gelu") return Activation::kGelu;
  throw InputError("unknown activation '" + s + "' (expected quick_gelu or gelu)");
}

struct EncoderConfig {
  int d_model = 768;
  int n_layers = 12;
  int n_heads = 12;
  int context_length = kContextLength;
  int vocab_size = 49408;
  int mlp_dim = 3072;
  float layernorm_epsilon = 1e-5f;
  Activation activation = Activation::kQuickGelu;

  void validate() const {
    if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || vocab_size <= 0 || mlp_dim <= 0)
      throw ValidationError("encoder config entries must be positive");
    if (d_model % n_heads != 0)
      throw ValidationError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " + std::to_string(n_heads));
    if (context_length != kContextLength) throw ValidationError("context_length must be 77");
    if (!(layernorm_epsilon > 0.0f)) throw ValidationError("layernorm_epsilon must be positive");
  }
};

struct LayerNormWeights {
  RowVector scale;
  RowVector shift;
};

struct LinearWeights {
  RowMatrix weight;  // [out, in]
  RowVector bias;    // [out]
};

struct EncoderLayerWeights {
  LinearWeights q_proj, k_proj, v_proj, out_proj;
  LayerNormWeights layer_norm1, layer_norm2;
  LinearWeights fc1, fc2;
};

struct EncoderWeights {
  RowMatrix token_embedding;     // [vocab, d]
  RowMatrix position_embedding;  // [77, d]
  std::vector<EncoderLayerWeights> layers;
  LayerNormWeights final_layer_norm;
};

// Per-token final hidden states of one prompt. Row roles: 0 = SOT,
// 1..eot_index-1 = words, eot_index = first EOT, after that padding.
struct EmbeddingSequence {
  RowMatrix hidden;
  int eot_index = 1;
  TokenSequence source;

  int rows() const { return static_cast<int>(hidden.rows()); }
  int dim() const { return static_cast<int>(hidden.cols()); }
  std::span<const float> row(int r) const {
    return {hidden.data() + static_cast<std::ptrdiff_t>(r) * hidden.cols(), static_cast<std::size_t>(hidden.cols())};
  }
  std::vector<float> row_copy(int r) const {
    auto s = row(r);
    return {s.begin(), s.end()};
  }
};

// Tensor names of the Hugging Face CLIP text tower.
namespace names {
inline std::string layer(int i, const std::string& rest) {
  return "text_model.encoder.layers." + std::to_string(i) + "." + rest;
}
inline const std::string kTokenEmbedding = "text_model.embeddings.token_embedding.weight";
inline const std::string kPositionEmbedding = "text_model.embeddings.position_embedding.weight";
inline const std::string kFinalNormWeight = "text_model.final_layer_norm.weight";
inline const std::string kFinalNormBias = "text_model.final_layer_norm.bias";
}  // namespace names

struct LoadOptions {
  std::optional<int> n_heads;
  std::optional<Activation> activation;
};

namespace detail {

class WeightSource {
 public:
  explicit WeightSource(SafeTensorReader& reader) : reader_(reader) {
    // Some exports drop the leading "text_model." scope.
    if (!reader_.contains(names::kTokenEmbedding) && reader_.contains(names::kTokenEmbedding.substr(11)))
      strip_prefix_ = true;
  }

  std::string resolve(const std::string& name) const { return strip_prefix_ ? name.substr(11) : name; }
  bool contains(const std::string& name) const { return reader_.contains(resolve(name)); }

  const TensorInfo& info(const std::string& name) const {
    const auto r = resolve(name);
    if (!reader_.contains(r)) throw LoadError("missing tensor '" + name + "' in " + reader_.path().string());
    return reader_.info(r);
  }

  RowMatrix matrix(const std::string& name, std::int64_t rows, std::int64_t cols) {
    check_shape(name, {rows, cols});
    Tensor t = reader_.read(resolve(name));
    check_finite(name, t.data);
    return Eigen::Map<const RowMatrix>(t.data.data(), rows, cols);
  }

  RowVector vector(const std::string& name, std::int64_t n) {
    check_shape(name, {n});
    Tensor t = reader_.read(resolve(name));
    check_finite(name, t.data);
    return Eigen::Map<const RowVector>(t.data.data(), n);
  }

 private:
  void check_shape(const std::string& name, const std::vector<std::int64_t>& want) const {
    const auto& got = info(name).shape;
    if (got != want) {
      auto fmt = [](const std::vector<std::int64_t>& s) {
        std::string out = "[";
        for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
        return out + "]";
      };
      throw LoadError("tensor '" + name + "' has shape " + fmt(got) + ", expected " + fmt(want));
    }
  }
  static void check_finite(const std::string& name, const std::vector<float>& v) {
    for (float x : v)
      if (!std::isfinite(x)) throw ValidationError("tensor '" + name + "' contains NaN or Inf");
  }

  SafeTensorReader& reader_;
  bool strip_prefix_ = false;
};

inline void layer_norm(const RowMatrix& x, const LayerNormWeights& ln, float eps, RowMatrix& out) {
  out.resize(x.rows(), x.cols());
  const float inv_d = 1.0f / static_cast<float>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    const float mean = row.sum() * inv_d;
    const float var = (row.array() - mean).square().sum() * inv_d;
    const float inv_std = 1.0f / std::sqrt(var + eps);
    out.row(r) = ((row.array() - mean) * inv_std * ln.scale.array() + ln.shift.array()).matrix();
  }
}

inline void linear(const RowMatrix& x, const LinearWeights& w, RowMatrix& out) {
  out.noalias() = x * w.weight.transpose();
  out.rowwise() += w.bias;
}

}  // namespace detail

struct LoadedEncoder {
  EncoderConfig config;
  EncoderWeights weights;
};

// Infers the config from tensor shapes (heads and activation come from the
// archive metadata, the options, or the CLIP default of 64-wide heads).
inline LoadedEncoder load_weights(const std::filesystem::path& archive_path, const LoadOptions& options = {}) {
  SafeTensorReader reader(archive_path);
  detail::WeightSource src(reader);
  LoadedEncoder out;
  EncoderConfig& cfg = out.config;

  const auto& tok = src.info(names::kTokenEmbedding);
  if (tok.shape.size() != 2) throw LoadError("token embedding must be 2-D");
  cfg.vocab_size = static_cast<int>(tok.shape[0]);
  cfg.d_model = static_cast<int>(tok.shape[1]);
  const auto& pos = src.info(names::kPositionEmbedding);
  if (pos.shape.size() != 2 || pos.shape[0] != kContextLength)
    throw LoadError("position embedding must have 77 rows");

  int n_layers = 0;
  while (src.contains(names::layer(n_layers, "layer_norm1.weight")) ||
         src.contains(names::layer(n_layers, "self_attn.q_proj.weight")))
    ++n_layers;
  if (n_layers == 0) throw LoadError("no transformer layers found in " + archive_path.string());
  cfg.n_layers = n_layers;
  const auto& fc1 = src.info(names::layer(0, "mlp.fc1.weight"));
  if (fc1.shape.size() != 2) throw LoadError("mlp.fc1.weight must be 2-D");
  cfg.mlp_dim = static_cast<int>(fc1.shape[0]);

  const auto& meta = reader.metadata();
  if (options.n_heads) {
    cfg.n_heads = *options.n_heads;
  } else if (auto it = meta.find("num_attention_heads"); it != meta.end()) {
    cfg.n_heads = std::stoi(it->second);
  } else {
    cfg.n_heads = cfg.d_model % 64 == 0 ? cfg.d_model / 64 : 1;
  }
  if (options.activation) {
    cfg.activation = *options.activation;
  } else if (auto it = meta.find("hidden_act"); it != meta.end()) {
    cfg.activation = activation_from_string(it->second);
  }
  if (auto it = meta.find("layer_norm_eps"); it != meta.end()) cfg.layernorm_epsilon = std::stof(it->second);
  cfg.validate();

  const int d = cfg.d_model;
  auto& w = out.weights;
  w.token_embedding = src.matrix(names::kTokenEmbedding, cfg.vocab_size, d);
  w.position_embedding = src.matrix(names::kPositionEmbedding, kContextLength, d);
  w.layers.resize(static_cast<std::size_t>(n_layers));
  auto lin = [&](int i, const std::string& base, int rows, int cols) {
    return LinearWeights{src.matrix(names::layer(i, base + ".weight"), rows, cols),
                         src.vector(names::layer(i, base + ".bias"), rows)};
  };
  auto norm = [&](int i, const std::string& base) {
    return LayerNormWeights{src.vector(names::layer(i, base + ".weight"), d), src.vector(names::layer(i, base + ".bias"), d)};
  };
  for (int i = 0; i < n_layers; ++i) {
    auto& L = w.layers[static_cast<std::size_t>(i)];
    L.q_proj = lin(i, "self_attn.q_proj", d, d);
    L.k_proj = lin(i, "self_attn.k_proj", d, d);
    L.v_proj = lin(i, "self_attn.v_proj", d, d);
    L.out_proj = lin(i, "self_attn.out_proj", d, d);
    L.layer_norm1 = norm(i, "layer_norm1");
    L.layer_norm2 = norm(i, "layer_norm2");
    L.fc1 = lin(i, "mlp.fc1", cfg.mlp_dim, d);
    L.fc2 = lin(i, "mlp.fc2", d, cfg.mlp_dim);
  }
  w.final_layer_norm = LayerNormWeights{src.vector(names::kFinalNormWeight, d), src.vector(names::kFinalNormBias, d)};
  return out;
}

// Checks that in-memory weights agree with the config (used for weights built
// without an archive, e.g. in tests).
inline void validate_weights(const EncoderWeights& w, const EncoderConfig& cfg) {
  cfg.validate();
  const int d = cfg.d_model;
  auto expect = [](bool ok, const std::string& what) {
    if (!ok) throw ValidationError("weight shape mismatch: " + what);
  };
  expect(w.token_embedding.rows() == cfg.vocab_size && w.token_embedding.cols() == d, "token_embedding");
  expect(w.position_embedding.rows() == kContextLength && w.position_embedding.cols() == d, "position_embedding");
  expect(static_cast<int>(w.layers.size()) == cfg.n_layers, "layer count");
  for (const auto& L : w.layers) {
    for (const auto* lw : {&L.q_proj, &L.k_proj, &L.v_proj, &L.out_proj})
      expect(lw->weight.rows() == d && lw->weight.cols() == d && lw->bias.size() == d, "attention projection");
    expect(L.fc1.weight.rows() == cfg.mlp_dim && L.fc1.weight.cols() == d && L.fc1.bias.size() == cfg.mlp_dim, "fc1");
    expect(L.fc2.weight.rows() == d && L.fc2.weight.cols() == cfg.mlp_dim && L.fc2.bias.size() == d, "fc2");
    expect(L.layer_norm1.scale.size() == d && L.layer_norm2.scale.size() == d, "layer norm");
  }
  expect(w.final_layer_norm.scale.size() == d && w.final_layer_norm.shift.size() == d, "final layer norm");
}

// Full forward pass. Position i attends to positions <= i only; disallowed
// scores receive the most negative finite float before the softmax.
inline EmbeddingSequence encode(const TokenSequence& seq, const EncoderWeights& w, const EncoderConfig& cfg) {
  const int L = kContextLength;
  const int d = cfg.d_model;
  const int heads = cfg.n_heads;
  const int hd = d / heads;
  for (TokenId id : seq.ids)
    if (id < 0 || id >= cfg.vocab_size)
      throw InputError("token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(cfg.vocab_size));

  RowMatrix x(L, d);
  for (int i = 0; i < L; ++i) x.row(i) = w.token_embedding.row(seq.ids[static_cast<std::size_t>(i)]) + w.position_embedding.row(i);

  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
  const float masked = std::numeric_limits<float>::lowest();
  RowMatrix h, q, k, v, ctx(L, d), proj, mlp;
  RowMatrix scores(L, L);
  for (const auto& layer : w.layers) {
    detail::layer_norm(x, layer.layer_norm1, cfg.layernorm_epsilon, h);
    detail::linear(h, layer.q_proj, q);
    q *= scale;
    detail::linear(h, layer.k_proj, k);
    detail::linear(h, layer.v_proj, v);
    for (int head = 0; head < heads; ++head) {
      const auto qh = q.middleCols(head * hd, hd);
      const auto kh = k.middleCols(head * hd, hd);
      scores.noalias() = qh * kh.transpose();
      for (int i = 0; i < L; ++i) {
        for (int j = i + 1; j < L; ++j) scores(i, j) += masked;
        const float mx = scores.row(i).maxCoeff();
        scores.row(i) = (scores.row(i).array() - mx).exp().matrix();
        scores.row(i) /= scores.row(i).sum();
      }
      ctx.middleCols(head * hd, hd).noalias() = scores * v.middleCols(head * hd, hd);
    }
    detail::linear(ctx, layer.out_proj, proj);
    x += proj;

    detail::layer_norm(x, layer.layer_norm2, cfg.layernorm_epsilon, h);
    detail::linear(h, layer.fc1, mlp);
    if (cfg.activation == Activation::kQuickGelu) {
      mlp = (mlp.array() * (1.0f / (1.0f + (-1.702f * mlp.array()).exp()))).matrix();
    } else {
      mlp = (0.5f * mlp.array() * (1.0f + (mlp.array() * static_cast<float>(M_SQRT1_2)).unaryExpr([](float t) { return std::erf(t); }))).matrix();
    }
    detail::linear(mlp, layer.fc2, proj);
    x += proj;
  }

  EmbeddingSequence out;
  detail::layer_norm(x, w.final_layer_norm, cfg.layernorm_epsilon, out.hidden);
  out.eot_index = seq.eot_index;
  out.source = seq;
  return out;
}

}  // namespace magnet
