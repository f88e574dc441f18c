#pragma once

// Renames an OpenAI / open_clip text tower ("transformer.resblocks.N...",
// fused in_proj) to the Hugging Face layout read by load_weights. Archives
// already in that layout are copied through as float32.

#include <filesystem>
#include <optional>
#include <string>

#include "magnet/encoder.hpp"
#include "magnet/error.hpp"
#include "magnet/safetensors.hpp"

namespace magnet {

struct ConvertReport {
  std::string source_layout;  // "openai" or "hf"
  int n_layers = 0;
  int d_model = 0;
  int n_heads = 0;
  std::size_t tensors_written = 0;
};

namespace detail {

// Prefix in front of "token_embedding.weight" for OpenAI-style names, e.g.
// "" or "model." ; nullopt when the archive does not use that layout.
inline std::optional<std::string> openai_prefix(const SafeTensorReader& r) {
  static const std::string key = "token_embedding.weight";
  for (const auto& [name, info] : r.tensors()) {
    if (name.size() < key.size() || name.compare(name.size() - key.size(), key.size(), key) != 0) continue;
    if (name.find("embeddings.") != std::string::npos) continue;
    const std::string prefix = name.substr(0, name.size() - key.size());
    if (r.contains(prefix + "positional_embedding")) return prefix;
  }
  return std::nullopt;
}

}  // namespace detail

inline ConvertReport convert_weights(const std::filesystem::path& input, const std::filesystem::path& output,
                                     std::optional<int> n_heads = std::nullopt,
                                     std::optional<Activation> activation = std::nullopt) {
  SafeTensorReader in(input);
  SafeTensorWriter out;
  ConvertReport rep;
  auto copy = [&](const std::string& from, const std::string& to) {
    Tensor t = in.read(from);
    out.add(to, t.shape, t.data);
    ++rep.tensors_written;
    return t;
  };

  if (const auto prefix = detail::openai_prefix(in)) {
    rep.source_layout = "openai";
    const std::string& p = *prefix;
    const Tensor tok = copy(p + "token_embedding.weight", names::kTokenEmbedding);
    if (tok.shape.size() != 2) throw LoadError("token_embedding.weight must be 2-D");
    rep.d_model = static_cast<int>(tok.shape[1]);
    const auto d = tok.shape[1];
    copy(p + "positional_embedding", names::kPositionEmbedding);
    copy(p + "ln_final.weight", names::kFinalNormWeight);
    copy(p + "ln_final.bias", names::kFinalNormBias);
    auto block = [&](int i, const std::string& rest) { return p + "transformer.resblocks." + std::to_string(i) + "." + rest; };
    while (in.contains(block(rep.n_layers, "attn.in_proj_weight"))) {
      const int i = rep.n_layers;
      const Tensor w = in.read(block(i, "attn.in_proj_weight"));
      const Tensor b = in.read(block(i, "attn.in_proj_bias"));
      if (w.shape != std::vector<std::int64_t>{3 * d, d} || b.shape != std::vector<std::int64_t>{3 * d})
        throw LoadError("layer " + std::to_string(i) + ": in_proj must be [3d, d] with a [3d] bias");
      const char* parts[] = {"q_proj", "k_proj", "v_proj"};
      const auto n = static_cast<std::size_t>(d);
      for (std::size_t k = 0; k < 3; ++k) {
        const std::string base = std::string("self_attn.") + parts[k];
        out.add(names::layer(i, base + ".weight"), {d, d},
                std::span<const float>(w.data.data() + k * n * n, n * n));
        out.add(names::layer(i, base + ".bias"), {d}, std::span<const float>(b.data.data() + k * n, n));
        rep.tensors_written += 2;
      }
      copy(block(i, "attn.out_proj.weight"), names::layer(i, "self_attn.out_proj.weight"));
      copy(block(i, "attn.out_proj.bias"), names::layer(i, "self_attn.out_proj.bias"));
      copy(block(i, "ln_1.weight"), names::layer(i, "layer_norm1.weight"));
      copy(block(i, "ln_1.bias"), names::layer(i, "layer_norm1.bias"));
      copy(block(i, "ln_2.weight"), names::layer(i, "layer_norm2.weight"));
      copy(block(i, "ln_2.bias"), names::layer(i, "layer_norm2.bias"));
      copy(block(i, "mlp.c_fc.weight"), names::layer(i, "mlp.fc1.weight"));
      copy(block(i, "mlp.c_fc.bias"), names::layer(i, "mlp.fc1.bias"));
      copy(block(i, "mlp.c_proj.weight"), names::layer(i, "mlp.fc2.weight"));
      copy(block(i, "mlp.c_proj.bias"), names::layer(i, "mlp.fc2.bias"));
      ++rep.n_layers;
    }
    if (rep.n_layers == 0) throw LoadError("no transformer.resblocks found in " + input.string());
    // OpenAI and open_clip text towers use 64-wide heads and QuickGELU
    rep.n_heads = n_heads.value_or(rep.d_model % 64 == 0 ? rep.d_model / 64 : 1);
    out.set_metadata("hidden_act", to_string(activation.value_or(Activation::kQuickGelu)));
  } else {
    const auto tok = in.tensors().find(names::kTokenEmbedding);
    const bool scoped = tok != in.tensors().end();
    const std::string strip = scoped ? "" : "text_model.";
    bool any = false;
    for (const auto& [name, info] : in.tensors()) {
      const bool text = scoped ? name.rfind("text_model.", 0) == 0
                               : name.rfind("embeddings.", 0) == 0 || name.rfind("encoder.", 0) == 0 ||
                                     name.rfind("final_layer_norm.", 0) == 0;
      if (!text || name.find("position_ids") != std::string::npos) continue;
      copy(name, strip + name);
      any = true;
    }
    if (!any) throw LoadError("no CLIP text tower tensors recognized in " + input.string());
    rep.source_layout = "hf";
    const auto& meta = in.metadata();
    for (const char* key : {"hidden_act", "layer_norm_eps", "num_attention_heads"})
      if (auto it = meta.find(key); it != meta.end()) out.set_metadata(key, it->second);
    if (activation) out.set_metadata("hidden_act", to_string(*activation));
    if (n_heads) rep.n_heads = *n_heads;
    else if (auto it = meta.find("num_attention_heads"); it != meta.end()) rep.n_heads = std::stoi(it->second);
  }
  if (rep.n_heads > 0) out.set_metadata("num_attention_heads", std::to_string(rep.n_heads));
  out.write(output);

  // the result must load
  const LoadedEncoder check = load_weights(output);
  rep.n_layers = check.config.n_layers;
  rep.d_model = check.config.d_model;
  rep.n_heads = check.config.n_heads;
  return rep;
}

}  // namespace magnet
