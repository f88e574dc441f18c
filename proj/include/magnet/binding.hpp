#pragma once

// Binding-vector estimation and prompt-embedding patching.
//
// For concept i with attribute A_i and object E_i, and neighbor objects B_k
// (the top-K candidates closest to E_i's bare word embedding):
//
//   v_pos_i = mean_k [ F(B_k, "A_i B_k") - F(B_k, "B_k") ]
//   v_neg_i = agg_{j != i} mean_k [ F(B_k, "A_j B_k") - F(B_k, "B_k") ]
//   omega_i = cos(G("A_i E_i"), H("A_i E_i"))
//   alpha_i = exp(lambda - omega_i),  beta_i = 1 - omega_i^2
//
// and the object row of the full prompt embedding becomes
//   c + alpha_i * v_pos_i - beta_i * v_neg_i.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "magnet/concept_parser.hpp"
#include "magnet/error.hpp"
#include "magnet/neighbor_index.hpp"
#include "magnet/parallel.hpp"
#include "magnet/probes.hpp"
#include "magnet/safetensors.hpp"
#include "magnet/text_encoder.hpp"

namespace magnet {

enum class PatchMode { kLastSubtoken, kAllSubtokens };
enum class NegativeAggregation { kMean, kSum };

inline std::string to_string(PatchMode m) { return m == PatchMode::kLastSubtoken ? "last_subtoken" : "all_subtokens"; }
inline std::string to_string(NegativeAggregation a) { return a == NegativeAggregation::kMean ? "mean" : "sum"; }

inline PatchMode patch_mode_from_string(const std::string& s) {
  if (s == "last_subtoken") return PatchMode::kLastSubtoken;
  if (s == "all_subtokens") return PatchMode::kAllSubtokens;
  throw InputError("unknown patch mode '" + s + "'");
}

inline NegativeAggregation aggregation_from_string(const std::string& s) {
  if (s == "mean") return NegativeAggregation::kMean;
  if (s == "sum") return NegativeAggregation::kSum;
  throw InputError("unknown negative aggregation '" + s + "'");
}

struct MagnetConfig {
  double lambda = 0.6;
  int k_neighbors = 5;
  PatchMode patch_mode = PatchMode::kLastSubtoken;
  NegativeAggregation negative_aggregation = NegativeAggregation::kMean;
  // Manual strengths replace the adaptive ones for every concept when set.
  std::optional<double> alpha_override;
  std::optional<double> beta_override;
  // object text -> neighbor names; bypasses top-K retrieval for that object
  std::map<std::string, std::vector<std::string>> semantic_neighbors;
  unsigned threads = 1;

  void validate() const {
    if (!(lambda >= 0.0)) throw ValidationError("lambda must be >= 0");
    if (k_neighbors < 1) throw ValidationError("k_neighbors must be >= 1");
  }
};

// Parses "object: neighbor, neighbor, ..." lines.
inline std::map<std::string, std::vector<std::string>> load_semantic_neighbors(const std::filesystem::path& path) {
  std::map<std::string, std::vector<std::string>> out;
  std::size_t line_no = 0;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw FormatError(path.string(), line_no, "expected 'object: neighbor, ...'");
    const std::string object = clean_text(line.substr(0, colon));
    std::vector<std::string> names;
    std::size_t pos = colon + 1;
    while (pos <= line.size()) {
      auto comma = line.find(',', pos);
      if (comma == std::string::npos) comma = line.size();
      const std::string name = clean_text(line.substr(pos, comma - pos));
      if (!name.empty()) names.push_back(name);
      pos = comma + 1;
    }
    if (object.empty() || names.empty()) throw FormatError(path.string(), line_no, "empty object or neighbor list");
    out[object] = std::move(names);
  }
  return out;
}

struct ProbePrompts {
  std::string unconditional;
  std::string positive;
  std::vector<std::string> negatives;
};

// Decontextualized prompts for concept i: "E_i", "A_i E_i", and "A_j E_i"
// for every j != i.
inline ProbePrompts make_probe_prompts(const ConceptSet& concepts, std::size_t i) {
  const auto& c = concepts.pairs.at(i);
  ProbePrompts p;
  p.unconditional = probe_text({}, c.object);
  p.positive = probe_text(c.attribute, c.object);
  for (std::size_t j = 0; j < concepts.size(); ++j)
    if (j != i) p.negatives.push_back(probe_text(concepts.pairs[j].attribute, c.object));
  return p;
}

struct BindingEntry {
  ConceptPair concept_pair;
  Vec v_pos;
  Vec v_neg;
  double alpha = 1.0;
  double beta = 0.0;
  std::optional<double> omega;  // absent for attribute-less concepts
  bool manual_strength = false;
  // Token rows of the object in the full prompt: [target_start, target_last].
  int target_start = -1;
  int target_last = -1;
  std::vector<std::string> neighbors_used;
  std::vector<double> neighbor_cosines;
};

struct BindingPlan {
  std::vector<BindingEntry> entries;
  int dim = 0;
};

inline double adaptive_alpha(double omega, double lambda) { return std::exp(lambda - omega); }
inline double adaptive_beta(double omega) { return 1.0 - omega * omega; }

// Token rows [first, last] of a concept's object in an already tokenized
// prompt, keyed by the concept's word indices.
inline std::pair<int, int> concept_rows(const TokenSequence& seq, const ConceptPair& c) {
  const int n = static_cast<int>(seq.word_spans.size());
  if (c.object_first_index < 0 || c.object_word_index >= n || c.object_first_index > c.object_word_index)
    throw ValidationError("concept '" + c.object_text() + "' word indices do not fit the prompt");
  return {seq.word_spans[static_cast<std::size_t>(c.object_first_index)].start,
          seq.word_spans[static_cast<std::size_t>(c.object_word_index)].core_end - 1};
}

// Estimates per-concept binding vectors and strengths. `index` may be null, in
// which case each object is its own single neighbor.
inline BindingPlan estimate_vectors(const ConceptSet& concepts, const CandidateIndex* index, const MagnetConfig& config,
                                    ProbeCache& cache) {
  config.validate();
  if (concepts.empty()) throw InputError("estimate_vectors needs at least one concept");
  const TextEncoder& encoder = cache.encoder();
  const int d = encoder.dim();
  if (index && index->dim() != d) throw ValidationError("candidate index dimension does not match the encoder");
  const std::size_t M = concepts.size();

  BindingPlan plan;
  plan.dim = d;
  plan.entries.resize(M);

  // Neighbors from each object's unconditional word embedding.
  std::vector<std::string> uc_prompts(M);
  for (std::size_t i = 0; i < M; ++i) uc_prompts[i] = probe_text({}, concepts.pairs[i].object);
  parallel_for(M, config.threads, [&](std::size_t i) { cache.get(uc_prompts[i]); });
  std::vector<std::vector<std::vector<std::string>>> neighbor_words(M);
  for (std::size_t i = 0; i < M; ++i) {
    auto& e = plan.entries[i];
    e.concept_pair = concepts.pairs[i];
    const std::string obj = concepts.pairs[i].object_text();
    if (auto it = config.semantic_neighbors.find(obj); it != config.semantic_neighbors.end()) {
      e.neighbors_used = it->second;
    } else if (index) {
      const Vec uc = extract_word_embedding(concepts.pairs[i].object, *cache.get(uc_prompts[i]));
      for (const auto& nb : top_k(uc, static_cast<std::size_t>(config.k_neighbors), *index)) {
        e.neighbors_used.push_back(nb.name);
        e.neighbor_cosines.push_back(nb.cosine);
      }
    } else {
      e.neighbors_used = {obj};
    }
    for (const auto& name : e.neighbors_used) neighbor_words[i].push_back(detail::split_words(name));
  }

  // Encode every probe once, in parallel.
  std::set<std::string> probe_set;
  for (std::size_t i = 0; i < M; ++i) {
    const auto& ci = concepts.pairs[i];
    if (ci.has_attribute()) probe_set.insert(probe_text(ci.attribute, ci.object));
    for (const auto& nb : neighbor_words[i]) {
      probe_set.insert(probe_text({}, nb));
      for (std::size_t j = 0; j < M; ++j)
        if (concepts.pairs[j].has_attribute()) probe_set.insert(probe_text(concepts.pairs[j].attribute, nb));
    }
  }
  const std::vector<std::string> probes(probe_set.begin(), probe_set.end());
  parallel_for(probes.size(), config.threads, [&](std::size_t p) { cache.get(probes[p]); });

  auto word = [&](const std::vector<std::string>& obj, const std::vector<std::string>& attr) {
    return extract_word_embedding(obj, *cache.get(probe_text(attr, obj)));
  };
  // mean_k [F(B_k, "A B_k") - F(B_k, "B_k")], accumulated in double
  auto neighbor_delta = [&](std::size_t i, const std::vector<std::string>& attr) {
    std::vector<double> acc(static_cast<std::size_t>(d), 0.0);
    for (const auto& nb : neighbor_words[i]) {
      const Vec with = word(nb, attr);
      const Vec without = word(nb, {});
      for (int c = 0; c < d; ++c)
        acc[static_cast<std::size_t>(c)] += static_cast<double>(with[static_cast<std::size_t>(c)]) -
                                            static_cast<double>(without[static_cast<std::size_t>(c)]);
    }
    const double K = static_cast<double>(neighbor_words[i].size());
    for (auto& x : acc) x /= K;
    return acc;
  };
  auto to_float = [](const std::vector<double>& v) {
    Vec out(v.size());
    for (std::size_t c = 0; c < v.size(); ++c) out[c] = static_cast<float>(v[c]);
    return out;
  };

  for (std::size_t i = 0; i < M; ++i) {
    auto& e = plan.entries[i];
    const auto& ci = concepts.pairs[i];
    e.v_pos = ci.has_attribute() ? to_float(neighbor_delta(i, ci.attribute)) : Vec(static_cast<std::size_t>(d), 0.0f);

    std::vector<double> neg(static_cast<std::size_t>(d), 0.0);
    for (std::size_t j = 0; j < M; ++j) {
      // an attribute-less negative concept equals the pivot and contributes zero
      if (j == i || !concepts.pairs[j].has_attribute()) continue;
      const auto delta = neighbor_delta(i, concepts.pairs[j].attribute);
      for (int c = 0; c < d; ++c) neg[static_cast<std::size_t>(c)] += delta[static_cast<std::size_t>(c)];
    }
    if (M > 1 && config.negative_aggregation == NegativeAggregation::kMean)
      for (auto& x : neg) x /= static_cast<double>(M - 1);
    e.v_neg = to_float(neg);

    if (ci.has_attribute()) {
      e.omega = eot_pad_cosine(*cache.get(probe_text(ci.attribute, ci.object)));
      e.alpha = adaptive_alpha(*e.omega, config.lambda);
      e.beta = adaptive_beta(*e.omega);
    } else {
      e.alpha = 1.0;
      e.beta = 0.0;
    }
    if (config.alpha_override || config.beta_override) e.manual_strength = true;
    if (config.alpha_override) e.alpha = *config.alpha_override;
    if (config.beta_override) e.beta = *config.beta_override;
  }

  if (!concepts.source_prompt.empty()) {
    const TokenSequence full = encoder.tokenize(concepts.source_prompt);
    for (std::size_t i = 0; i < M; ++i)
      std::tie(plan.entries[i].target_start, plan.entries[i].target_last) = concept_rows(full, concepts.pairs[i]);
  }
  return plan;
}

inline BindingPlan estimate_vectors(const ConceptSet& concepts, const CandidateIndex* index, const MagnetConfig& config,
                                    const TextEncoder& encoder) {
  ProbeCache cache(encoder);
  return estimate_vectors(concepts, index, config, cache);
}

// Rows of the full embedding patched for one entry.
inline std::vector<int> patched_rows(const BindingEntry& e, PatchMode mode) {
  if (mode == PatchMode::kLastSubtoken) return {e.target_last};
  std::vector<int> rows;
  for (int r = e.target_start; r <= e.target_last; ++r) rows.push_back(r);
  return rows;
}

// Returns a copy of `full` with each concept's object row(s) replaced by
// row + alpha * v_pos - beta * v_neg. All other rows are untouched.
inline EmbeddingSequence apply_plan(const EmbeddingSequence& full, const BindingPlan& plan, const MagnetConfig& config) {
  EmbeddingSequence out = full;
  std::set<int> claimed;
  for (const auto& e : plan.entries) {
    if (static_cast<int>(e.v_pos.size()) != full.dim() || static_cast<int>(e.v_neg.size()) != full.dim())
      throw ValidationError("binding vector dimension does not match the embedding");
    if (e.target_start < 1 || e.target_last < e.target_start || e.target_last >= full.eot_index)
      throw ValidationError("target span of '" + e.concept_pair.object_text() + "' lies outside the word rows");
    for (int r = e.target_start; r <= e.target_last; ++r)
      if (!claimed.insert(r).second)
        throw ValidationError("target spans overlap at row " + std::to_string(r));
  }
  for (const auto& e : plan.entries) {
    for (int r : patched_rows(e, config.patch_mode)) {
      for (int c = 0; c < full.dim(); ++c) {
        const double delta = e.alpha * static_cast<double>(e.v_pos[static_cast<std::size_t>(c)]) -
                             e.beta * static_cast<double>(e.v_neg[static_cast<std::size_t>(c)]);
        if (delta != 0.0) out.hidden(r, c) = static_cast<float>(static_cast<double>(full.hidden(r, c)) + delta);
      }
    }
  }
  return out;
}

struct MagnetResult {
  EmbeddingSequence original;
  EmbeddingSequence patched;
  BindingPlan plan;
  ConceptSet concepts;
  std::vector<std::string> warnings;
};

// parse (or override) -> tokenize -> encode -> estimate -> patch.
inline MagnetResult run_magnet(const std::string& prompt, const MagnetConfig& config, const Lexicon& lexicon,
                               const CandidateIndex* index, const TextEncoder& encoder,
                               const std::optional<std::string>& concepts_override = std::nullopt) {
  config.validate();
  MagnetResult r;
  r.concepts = concepts_override ? parse_override(*concepts_override, prompt) : parse(prompt, lexicon);
  r.original = encoder.encode(prompt);
  if (r.concepts.empty()) {
    r.warnings.push_back("no concepts found in prompt; embedding left unchanged");
    r.patched = r.original;
    r.plan.dim = encoder.dim();
    return r;
  }
  ProbeCache cache(encoder);
  r.plan = estimate_vectors(r.concepts, index, config, cache);
  r.patched = apply_plan(r.original, r.plan, config);
  return r;
}

inline nlohmann::json plan_to_json(const MagnetResult& r, const MagnetConfig& config, const std::string& fingerprint) {
  nlohmann::json concepts = nlohmann::json::array();
  for (const auto& e : r.plan.entries) {
    const auto& c = e.concept_pair;
    concepts.push_back({{"attribute", c.has_attribute() ? nlohmann::json(c.attribute_text()) : nlohmann::json(nullptr)},
                        {"object", c.object_text()},
                        {"object_word_index", c.object_word_index},
                        {"inferred", c.inferred},
                        {"alpha", e.alpha},
                        {"beta", e.beta},
                        {"omega", e.omega ? nlohmann::json(*e.omega) : nlohmann::json(nullptr)},
                        {"manual_strength", e.manual_strength},
                        {"target_rows", patched_rows(e, config.patch_mode)},
                        {"neighbors_used", e.neighbors_used},
                        {"neighbor_cosines", e.neighbor_cosines}});
  }
  nlohmann::json cfg = {{"lambda", config.lambda},
                        {"k_neighbors", config.k_neighbors},
                        {"patch_mode", to_string(config.patch_mode)},
                        {"negative_aggregation", to_string(config.negative_aggregation)}};
  if (config.alpha_override) cfg["alpha_override"] = *config.alpha_override;
  if (config.beta_override) cfg["beta_override"] = *config.beta_override;
  return {{"prompt", r.concepts.source_prompt.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.concepts.source_prompt)},
          {"concepts", concepts},
          {"config", cfg},
          {"warnings", r.warnings},
          {"encoder_fingerprint", fingerprint}};
}

inline std::vector<float> as_vector(const EmbeddingSequence& e) {
  return {e.hidden.data(), e.hidden.data() + e.hidden.size()};
}

// Writes a [1, 77, d] "prompt_embeds" archive (optionally with the original)
// plus its JSON sidecar. Both files are pure functions of their inputs.
inline void write_embedding_archive(const std::filesystem::path& path, const EmbeddingSequence& embeds,
                                    const EmbeddingSequence* original, const nlohmann::json& sidecar,
                                    const BindingPlan* plan = nullptr) {
  SafeTensorWriter w;
  const std::vector<std::int64_t> shape = {1, kContextLength, embeds.dim()};
  const auto main = as_vector(embeds);
  w.add("prompt_embeds", shape, main);
  if (original) {
    const auto orig = as_vector(*original);
    w.add("prompt_embeds_original", shape, orig);
  }
  if (plan && !plan->entries.empty()) {
    std::vector<float> pos, neg;
    for (const auto& e : plan->entries) {
      pos.insert(pos.end(), e.v_pos.begin(), e.v_pos.end());
      neg.insert(neg.end(), e.v_neg.begin(), e.v_neg.end());
    }
    const std::vector<std::int64_t> vshape = {static_cast<std::int64_t>(plan->entries.size()), plan->dim};
    w.add("binding_vectors_pos", vshape, pos);
    w.add("binding_vectors_neg", vshape, neg);
  }
  w.set_metadata("format", "magnet-embedding");
  w.write(path);
  std::ofstream out(sidecar_path(path));
  if (!out) throw IoError("cannot write " + sidecar_path(path).string());
  out << sidecar.dump(2) << "\n";
}

// Reads "prompt_embeds" (and the original, when present) back into sequences.
// Token metadata is not stored in the archive; only the matrices round-trip.
inline std::pair<RowMatrix, std::optional<RowMatrix>> read_embedding_archive(const std::filesystem::path& path) {
  SafeTensorReader reader(path);
  auto load = [&](const std::string& name) {
    Tensor t = reader.read(name);
    if (t.shape.size() != 3 || t.shape[0] != 1 || t.shape[1] != kContextLength)
      throw FormatError(path.string(), 0, name + " must have shape [1, 77, d]");
    return RowMatrix(Eigen::Map<const RowMatrix>(t.data.data(), kContextLength, t.shape[2]));
  };
  std::optional<RowMatrix> original;
  if (reader.contains("prompt_embeds_original")) original = load("prompt_embeds_original");
  return {load("prompt_embeds"), std::move(original)};
}

}  // namespace magnet
