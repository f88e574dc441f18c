#pragma once

// Row extraction from encoded probe prompts: the object word embedding, the
// first end-of-text embedding and the last padding embedding.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "magnet/concept_parser.hpp"
#include "magnet/encoder.hpp"
#include "magnet/error.hpp"

namespace magnet {

using Vec = std::vector<float>;

inline double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

inline double norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }

// Cosine similarity in double precision, clamped to [-1, 1]. Zero vectors
// give 0.
inline double cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw InputError("cosine of vectors with different dimensions");
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

inline double euclidean(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

// Word-index range [first, last] of the LAST whole-word occurrence of `object`
// in the sequence's words. Trailing punctuation on prompt words is ignored.
inline std::pair<int, int> find_object_words(const TokenSequence& seq, const std::vector<std::string>& object) {
  const auto words = detail::prompt_words(seq.cleaned_text);
  const int n = static_cast<int>(words.size());
  const int m = static_cast<int>(object.size());
  if (m == 0) throw ExtractionError("empty object");
  for (int s = n - m; s >= 0; --s) {
    bool ok = true;
    for (int k = 0; k < m && ok; ++k) ok = words[static_cast<std::size_t>(s + k)].norm == object[static_cast<std::size_t>(k)];
    if (ok) return {s, s + m - 1};
  }
  throw ExtractionError("object '" + ConceptPair::join(object) + "' not found in probe '" + seq.cleaned_text + "'");
}

// Token row of the object's last sub-token.
inline int object_row(const TokenSequence& seq, const std::vector<std::string>& object) {
  const auto [first, last] = find_object_words(seq, object);
  (void)first;
  return seq.word_spans[static_cast<std::size_t>(last)].core_end - 1;
}

// F(object, probe): the object's last sub-token hidden state.
inline Vec extract_word_embedding(const std::vector<std::string>& object, const EmbeddingSequence& probe) {
  return probe.row_copy(object_row(probe.source, object));
}

// G(probe): first end-of-text row.
inline Vec extract_eot(const EmbeddingSequence& probe) { return probe.row_copy(probe.eot_index); }

// H(probe): last padding row (index L - 1).
inline Vec extract_last_pad(const EmbeddingSequence& probe) { return probe.row_copy(kContextLength - 1); }

// cos(G, H) of one encoded probe.
inline double eot_pad_cosine(const EmbeddingSequence& probe) {
  return cosine(probe.row(probe.eot_index), probe.row(kContextLength - 1));
}

// Probe prompt text "{attribute} {object}" (or "{object}").
inline std::string probe_text(const std::vector<std::string>& attribute, const std::vector<std::string>& object) {
  const std::string a = ConceptPair::join(attribute);
  const std::string o = ConceptPair::join(object);
  return a.empty() ? o : a + " " + o;
}

}  // namespace magnet
