#pragma once

// Attribute-object concept extraction. A lexicon-driven pattern grammar
// recognizes "[determiner]? adjective+ noun+" groups; bare noun groups become
// attribute-less concepts. An explicit "attr:object,..." override bypasses the
// grammar entirely.

#include <cctype>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "magnet/error.hpp"
#include "magnet/tokenizer.hpp"

namespace magnet {

struct Lexicon {
  std::set<std::string> adjectives;
  std::set<std::string> nouns;
  std::set<std::string> stopwords;

  void validate() const {
    for (const auto& w : adjectives) {
      if (nouns.count(w)) throw ValidationError("lexicon word '" + w + "' is both adjective and noun");
      if (stopwords.count(w)) throw ValidationError("lexicon word '" + w + "' is both adjective and stopword");
    }
    for (const auto& w : nouns)
      if (stopwords.count(w)) throw ValidationError("lexicon word '" + w + "' is both noun and stopword");
  }

  bool is_adjective(const std::string& w) const { return adjectives.count(w) != 0; }
  bool is_stopword(const std::string& w) const { return stopwords.count(w) != 0; }

  // Exact match first, then common English plural forms.
  bool is_noun(const std::string& w) const {
    if (nouns.count(w)) return true;
    static const std::vector<std::pair<std::string, std::string>> irregular = {
        {"mice", "mouse"}, {"geese", "goose"}, {"children", "child"}, {"men", "man"}, {"women", "woman"},
        {"people", "person"}, {"teeth", "tooth"}, {"feet", "foot"}, {"oxen", "ox"}};
    for (const auto& [plural, singular] : irregular)
      if (w == plural) return nouns.count(singular) != 0;
    auto ends = [&](std::string_view suffix) {
      return w.size() > suffix.size() && w.compare(w.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    auto stem = [&](std::size_t cut, std::string_view add) { return nouns.count(w.substr(0, w.size() - cut) + std::string(add)) != 0; };
    if (ends("ies") && stem(3, "y")) return true;
    if (ends("ves") && (stem(3, "f") || stem(3, "fe"))) return true;
    if (ends("es") && stem(2, "")) return true;
    if (ends("s") && !ends("ss") && stem(1, "")) return true;
    return false;
  }
};

inline std::set<std::string> load_word_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open word list: " + path.string());
  std::set<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto b = line.find_first_not_of(" \t");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto e = line.find_last_not_of(" \t");
    words.insert(clean_text(line.substr(b, e - b + 1)));
  }
  return words;
}

// Reads adjectives.txt, nouns.txt and stopwords.txt from a directory.
inline Lexicon load_lexicon(const std::filesystem::path& dir) {
  Lexicon lex{load_word_list(dir / "adjectives.txt"), load_word_list(dir / "nouns.txt"),
              load_word_list(dir / "stopwords.txt")};
  lex.validate();
  return lex;
}

struct ConceptPair {
  std::vector<std::string> attribute;  // empty = unconditional concept
  std::vector<std::string> object;
  int object_word_index = -1;  // head (last) word of the object in the prompt
  int object_first_index = -1;
  bool inferred = false;  // object includes words not in the noun lexicon

  bool has_attribute() const { return !attribute.empty(); }
  std::string attribute_text() const { return join(attribute); }
  std::string object_text() const { return join(object); }

  static std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
    return out;
  }
  bool operator==(const ConceptPair&) const = default;
};

struct ConceptSet {
  std::vector<ConceptPair> pairs;
  std::string source_prompt;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

namespace detail {

struct PromptWord {
  std::string norm;        // punctuation-trimmed form used for lexicon lookup
  bool break_after = false;  // trailing clause punctuation ends any phrase
};

inline std::vector<PromptWord> prompt_words(std::string_view prompt) {
  const std::string cleaned = clean_text(prompt);
  std::vector<PromptWord> words;
  std::size_t pos = 0;
  while (pos < cleaned.size()) {
    std::size_t sp = cleaned.find(' ', pos);
    if (sp == std::string::npos) sp = cleaned.size();
    std::string w = cleaned.substr(pos, sp - pos);
    pos = sp + 1;
    auto is_punct = [](unsigned char c) { return c < 0x80 && !std::isalnum(c) && c != '-' && c != '\''; };
    PromptWord pw;
    std::size_t b = 0, e = w.size();
    while (b < e && is_punct(static_cast<unsigned char>(w[b]))) ++b;
    while (e > b && (is_punct(static_cast<unsigned char>(w[e - 1])) || w[e - 1] == '-' || w[e - 1] == '\'')) {
      if (w[e - 1] != '"' && w[e - 1] != ')') pw.break_after = true;
      --e;
    }
    pw.norm = w.substr(b, e - b);
    words.push_back(std::move(pw));
  }
  return words;
}

}  // namespace detail

inline constexpr int kMaxInferredWords = 2;

inline ConceptSet parse(std::string_view prompt, const Lexicon& lexicon) {
  enum class Cls { kAdj, kNoun, kStop, kUnknown };
  ConceptSet out;
  out.source_prompt = std::string(prompt);
  const auto words = detail::prompt_words(prompt);
  const int n = static_cast<int>(words.size());
  std::vector<Cls> cls(words.size());
  for (int i = 0; i < n; ++i) {
    const auto& w = words[static_cast<std::size_t>(i)].norm;
    cls[static_cast<std::size_t>(i)] = w.empty()                 ? Cls::kStop
                                       : lexicon.is_stopword(w)  ? Cls::kStop
                                       : lexicon.is_adjective(w) ? Cls::kAdj
                                       : lexicon.is_noun(w)      ? Cls::kNoun
                                                                 : Cls::kUnknown;
  }
  auto at = [&](int i) { return cls[static_cast<std::size_t>(i)]; };
  auto breaks = [&](int i) { return words[static_cast<std::size_t>(i)].break_after; };
  auto text = [&](int i) { return words[static_cast<std::size_t>(i)].norm; };

  // Extends a noun run starting at i; returns one past its end.
  auto noun_run_end = [&](int i) {
    int v = i;
    while (v < n && at(v) == Cls::kNoun) {
      ++v;
      if (breaks(v - 1)) break;
    }
    return v;
  };

  int i = 0;
  while (i < n) {
    if (at(i) == Cls::kAdj) {
      int j = i;
      while (j < n && at(j) == Cls::kAdj) {
        ++j;
        if (breaks(j - 1)) break;
      }
      if (breaks(j - 1)) {
        i = j;
        continue;
      }
      // unknown words are absorbed only when a known noun follows them
      int u = j;
      while (u < n && u - j < kMaxInferredWords && at(u) == Cls::kUnknown && !breaks(u)) ++u;
      int first = -1;
      if (u < n && at(u) == Cls::kNoun) first = j;
      if (first < 0) {
        i = j;
        continue;
      }
      const int v = noun_run_end(u);
      ConceptPair p;
      for (int a = i; a < j; ++a) p.attribute.push_back(text(a));
      for (int o = first; o < v; ++o) p.object.push_back(text(o));
      p.object_first_index = first;
      p.object_word_index = v - 1;
      p.inferred = u > first;
      out.pairs.push_back(std::move(p));
      i = v;
    } else if (at(i) == Cls::kNoun) {
      const int v = noun_run_end(i);
      ConceptPair p;
      for (int o = i; o < v; ++o) p.object.push_back(text(o));
      p.object_first_index = i;
      p.object_word_index = v - 1;
      out.pairs.push_back(std::move(p));
      i = v;
    } else {
      ++i;
    }
  }
  return out;
}

namespace detail {

inline std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> out;
  const std::string cleaned = clean_text(s);
  std::size_t pos = 0;
  while (pos < cleaned.size()) {
    std::size_t sp = cleaned.find(' ', pos);
    if (sp == std::string::npos) sp = cleaned.size();
    if (sp > pos) out.push_back(cleaned.substr(pos, sp - pos));
    pos = sp + 1;
  }
  return out;
}

}  // namespace detail

// Builds a ConceptSet from "attr:object[,attr:object...]". Objects are
// resolved to the first whole-word match after the previous concept's object,
// so entries must follow prompt order.
inline ConceptSet parse_override(std::string_view spec, std::string_view prompt) {
  ConceptSet out;
  out.source_prompt = std::string(prompt);
  const auto words = detail::prompt_words(prompt);
  if (spec.find_first_not_of(" \t") == std::string_view::npos) throw ParseError("empty concept specification");

  int search_from = 0;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    std::size_t comma = spec.find(',', pos);
    if (comma == std::string_view::npos) comma = spec.size();
    const std::string_view entry = spec.substr(pos, comma - pos);
    pos = comma + 1;
    const auto colon = entry.find(':');
    if (colon == std::string_view::npos || entry.find(':', colon + 1) != std::string_view::npos)
      throw ParseError("concept entry '" + std::string(entry) + "' must contain exactly one ':'");
    ConceptPair p;
    p.attribute = detail::split_words(entry.substr(0, colon));
    p.object = detail::split_words(entry.substr(colon + 1));
    if (p.object.empty()) throw ParseError("concept entry '" + std::string(entry) + "' has an empty object");

    auto match_at = [&](int s) {
      if (s + static_cast<int>(p.object.size()) > static_cast<int>(words.size())) return false;
      for (std::size_t k = 0; k < p.object.size(); ++k)
        if (words[static_cast<std::size_t>(s) + k].norm != p.object[k]) return false;
      return true;
    };
    int found = -1;
    for (int s = search_from; s < static_cast<int>(words.size()) && found < 0; ++s)
      if (match_at(s)) found = s;
    if (found < 0) {
      for (int s = 0; s < search_from; ++s)
        if (match_at(s))
          throw ResolutionError("object '" + p.object_text() + "' occurs only before the previous concept; list concepts in prompt order");
      throw ResolutionError("object '" + p.object_text() + "' does not occur in the prompt");
    }
    p.object_first_index = found;
    p.object_word_index = found + static_cast<int>(p.object.size()) - 1;
    search_from = p.object_word_index + 1;
    out.pairs.push_back(std::move(p));
    if (comma == spec.size()) break;
  }
  return out;
}

}  // namespace magnet
