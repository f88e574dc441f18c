#pragma once

// Byte-level BPE tokenizer compatible with the CLIP text pipeline: text is
// NFC-normalized, whitespace-collapsed and lowercased, split with the CLIP
// pre-tokenization pattern, byte-mapped, and merged by rank. Sequences are
// always 77 ids long: SOT, word tokens, EOT, then EOT padding.

#include <array>
#include <cstdlib>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/regex.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "magnet/error.hpp"

namespace magnet {

inline constexpr int kContextLength = 77;
inline constexpr int kMaxWordTokens = kContextLength - 2;

using TokenId = std::int32_t;

struct Vocabulary {
  std::unordered_map<std::string, TokenId> token_to_id;
  std::vector<std::string> id_to_token;
  // key: "left right"
  std::unordered_map<std::string, int> merge_ranks;
  TokenId sot_id = -1;
  TokenId eot_id = -1;
  int vocab_size = 0;

  TokenId id_of(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? -1 : it->second;
  }
};

// A whitespace-delimited word of the cleaned prompt and its token range
// [start, end). `core_end` excludes trailing punctuation-only pieces, so
// core_end - 1 is the last sub-token carrying the word's letters or digits.
struct WordSpan {
  std::string text;
  int start = 0;
  int end = 0;
  int core_end = 0;
};

struct TokenSequence {
  std::array<TokenId, kContextLength> ids{};
  std::vector<WordSpan> word_spans;
  int n_word_tokens = 0;
  int eot_index = 1;
  std::string cleaned_text;
};

namespace detail {

inline const std::array<std::string, 256>& byte_encoder() {
  static const std::array<std::string, 256> table = [] {
    std::array<std::string, 256> t;
    std::array<bool, 256> printable{};
    for (int b = '!'; b <= '~'; ++b) printable[b] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) printable[b] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) printable[b] = true;
    int n = 0;
    for (int b = 0; b < 256; ++b) {
      const UChar32 cp = printable[b] ? b : 256 + n++;
      std::string s;
      icu::UnicodeString(cp).toUTF8String(s);
      t[b] = std::move(s);
    }
    return t;
  }();
  return table;
}

inline const std::unordered_map<std::string, unsigned char>& byte_decoder() {
  static const std::unordered_map<std::string, unsigned char> table = [] {
    std::unordered_map<std::string, unsigned char> t;
    const auto& enc = byte_encoder();
    for (int b = 0; b < 256; ++b) t.emplace(enc[b], static_cast<unsigned char>(b));
    return t;
  }();
  return table;
}

inline const icu::RegexPattern& pretokenize_pattern() {
  static const std::unique_ptr<icu::RegexPattern> pattern = [] {
    UErrorCode status = U_ZERO_ERROR;
    UParseError perr;
    std::unique_ptr<icu::RegexPattern> p(icu::RegexPattern::compile(
        icu::UnicodeString::fromUTF8("'s|'t|'re|'ve|'m|'ll|'d|[\\p{L}]+|[\\p{N}]|[^\\s\\p{L}\\p{N}]+"),
        UREGEX_CASE_INSENSITIVE, perr, status));
    if (U_FAILURE(status)) throw std::runtime_error("failed to compile pre-tokenization pattern");
    return p;
  }();
  return *pattern;
}

inline std::size_t line_of_offset(std::string_view text, std::size_t offset) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

namespace detail {

// Decodes &amp; &lt; &gt; &quot; &apos; &#39; &nbsp; and numeric references.
// Only the terminated forms are recognized.
inline std::string unescape_entities(const std::string& s) {
  static const std::array<std::pair<std::string_view, std::string_view>, 6> named = {
      {{"amp", "&"}, {"lt", "<"}, {"gt", ">"}, {"quot", "\""}, {"apos", "'"}, {"nbsp", "\u00a0"}}};
  std::string out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto semi = s[i] == '&' ? s.find(';', i) : std::string::npos;
    if (semi != std::string::npos && semi - i <= 10) {
      const std::string_view body(s.data() + i + 1, semi - i - 1);
      bool done = false;
      for (const auto& [name, value] : named)
        if (body == name) {
          out += value;
          done = true;
        }
      if (!done && body.size() >= 2 && body[0] == '#') {
        const bool hex = body[1] == 'x' || body[1] == 'X';
        const std::string digits(body.substr(hex ? 2 : 1));
        char* end = nullptr;
        const long cp = digits.empty() ? -1 : std::strtol(digits.c_str(), &end, hex ? 16 : 10);
        if (end && *end == '\0' && cp > 0 && cp <= 0x10FFFF && !(cp >= 0xD800 && cp <= 0xDFFF)) {
          icu::UnicodeString(static_cast<UChar32>(cp)).toUTF8String(out);
          done = true;
        }
      }
      if (done) {
        i = semi + 1;
        continue;
      }
    }
    out.push_back(s[i++]);
  }
  return out;
}

// Character repairs of the reference text cleanup: curly quotes become ASCII
// quotes, Latin ligatures are expanded and fullwidth ASCII is narrowed.
// Mojibake repair is not attempted.
inline icu::UnicodeString repair_characters(const icu::UnicodeString& in) {
  icu::UnicodeString out;
  for (int32_t i = 0; i < in.length();) {
    const UChar32 cp = in.char32At(i);
    i += U16_LENGTH(cp);
    if (cp == 0x02BC || (cp >= 0x2018 && cp <= 0x201B)) {
      out.append(static_cast<UChar>('\''));
    } else if (cp >= 0x201C && cp <= 0x201F) {
      out.append(static_cast<UChar>('"'));
    } else if (cp >= 0xFF01 && cp <= 0xFF5E) {
      out.append(static_cast<UChar>(cp - 0xFF01 + 0x21));
    } else if (cp == 0x3000) {
      out.append(static_cast<UChar>(' '));
    } else {
      static const std::array<std::pair<UChar32, const char*>, 17> ligatures = {
          {{0x0132, "IJ"}, {0x0133, "ij"}, {0x0149, "\u02bcn"}, {0x01F1, "DZ"}, {0x01F2, "Dz"}, {0x01F3, "dz"},
           {0x01C4, "D\u017d"}, {0x01C5, "D\u017e"}, {0x01C6, "d\u017e"}, {0x01C7, "LJ"}, {0x01C8, "Lj"},
           {0x01C9, "lj"}, {0x01CA, "NJ"}, {0x01CB, "Nj"}, {0x01CC, "nj"}, {0xFB00, "ff"}, {0xFB01, "fi"}}};
      static const std::array<std::pair<UChar32, const char*>, 5> more = {
          {{0xFB02, "fl"}, {0xFB03, "ffi"}, {0xFB04, "ffl"}, {0xFB05, "\u017ft"}, {0xFB06, "st"}}};
      const char* repl = nullptr;
      for (const auto& [c, r] : ligatures)
        if (c == cp) repl = r;
      for (const auto& [c, r] : more)
        if (c == cp) repl = r;
      if (repl)
        out.append(icu::UnicodeString::fromUTF8(repl));
      else
        out.append(cp);
    }
  }
  return out;
}

}  // namespace detail

// Cleanup applied before tokenization: HTML entity decoding, quote, ligature
// and width repair, NFC, more entity decoding, whitespace runs collapsed to a single space with ends
// trimmed, then full Unicode lowercasing.
inline std::string clean_text(std::string_view text) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw std::runtime_error("ICU NFC normalizer unavailable");
  std::string decoded(text);
  if (decoded.find('<') == std::string::npos) decoded = detail::unescape_entities(decoded);
  icu::UnicodeString u = detail::repair_characters(
      icu::UnicodeString::fromUTF8(icu::StringPiece(decoded.data(), static_cast<int32_t>(decoded.size()))));
  u = nfc->normalize(u, status);
  if (U_FAILURE(status)) throw InputError("text is not valid Unicode");
  // two further entity passes follow the repairs, without renormalizing
  decoded.clear();
  u.toUTF8String(decoded);
  decoded = detail::unescape_entities(detail::unescape_entities(decoded));
  const icu::UnicodeString normalized =
      icu::UnicodeString::fromUTF8(icu::StringPiece(decoded.data(), static_cast<int32_t>(decoded.size())));

  icu::UnicodeString collapsed;
  bool pending_space = false;
  for (int32_t i = 0; i < normalized.length();) {
    const UChar32 cp = normalized.char32At(i);
    i += U16_LENGTH(cp);
    if (u_isUWhiteSpace(cp)) {
      pending_space = !collapsed.isEmpty();
      continue;
    }
    if (pending_space) collapsed.append(static_cast<UChar>(' '));
    pending_space = false;
    collapsed.append(cp);
  }
  collapsed.toLower(icu::Locale::getRoot());
  std::string out;
  collapsed.toUTF8String(out);
  return out;
}

// CLIP pre-tokenization of one whitespace-free word.
inline std::vector<std::string> pretokenize(std::string_view word) {
  UErrorCode status = U_ZERO_ERROR;
  icu::UnicodeString u = icu::UnicodeString::fromUTF8(icu::StringPiece(word.data(), static_cast<int32_t>(word.size())));
  std::unique_ptr<icu::RegexMatcher> m(detail::pretokenize_pattern().matcher(u, status));
  std::vector<std::string> pieces;
  while (m->find(status) && U_SUCCESS(status)) {
    std::string piece;
    m->group(status).toUTF8String(piece);
    pieces.push_back(std::move(piece));
  }
  return pieces;
}

// BPE-merges one pre-tokenized piece into vocabulary token strings.
inline std::vector<std::string> bpe(const Vocabulary& vocab, std::string_view piece) {
  const auto& enc = detail::byte_encoder();
  std::vector<std::string> word;
  word.reserve(piece.size());
  for (unsigned char c : piece) word.push_back(enc[c]);
  if (word.empty()) return word;
  word.back() += "</w>";

  for (;;) {
    int best_rank = std::numeric_limits<int>::max();
    std::size_t best = 0;
    for (std::size_t i = 0; i + 1 < word.size(); ++i) {
      auto it = vocab.merge_ranks.find(word[i] + ' ' + word[i + 1]);
      if (it != vocab.merge_ranks.end() && it->second < best_rank) {
        best_rank = it->second;
        best = i;
      }
    }
    if (best_rank == std::numeric_limits<int>::max()) break;
    const std::string first = word[best];
    const std::string second = word[best + 1];
    std::vector<std::string> merged;
    merged.reserve(word.size());
    for (std::size_t i = 0; i < word.size();) {
      if (i + 1 < word.size() && word[i] == first && word[i + 1] == second) {
        merged.push_back(first + second);
        i += 2;
      } else {
        merged.push_back(word[i]);
        ++i;
      }
    }
    word = std::move(merged);
    if (word.size() == 1) break;
  }
  return word;
}

inline Vocabulary load_vocabulary(const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path) {
  Vocabulary v;
  const std::string vocab_text = detail::read_file(vocab_path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(vocab_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(vocab_path.string(), detail::line_of_offset(vocab_text, e.byte), e.what());
  }
  if (!j.is_object()) throw FormatError(vocab_path.string(), 1, "vocabulary must be a JSON object");
  TokenId max_id = -1;
  for (auto& [tok, idv] : j.items()) {
    if (!idv.is_number_integer() || idv.get<long long>() < 0 ||
        idv.get<long long>() > std::numeric_limits<TokenId>::max())
      throw FormatError(vocab_path.string(), 0, "token '" + tok + "' has a non-integer or negative id");
    const auto id = idv.get<TokenId>();
    v.token_to_id.emplace(tok, id);
    max_id = std::max(max_id, id);
  }
  v.vocab_size = max_id + 1;
  v.id_to_token.assign(static_cast<std::size_t>(v.vocab_size), std::string());
  std::vector<bool> seen(static_cast<std::size_t>(v.vocab_size), false);
  for (const auto& [tok, id] : v.token_to_id) {
    if (seen[static_cast<std::size_t>(id)])
      throw ValidationError("vocabulary id " + std::to_string(id) + " is assigned to more than one token");
    seen[static_cast<std::size_t>(id)] = true;
    v.id_to_token[static_cast<std::size_t>(id)] = tok;
  }
  for (const char* sot : {"<|startoftext|>", "<start_of_text>"})
    if (auto id = v.id_of(sot); id >= 0) v.sot_id = id;
  for (const char* eot : {"<|endoftext|>", "<end_of_text>"})
    if (auto id = v.id_of(eot); id >= 0) v.eot_id = id;
  if (v.sot_id < 0) throw ValidationError(vocab_path.string() + ": start-of-text token missing");
  if (v.eot_id < 0) throw ValidationError(vocab_path.string() + ": end-of-text token missing");
  if (v.sot_id == v.eot_id) throw ValidationError("start and end tokens share an id");

  const std::string merges_text = detail::read_file(merges_path);
  std::istringstream lines(merges_text);
  std::string line;
  std::size_t line_no = 0;
  int rank = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.rfind("#", 0) == 0) continue;
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos || sp == 0 || sp + 1 >= line.size() || line.find(' ', sp + 1) != std::string::npos)
      throw FormatError(merges_path.string(), line_no, "expected exactly two space-separated tokens");
    const std::string left = line.substr(0, sp);
    const std::string right = line.substr(sp + 1);
    if (v.id_of(left) < 0 || v.id_of(right) < 0)
      throw ValidationError(merges_path.string() + ":" + std::to_string(line_no) + ": merge constituent not in vocabulary");
    v.merge_ranks.emplace(line, rank++);
  }
  return v;
}

// Tokenizes one word of cleaned text, appending ids. Returns the index one past
// the last token of a letter/digit piece (or the end, if the word has none).
inline std::size_t append_word_tokens(const Vocabulary& vocab, std::string_view word, std::vector<TokenId>& out) {
  std::size_t core_end = 0;
  bool has_core = false;
  for (const auto& piece : pretokenize(word)) {
    for (const auto& tok : bpe(vocab, piece)) {
      const TokenId id = vocab.id_of(tok);
      if (id < 0) throw InputError("token '" + tok + "' (from '" + piece + "') is not in the vocabulary");
      out.push_back(id);
    }
    UChar32 first = 0;
    U8_GET_UNSAFE(reinterpret_cast<const uint8_t*>(piece.data()), 0, first);
    const auto type = u_charType(first);
    const bool is_number = type == U_DECIMAL_DIGIT_NUMBER || type == U_LETTER_NUMBER || type == U_OTHER_NUMBER;
    if (u_isalpha(first) || is_number || piece[0] == '\'') {
      core_end = out.size();
      has_core = true;
    }
  }
  return has_core ? core_end : out.size();
}

inline TokenSequence tokenize(std::string_view text, const Vocabulary& vocab) {
  TokenSequence seq;
  seq.cleaned_text = clean_text(text);
  if (seq.cleaned_text.find("<|startoftext|>") != std::string::npos ||
      seq.cleaned_text.find("<|endoftext|>") != std::string::npos)
    throw InputError("prompt contains a literal special-token marker");

  std::vector<TokenId> body;
  std::size_t pos = 0;
  const std::string& t = seq.cleaned_text;
  while (pos < t.size()) {
    std::size_t sp = t.find(' ', pos);
    if (sp == std::string::npos) sp = t.size();
    const std::string_view word(t.data() + pos, sp - pos);
    const int start = static_cast<int>(body.size()) + 1;
    const std::size_t core = append_word_tokens(vocab, word, body);
    seq.word_spans.push_back(WordSpan{std::string(word), start, static_cast<int>(body.size()) + 1,
                                      static_cast<int>(core) + 1});
    pos = sp + 1;
  }
  if (body.size() > static_cast<std::size_t>(kMaxWordTokens)) throw PromptTooLongError(body.size(), kMaxWordTokens);

  seq.n_word_tokens = static_cast<int>(body.size());
  seq.eot_index = seq.n_word_tokens + 1;
  seq.ids.fill(vocab.eot_id);
  seq.ids[0] = vocab.sot_id;
  for (std::size_t i = 0; i < body.size(); ++i) seq.ids[i + 1] = body[i];
  return seq;
}

// Maps token ids back to text. Each end-of-word marker becomes a space.
inline std::string decode(const Vocabulary& vocab, std::span<const TokenId> ids) {
  std::string joined;
  for (TokenId id : ids) {
    if (id < 0 || id >= vocab.vocab_size) throw InputError("token id out of range: " + std::to_string(id));
    joined += vocab.id_to_token[static_cast<std::size_t>(id)];
  }
  std::string out;
  const auto& dec = detail::byte_decoder();
  std::size_t i = 0;
  while (i < joined.size()) {
    if (joined.compare(i, 4, "</w>") == 0) {
      out.push_back(' ');
      i += 4;
      continue;
    }
    const auto c = static_cast<unsigned char>(joined[i]);
    const std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : 4;
    auto it = dec.find(joined.substr(i, len));
    if (it != dec.end()) out.push_back(static_cast<char>(it->second));
    i += len;
  }
  return out;
}

// Text of one word reconstructed from its token span, markers removed.
inline std::string decode_word(const Vocabulary& vocab, const TokenSequence& seq, const WordSpan& span) {
  std::string s = decode(vocab, std::span<const TokenId>(seq.ids.data() + span.start, static_cast<std::size_t>(span.end - span.start)));
  std::string out;
  for (char c : s)
    if (c != ' ') out.push_back(c);
  return out;
}

}  // namespace magnet
