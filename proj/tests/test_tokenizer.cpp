#include <gtest/gtest.h>

#include <chrono>
#include <random>

#include "test_env.hpp"

using namespace magnet;
using magnet::testing::clip_vocab;

TEST(Tokenizer, VocabularyShape) {
  const auto& v = clip_vocab();
  EXPECT_EQ(v.vocab_size, 49408);
  EXPECT_EQ(v.sot_id, 49406);
  EXPECT_EQ(v.eot_id, 49407);
  EXPECT_EQ(v.merge_ranks.size(), 48894u);
}

TEST(Tokenizer, ReferenceIdsOnFixtureCorpus) {
  const auto fx = magnet::testing::read_json(magnet::testing::fixture("tokenizer_ids.json"));
  const auto& v = clip_vocab();
  std::size_t n = 0;
  for (const auto& e : fx["prompts"]) {
    const auto seq = tokenize(e["prompt"].get<std::string>(), v);
    const auto want = e["ids"].get<std::vector<int>>();
    ASSERT_EQ(std::vector<int>(seq.ids.begin(), seq.ids.end()), want) << "prompt: " << e["prompt"];
    EXPECT_EQ(seq.n_word_tokens, e["n_word_tokens"].get<int>());
    ++n;
  }
  EXPECT_EQ(n, 200u);
}

TEST(Tokenizer, RedChairLayout) {
  const auto seq = tokenize("a red chair", clip_vocab());
  EXPECT_EQ(seq.n_word_tokens, 3);
  EXPECT_EQ(seq.eot_index, 4);
  EXPECT_EQ(seq.ids[0], 49406);
  for (int i = 4; i < kContextLength; ++i) EXPECT_EQ(seq.ids[static_cast<std::size_t>(i)], 49407);
  EXPECT_EQ(kContextLength - seq.eot_index - 1, 72);
}

TEST(Tokenizer, EmptyPrompt) {
  const auto seq = tokenize("", clip_vocab());
  EXPECT_EQ(seq.n_word_tokens, 0);
  EXPECT_EQ(seq.eot_index, 1);
  EXPECT_TRUE(seq.word_spans.empty());
  const auto ws = tokenize(" \t\n ", clip_vocab());
  EXPECT_EQ(ws.ids, seq.ids);
}

TEST(Tokenizer, CaseAndWhitespaceInsensitive) {
  const auto a = tokenize("A  Red\tChair", clip_vocab());
  const auto b = tokenize("a red chair", clip_vocab());
  EXPECT_EQ(a.ids, b.ids);
}

TEST(Tokenizer, LengthLimit) {
  const auto fx = magnet::testing::read_json(magnet::testing::fixture("tokenizer_ids.json"));
  const auto prompt = fx["too_long"]["prompt"].get<std::string>();
  try {
    tokenize(prompt, clip_vocab());
    FAIL() << "expected PromptTooLongError";
  } catch (const PromptTooLongError& e) {
    EXPECT_NE(std::string(e.what()).find(std::to_string(fx["too_long"]["n_word_tokens"].get<int>())), std::string::npos);
  }
  bool saw75 = false;
  for (const auto& e : fx["prompts"])
    if (e["n_word_tokens"] == 75) {
      saw75 = true;
      const auto seq = tokenize(e["prompt"].get<std::string>(), clip_vocab());
      EXPECT_EQ(seq.eot_index, 76);
      EXPECT_EQ(seq.ids[76], 49407);
    }
  EXPECT_TRUE(saw75);
}

TEST(Tokenizer, RejectsSpecialMarkers) {
  EXPECT_THROW(tokenize("a <|endoftext|> b", clip_vocab()), InputError);
  EXPECT_THROW(tokenize("<|startoftext|>", clip_vocab()), InputError);
}

TEST(Tokenizer, WordSpansCoverBody) {
  const auto seq = tokenize("a teddy bear, and refrigerators!", clip_vocab());
  ASSERT_EQ(seq.word_spans.size(), 5u);
  int expect_start = 1;
  for (const auto& w : seq.word_spans) {
    EXPECT_EQ(w.start, expect_start);
    EXPECT_GE(w.core_end, w.start + 1);
    EXPECT_LE(w.core_end, w.end);
    expect_start = w.end;
  }
  EXPECT_EQ(expect_start, seq.eot_index);
  // "bear," ends in a punctuation token that is not the core
  EXPECT_EQ(seq.word_spans[2].core_end, seq.word_spans[2].end - 1);
  EXPECT_EQ(decode_word(clip_vocab(), seq, seq.word_spans[2]), "bear,");
}

TEST(Tokenizer, DecodeRoundTripOnAsciiPrompts) {
  for (const std::string p : {"a red chair", "it's a dog's life", "numbers 1234 and 3.14", "x-ray of a hand"}) {
    const auto seq = tokenize(p, clip_vocab());
    std::vector<TokenId> body(seq.ids.begin() + 1, seq.ids.begin() + seq.eot_index);
    std::string text = decode(clip_vocab(), body);
    while (!text.empty() && text.back() == ' ') text.pop_back();
    // the tokenizer splits punctuation, so compare with spacing removed
    std::string a, b;
    for (char c : text)
      if (c != ' ') a += c;
    for (char c : p)
      if (c != ' ') b += c;
    EXPECT_EQ(a, b) << p;
  }
}

TEST(Tokenizer, Deterministic) {
  std::mt19937 rng(5);
  const std::string alphabet = "abcdefghijklmnopqrstuvwxyz ,.'!0123456789";
  for (int t = 0; t < 200; ++t) {
    std::string s;
    const int len = 1 + static_cast<int>(rng() % 40);
    for (int i = 0; i < len; ++i) s += alphabet[rng() % alphabet.size()];
    TokenSequence a, b;
    try {
      a = tokenize(s, clip_vocab());
    } catch (const PromptTooLongError&) {
      continue;
    }
    b = tokenize(s, clip_vocab());
    EXPECT_EQ(a.ids, b.ids);
    EXPECT_LE(a.n_word_tokens, kMaxWordTokens);
    for (int i = a.eot_index; i < kContextLength; ++i) EXPECT_EQ(a.ids[static_cast<std::size_t>(i)], clip_vocab().eot_id);
  }
}

TEST(Tokenizer, CleanTextRepairs) {
  EXPECT_EQ(clean_text("fish &amp; chips"), "fish & chips");
  EXPECT_EQ(clean_text("&amp;amp;"), "&");
  EXPECT_EQ(clean_text("“quote” it’s"), "\"quote\" it's");
  EXPECT_EQ(clean_text("ﬁne"), "fine");
  EXPECT_EQ(clean_text("ＡＢＣ"), "abc");
  EXPECT_EQ(clean_text("é"), "é");
}

namespace {
std::filesystem::path write_file(const std::filesystem::path& dir, const std::string& name, const std::string& body) {
  std::ofstream(dir / name) << body;
  return dir / name;
}
}  // namespace

TEST(Tokenizer, LoaderErrors) {
  const auto dir = magnet::testing::temp_dir("vocab");
  const auto good_merges = write_file(dir, "m.txt", "#version: 0.2\na b\n");
  auto vocab = [&](const std::string& json) { return write_file(dir, "v.json", json); };

  try {
    load_vocabulary(vocab("{\"a\": 0,\n \"b\": }"), good_merges);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_GT(e.line(), 0u);
  }
  EXPECT_THROW(load_vocabulary(vocab(R"({"a":0,"b":1,"ab":2})"), good_merges), ValidationError);  // no SOT/EOT
  EXPECT_THROW(load_vocabulary(vocab(R"({"a":0,"b":0,"ab":2,"<|startoftext|>":3,"<|endoftext|>":4})"), good_merges),
               ValidationError);  // duplicate id
  const auto ok = vocab(R"({"a":0,"b":1,"ab":2,"<|startoftext|>":3,"<|endoftext|>":4})");
  EXPECT_NO_THROW(load_vocabulary(ok, good_merges));
  try {
    load_vocabulary(ok, write_file(dir, "bad.txt", "#version: 0.2\na b\nthree parts here\n"));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  EXPECT_THROW(load_vocabulary(ok, write_file(dir, "unk.txt", "a zz\n")), ValidationError);
  EXPECT_THROW(load_vocabulary(dir / "missing.json", good_merges), IoError);
  std::filesystem::remove_all(dir);
}

TEST(Tokenizer, CorpusUnderOneSecond) {
  const auto fx = magnet::testing::read_json(magnet::testing::fixture("tokenizer_ids.json"));
  std::vector<std::string> prompts;
  for (const auto& e : fx["prompts"]) prompts.push_back(e["prompt"]);
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& p : prompts) tokenize(p, clip_vocab());
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(s, 1.0);
}
