#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include "synthetic_weights.hpp"
#include "test_env.hpp"

using namespace magnet;
namespace mt = magnet::testing;

namespace {

double max_abs_diff(const RowMatrix& a, const float* b) {
  double m = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - b[i]));
  return m;
}

}  // namespace

TEST(Encoder, ParityWithReferenceOnSyntheticVitL) {
  const auto meta = mt::read_json(mt::fixture("encoder_vitl_synthetic.json"));
  const auto& enc = mt::vitl_synthetic_encoder();
  ASSERT_EQ(enc.fingerprint(), meta["weights_sha256"].get<std::string>()) << "synthetic weights drifted from the oracle";
  SafeTensorReader ref(mt::fixture("encoder_vitl_synthetic.safetensors"));
  const Tensor hidden = ref.read("hidden_states");
  ASSERT_EQ(hidden.shape, (std::vector<std::int64_t>{20, 77, 768}));
  const auto prompts = meta["prompts"].get<std::vector<std::string>>();
  double worst = 0.0;
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    const auto e = enc.encode(prompts[p]);
    worst = std::max(worst, max_abs_diff(e.hidden, hidden.data.data() + p * 77 * 768));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Encoder, ConfigInferredFromArchive) {
  const auto& cfg = mt::vitl_synthetic_encoder().config();
  EXPECT_EQ(cfg.d_model, 768);
  EXPECT_EQ(cfg.n_layers, 12);
  EXPECT_EQ(cfg.n_heads, 12);
  EXPECT_EQ(cfg.mlp_dim, 3072);
  EXPECT_EQ(cfg.vocab_size, 49408);
  const auto& small = mt::small_encoder().config();
  EXPECT_EQ(small.d_model, 64);
  EXPECT_EQ(small.n_layers, 2);
  EXPECT_EQ(small.n_heads, 4);
}

TEST(Encoder, OutputShapeAndFinite) {
  const auto e = mt::small_encoder().encode("a red chair");
  EXPECT_EQ(e.rows(), 77);
  EXPECT_EQ(e.dim(), 64);
  EXPECT_EQ(e.eot_index, 4);
  EXPECT_TRUE(e.hidden.allFinite());
}

// Row i depends only on tokens 0..i.
TEST(Encoder, CausalMask) {
  const auto& enc = mt::small_encoder();
  std::mt19937 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    TokenSequence seq = enc.tokenize("a red car and a yellow cat");
    const auto base = enc.encode(seq);
    const int j = 1 + static_cast<int>(rng() % 76);
    seq.ids[static_cast<std::size_t>(j)] = static_cast<TokenId>(rng() % 49000);
    const auto changed = enc.encode(seq);
    for (int i = 0; i < j; ++i)
      ASSERT_TRUE(base.hidden.row(i) == changed.hidden.row(i)) << "row " << i << " changed by token " << j;
    EXPECT_FALSE(base.hidden.row(j) == changed.hidden.row(j));
  }
}

TEST(Encoder, PrefixRowsShared) {
  const auto& enc = mt::small_encoder();
  const auto a = enc.encode("a red chair");
  const auto b = enc.encode("a red chair and a blue apple");
  for (int i = 0; i < 4; ++i) EXPECT_TRUE(a.hidden.row(i) == b.hidden.row(i));
}

TEST(Encoder, Deterministic) {
  const auto& enc = mt::small_encoder();
  EXPECT_TRUE(enc.encode("a blue apple").hidden == enc.encode("a blue apple").hidden);
}

TEST(Encoder, EmptyPromptEncodes) {
  const auto e = mt::small_encoder().encode("");
  EXPECT_EQ(e.eot_index, 1);
  EXPECT_TRUE(e.hidden.allFinite());
}

TEST(Encoder, ActivationVariantsDiffer) {
  auto cfg = mt::small_config();
  const auto w = mt::synthetic_weights(cfg, 3);
  const auto seq = tokenize("a red chair", mt::clip_vocab());
  const auto q = encode(seq, w, cfg);
  cfg.activation = Activation::kGelu;
  const auto g = encode(seq, w, cfg);
  EXPECT_TRUE(g.hidden.allFinite());
  EXPECT_GT((q.hidden - g.hidden).cwiseAbs().maxCoeff(), 0.0f);
}

TEST(Encoder, RejectsOutOfRangeIds) {
  auto cfg = mt::small_config();
  cfg.vocab_size = 1000;
  auto w = mt::synthetic_weights(cfg, 3);
  const auto seq = tokenize("a red chair", mt::clip_vocab());
  EXPECT_THROW(encode(seq, w, cfg), InputError);
}

TEST(Encoder, LoadErrors) {
  const auto dir = mt::temp_dir("weights");
  const auto cfg = mt::small_config();
  auto w = mt::synthetic_weights(cfg, 9);

  EXPECT_THROW(load_weights(dir / "absent.safetensors"), IoError);
  try {
    TextEncoder::open(dir / "absent.safetensors", mt::vocab_path(), mt::merges_path());
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("absent.safetensors"), std::string::npos);
  }

  // missing tensor
  {
    SafeTensorWriter out;
    out.add(names::kTokenEmbedding, {cfg.vocab_size, cfg.d_model},
            std::span<const float>(w.token_embedding.data(), static_cast<std::size_t>(w.token_embedding.size())));
    out.write(dir / "partial.safetensors");
    try {
      load_weights(dir / "partial.safetensors");
      FAIL();
    } catch (const LoadError& e) {
      EXPECT_NE(std::string(e.what()).find("position_embedding"), std::string::npos);
    }
  }
  // NaN
  {
    auto bad = w;
    bad.layers[1].fc2.weight(3, 5) = std::nanf("");
    mt::write_weights(dir / "nan.safetensors", bad, cfg);
    EXPECT_THROW(load_weights(dir / "nan.safetensors"), ValidationError);
  }
  // heads that do not divide d
  {
    mt::write_weights(dir / "ok.safetensors", w, cfg);
    LoadOptions opt;
    opt.n_heads = 5;
    EXPECT_THROW(load_weights(dir / "ok.safetensors", opt), ValidationError);
    opt.n_heads = 8;
    EXPECT_EQ(load_weights(dir / "ok.safetensors", opt).config.n_heads, 8);
  }
  // shape mismatch between tensors
  {
    auto bad = w;
    bad.layers[0].fc1.bias.resize(10);
    bad.layers[0].fc1.bias.setZero();
    mt::write_weights(dir / "shape.safetensors", bad, cfg);
    EXPECT_THROW(load_weights(dir / "shape.safetensors"), LoadError);
  }
  std::filesystem::remove_all(dir);
}

TEST(Encoder, TwentyPromptsUnderSixtySeconds) {
  const auto meta = mt::read_json(mt::fixture("encoder_vitl_synthetic.json"));
  const auto& enc = mt::vitl_synthetic_encoder();
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& p : meta["prompts"]) enc.encode(p.get<std::string>());
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 60.0);
}
