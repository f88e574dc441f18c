#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <unordered_map>

#include "magnet/encoder.hpp"
#include "magnet/fingerprint.hpp"
#include "magnet/tokenizer.hpp"

namespace magnet {

// Tokenizer + transformer pair: the prompt-to-embedding function used by every
// higher-level operation. Immutable after construction.
class TextEncoder {
 public:
  TextEncoder(Vocabulary vocab, EncoderConfig config, EncoderWeights weights, std::string fingerprint)
      : vocab_(std::move(vocab)), config_(config), weights_(std::move(weights)), fingerprint_(std::move(fingerprint)) {
    validate_weights(weights_, config_);
    if (vocab_.vocab_size > config_.vocab_size)
      throw ValidationError("tokenizer vocabulary (" + std::to_string(vocab_.vocab_size) +
                            ") is larger than the embedding table (" + std::to_string(config_.vocab_size) + ")");
  }

  static TextEncoder open(const std::filesystem::path& weights_path, const std::filesystem::path& vocab_path,
                          const std::filesystem::path& merges_path, const LoadOptions& options = {}) {
    if (!std::filesystem::exists(weights_path)) throw IoError("weights archive not found: " + weights_path.string());
    auto vocab = load_vocabulary(vocab_path, merges_path);
    auto loaded = load_weights(weights_path, options);
    return TextEncoder(std::move(vocab), loaded.config, std::move(loaded.weights), sha256_file(weights_path));
  }

  const Vocabulary& vocabulary() const { return vocab_; }
  const EncoderConfig& config() const { return config_; }
  const EncoderWeights& weights() const { return weights_; }
  const std::string& fingerprint() const { return fingerprint_; }
  int dim() const { return config_.d_model; }

  TokenSequence tokenize(std::string_view prompt) const { return magnet::tokenize(prompt, vocab_); }
  EmbeddingSequence encode(const TokenSequence& seq) const { return magnet::encode(seq, weights_, config_); }
  EmbeddingSequence encode(std::string_view prompt) const { return encode(tokenize(prompt)); }

 private:
  Vocabulary vocab_;
  EncoderConfig config_;
  EncoderWeights weights_;
  std::string fingerprint_;
};

// Memoizes encodings by prompt string. Safe for concurrent use; an entry may
// be computed twice under contention but the stored value is identical.
class ProbeCache {
 public:
  explicit ProbeCache(const TextEncoder& encoder) : encoder_(encoder) {}

  std::shared_ptr<const EmbeddingSequence> get(const std::string& prompt) {
    {
      std::lock_guard<std::mutex> lock(mutex_);
      if (auto it = cache_.find(prompt); it != cache_.end()) return it->second;
    }
    auto value = std::make_shared<const EmbeddingSequence>(encoder_.encode(prompt));
    std::lock_guard<std::mutex> lock(mutex_);
    return cache_.emplace(prompt, std::move(value)).first->second;
  }

  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return cache_.size();
  }

  const TextEncoder& encoder() const { return encoder_; }

 private:
  const TextEncoder& encoder_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::shared_ptr<const EmbeddingSequence>> cache_;
};

}  // namespace magnet
