#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace userllm {

struct TokenizerOptions {
  bool lowercase = true;
  bool add_bos = true;
  int min_frequency = 1;
};

/// Word-level tokenizer. Words are whitespace-separated; ids 0-3 are the
/// specials and the corpus words follow in sorted order.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;

  Tokenizer() = default;
  Tokenizer(std::vector<std::string> words, TokenizerOptions options = {});

  /// BOS (when enabled) followed by one id per word.
  std::vector<int> tokenize(std::string_view text) const;
  /// Word ids only, never BOS.
  std::vector<int> encode_words(std::string_view text) const;
  /// Space-joined words; PAD, BOS and EOS are dropped.
  std::string detokenize(std::span<const int> ids) const;

  int id(std::string_view word) const;
  const std::string& word(int id) const;
  int size() const { return static_cast<int>(words_.size()); }
  const TokenizerOptions& options() const { return options_; }

  nlohmann::json to_json() const;
  static Tokenizer from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Tokenizer load(const std::filesystem::path& path);

 private:
  std::string normalize(std::string_view word) const;

  TokenizerOptions options_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

/// Whitespace-splits every text and keeps words seen at least
/// options.min_frequency times. Throws std::invalid_argument on an empty corpus.
Tokenizer build_tokenizer(const std::vector<std::string>& corpus, TokenizerOptions options = {});

std::vector<std::string> split_words(std::string_view text);

}  // namespace userllm
