#include "userllm/textlm/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <stdexcept>

namespace userllm {

namespace {
const char* const kSpecials[] = {"<pad>", "<unk>", "<bos>", "<eos>"};
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) words.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

Tokenizer::Tokenizer(std::vector<std::string> words, TokenizerOptions options) : options_(options) {
  words_.assign(std::begin(kSpecials), std::end(kSpecials));
  for (auto& w : words) words_.push_back(std::move(w));
  for (int i = 0; i < size(); ++i) {
    if (!index_.emplace(words_[static_cast<std::size_t>(i)], i).second) {
      throw std::invalid_argument("tokenizer word repeated: " + words_[static_cast<std::size_t>(i)]);
    }
  }
}

std::string Tokenizer::normalize(std::string_view word) const {
  std::string out(word);
  if (options_.lowercase) {
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  }
  return out;
}

int Tokenizer::id(std::string_view word) const {
  auto it = index_.find(normalize(word));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Tokenizer::word(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("token id " + std::to_string(id) + " out of range");
  return words_[static_cast<std::size_t>(id)];
}

std::vector<int> Tokenizer::encode_words(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(id(w));
  return ids;
}

std::vector<int> Tokenizer::tokenize(std::string_view text) const {
  std::vector<int> ids;
  if (options_.add_bos) ids.push_back(kBos);
  for (int i : encode_words(text)) ids.push_back(i);
  return ids;
}

std::string Tokenizer::detokenize(std::span<const int> ids) const {
  std::string out;
  for (int i : ids) {
    if (i == kPad || i == kBos || i == kEos) continue;
    if (!out.empty()) out += ' ';
    out += word(i);
  }
  return out;
}

nlohmann::json Tokenizer::to_json() const {
  return {{"lowercase", options_.lowercase},
          {"add_bos", options_.add_bos},
          {"min_frequency", options_.min_frequency},
          {"words", std::vector<std::string>(words_.begin() + 4, words_.end())}};
}

Tokenizer Tokenizer::from_json(const nlohmann::json& j) {
  TokenizerOptions options;
  options.lowercase = j.value("lowercase", true);
  options.add_bos = j.value("add_bos", true);
  options.min_frequency = j.value("min_frequency", 1);
  return Tokenizer(j.at("words").get<std::vector<std::string>>(), options);
}

void Tokenizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json().dump(1) << '\n';
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return from_json(nlohmann::json::parse(in));
}

Tokenizer build_tokenizer(const std::vector<std::string>& corpus, TokenizerOptions options) {
  if (options.min_frequency < 1) throw std::invalid_argument("min_frequency must be >= 1");
  std::map<std::string, int> counts;
  bool any = false;
  for (const auto& text : corpus) {
    for (const auto& w : split_words(text)) {
      std::string key = w;
      if (options.lowercase) {
        std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
      }
      ++counts[key];
      any = true;
    }
  }
  if (!any) throw std::invalid_argument("build_tokenizer: empty corpus");
  std::vector<std::string> words;
  for (const auto& [w, n] : counts) {
    if (n < options.min_frequency) continue;
    if (std::find(std::begin(kSpecials), std::end(kSpecials), w) != std::end(kSpecials)) continue;
    words.push_back(w);
  }
  return Tokenizer(std::move(words), options);
}

}  // namespace userllm
