#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "userllm/nn/layers.hpp"

namespace userllm {

struct LMConfig {
  int layers = 4;
  int d_lm = 256;
  int heads = 8;
  int vocab = 0;
  int max_context = 256;
};

void validate(const LMConfig& config);

struct LoraConfig {
  int rank = 8;
  double alpha = 16.0;
};

/// Thrown when a sequence does not fit the model's context window.
class ContextOverflow : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// Decoder-only Transformer with tied token embeddings and learned positions.
template <typename Scalar>
class LanguageModel {
 public:
  /// Called after self-attention in layer `layer`; returns the new hidden state.
  using LayerHook = std::function<Var<Scalar>(int layer, Var<Scalar> hidden)>;

  LanguageModel(const LMConfig& config, ParameterSet<Scalar>& params, Rng& rng, const std::string& prefix = "lm");

  /// Token embedding rows: [T, d_lm].
  Var<Scalar> embed_tokens(Graph<Scalar>& g, std::span<const int> ids) const;
  /// Causal pass over an arbitrary input embedding sequence: [T, d_lm] -> logits [T, V].
  Var<Scalar> forward_embeddings(Graph<Scalar>& g, Var<Scalar> inputs, const LayerHook& hook = {}) const;
  /// Independent sequences packed row-wise; lengths sum to inputs.rows().
  /// Row for row the same logits as running each sequence on its own.
  Var<Scalar> forward_packed(Graph<Scalar>& g, Var<Scalar> inputs, const std::vector<Eigen::Index>& lengths,
                             const LayerHook& hook = {}) const;
  Var<Scalar> forward(Graph<Scalar>& g, std::span<const int> ids) const;

  /// Attaches LoRA adapters to the query and value projections of every
  /// layer. Returns the number of adapter scalars added.
  std::size_t inject_lora(ParameterSet<Scalar>& params, const LoraConfig& lora, Rng& rng);

  const LMConfig& config() const { return config_; }
  const TensorPtr<Scalar>& token_embedding() const { return tokens_; }

 private:
  LMConfig config_;
  TensorPtr<Scalar> tokens_;
  TensorPtr<Scalar> positions_;
  std::vector<TransformerBlock<Scalar>> blocks_;
  LayerNorm<Scalar> final_norm_;
};

/// Adds LoRA to the model's Q/V projections; see LanguageModel::inject_lora.
template <typename Scalar>
std::size_t lora_inject(LanguageModel<Scalar>& model, ParameterSet<Scalar>& params, const LoraConfig& lora, Rng& rng) {
  return model.inject_lora(params, lora, rng);
}

/// Next-token logits for every position of an id sequence, [T, V].
/// Implementations throw ContextOverflow when the sequence does not fit.
template <typename Scalar>
using LogitsFn = std::function<Matrix<Scalar>(std::span<const int> ids)>;

/// Gradient-free logits of a plain language model.
template <typename Scalar>
LogitsFn<Scalar> logits_fn(const LanguageModel<Scalar>& model);

enum class DecodeMode { kGreedy, kTopK };

struct GenerateOptions {
  DecodeMode mode = DecodeMode::kGreedy;
  int top_k = 5;
  std::uint64_t seed = 0;
  int eos = 3;
};

/// Appends up to max_new tokens to prefix, stopping after EOS or when the
/// context is full. Returns prefix followed by the new tokens.
template <typename Scalar>
std::vector<int> generate(const LogitsFn<Scalar>& model, std::vector<int> prefix, int max_new,
                          const GenerateOptions& options = {}, int max_context = 0);

/// Σ_t log p(continuation_t | prefix, continuation_<t). Zero for an empty
/// continuation.
template <typename Scalar>
double score_sequence(const LogitsFn<Scalar>& model, std::span<const int> prefix, std::span<const int> continuation);

}  // namespace userllm
