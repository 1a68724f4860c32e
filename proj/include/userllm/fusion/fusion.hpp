#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "userllm/encoder/encoder.hpp"
#include "userllm/textlm/language_model.hpp"

namespace userllm {

enum class FusionMode { kCrossAttention, kSoftPrompt };

struct PerceiverConfig {
  bool enabled = false;
  int layers = 6;
  int latents = 16;
  int heads = 8;
};

struct FusionConfig {
  FusionMode mode = FusionMode::kCrossAttention;
  PerceiverConfig perceiver;
  int task_prompt_len = 10;
};

/// text + tanh(gate)·CrossAttention(LN(text) -> user). Keys and values are
/// projected straight from the encoder width; the gate starts at zero.
template <typename Scalar>
class CrossAttnBlock {
 public:
  CrossAttnBlock() = default;
  CrossAttnBlock(ParameterSet<Scalar>& params, const std::string& name, int d_lm, int d_e, int heads, Rng& rng);
  Var<Scalar> operator()(Graph<Scalar>& g, Var<Scalar> text_hidden, Var<Scalar> user) const;
  /// Packed form: text segment i attends to user segment i.
  Var<Scalar> operator()(Graph<Scalar>& g, Var<Scalar> text_hidden, Var<Scalar> user,
                         const AttentionLayout& layout) const;

  const TensorPtr<Scalar>& gate() const { return gate_; }
  const MultiHeadAttention<Scalar>& attention() const { return attn_; }

 private:
  LayerNorm<Scalar> norm_;
  MultiHeadAttention<Scalar> attn_;
  TensorPtr<Scalar> gate_;
};

/// Fixed-length resampler: trainable latents [latents, d_e] repeatedly
/// cross-attend to the user embeddings.
template <typename Scalar>
class Perceiver {
 public:
  Perceiver() = default;
  Perceiver(ParameterSet<Scalar>& params, const std::string& name, const PerceiverConfig& config, int d_e, Rng& rng);
  Var<Scalar> operator()(Graph<Scalar>& g, Var<Scalar> user) const;

  const TensorPtr<Scalar>& latents() const { return latents_; }
  int output_length() const { return config_.latents; }

 private:
  struct Layer {
    LayerNorm<Scalar> norm_q, norm_kv, norm_mlp;
    MultiHeadAttention<Scalar> attn;
    FeedForward<Scalar> mlp;
  };
  PerceiverConfig config_;
  TensorPtr<Scalar> latents_;
  std::vector<Layer> layers_;
  LayerNorm<Scalar> final_norm_;
};

/// Projection d_e -> d_lm plus a learned task prompt [len, d_lm].
template <typename Scalar>
class SoftPrompt {
 public:
  SoftPrompt() = default;
  SoftPrompt(ParameterSet<Scalar>& params, const std::string& name, int d_e, int d_lm, int prompt_len, Rng& rng);
  /// [proj(user) ; task prompt ; token embeddings]
  Var<Scalar> assemble(Graph<Scalar>& g, Var<Scalar> user, Var<Scalar> token_embeddings) const;
  int prompt_length() const { return prompt_len_; }
  const Linear<Scalar>& projection() const { return proj_; }

 private:
  Linear<Scalar> proj_;
  TensorPtr<Scalar> prompt_;
  int prompt_len_ = 0;
};

/// Logits of a decode plus the row holding the prediction after text token 0:
/// logits row offset + t scores text token t + 1.
template <typename Scalar>
struct Decoded {
  Var<Scalar> logits;
  Eigen::Index offset = 0;
  /// The [T_text, V] rows aligned with the text ids.
  Var<Scalar> text_logits() const { return slice_rows(logits, offset, logits.rows() - offset); }
};

/// A language model that may condition on a user's event window.
template <typename Scalar>
class ContextualLM {
 public:
  virtual ~ContextualLM() = default;
  /// User context for the window; empty (0 rows) for models without one.
  virtual std::optional<UserEmbeddings<Scalar>> context(Graph<Scalar>& g, std::span<const FeatureIds> events) const = 0;
  /// Decodes several (context, ids) pairs in one packed LM pass.
  virtual std::vector<Decoded<Scalar>> decode_batch(Graph<Scalar>& g,
                                                    std::span<const std::optional<Var<Scalar>>> contexts,
                                                    std::span<const std::span<const int>> ids) const = 0;
  Decoded<Scalar> decode(Graph<Scalar>& g, const std::optional<Var<Scalar>>& context, std::span<const int> ids) const {
    const std::span<const int> one[] = {ids};
    return decode_batch(g, std::span<const std::optional<Var<Scalar>>>(&context, 1), one).front();
  }
  virtual ParameterSet<Scalar>& params() = 0;
  virtual const ParameterSet<Scalar>& params() const = 0;
  virtual const LanguageModel<Scalar>& lm() const = 0;

  /// Gradient-free text logits for one window; the context is computed once.
  LogitsFn<Scalar> logits_fn(std::span<const FeatureIds> events) const;
};

enum class EncoderKind { kAutoregressive, kDual };

struct ModelSpec {
  EncoderKind encoder = EncoderKind::kAutoregressive;
  AREncoderConfig ar;
  DualEncoderConfig dual;
  LMConfig lm;
  FusionConfig fusion;
  std::optional<LoraConfig> lora;
};

void validate(const ModelSpec& spec);

/// Encoder (-> optional Perceiver) -> fusion adapter -> LM. Owns all
/// parameters, named encoder.*, fusion.* and lm.*.
template <typename Scalar>
class FusedModel final : public ContextualLM<Scalar> {
 public:
  FusedModel(const ModelSpec& spec, std::uint64_t seed);

  std::optional<UserEmbeddings<Scalar>> context(Graph<Scalar>& g, std::span<const FeatureIds> events) const override;
  std::vector<Decoded<Scalar>> decode_batch(Graph<Scalar>& g, std::span<const std::optional<Var<Scalar>>> contexts,
                                            std::span<const std::span<const int>> ids) const override;

  ParameterSet<Scalar>& params() override { return params_; }
  const ParameterSet<Scalar>& params() const override { return params_; }
  const LanguageModel<Scalar>& lm() const override { return *lm_; }
  const UserEncoder<Scalar>& encoder() const { return *encoder_; }
  const ModelSpec& spec() const { return spec_; }
  const std::vector<CrossAttnBlock<Scalar>>& cross_blocks() const { return cross_; }
  const std::optional<Perceiver<Scalar>>& perceiver() const { return perceiver_; }
  const std::optional<SoftPrompt<Scalar>>& soft_prompt() const { return soft_prompt_; }

 private:
  ModelSpec spec_;
  ParameterSet<Scalar> params_;
  std::unique_ptr<UserEncoder<Scalar>> encoder_;
  std::unique_ptr<LanguageModel<Scalar>> lm_;
  std::vector<CrossAttnBlock<Scalar>> cross_;
  std::optional<Perceiver<Scalar>> perceiver_;
  std::optional<SoftPrompt<Scalar>> soft_prompt_;
};

/// The language model alone; ignores the user window. Baseline for
/// measuring what the user context adds.
template <typename Scalar>
class PlainModel final : public ContextualLM<Scalar> {
 public:
  PlainModel(const LMConfig& config, std::uint64_t seed, const std::optional<LoraConfig>& lora = std::nullopt);

  std::optional<UserEmbeddings<Scalar>> context(Graph<Scalar>&, std::span<const FeatureIds>) const override {
    return std::nullopt;
  }
  std::vector<Decoded<Scalar>> decode_batch(Graph<Scalar>& g, std::span<const std::optional<Var<Scalar>>> contexts,
                                            std::span<const std::span<const int>> ids) const override;

  ParameterSet<Scalar>& params() override { return params_; }
  const ParameterSet<Scalar>& params() const override { return params_; }
  const LanguageModel<Scalar>& lm() const override { return *lm_; }

 private:
  ParameterSet<Scalar> params_;
  std::unique_ptr<LanguageModel<Scalar>> lm_;
};

}  // namespace userllm
