#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "userllm/events/events.hpp"
#include "userllm/nn/layers.hpp"

namespace userllm {

enum class Provenance { kAutoregressive, kDual, kPerceiverCompressed };

/// Vectors distilled from a user's history: [T, d_e].
template <typename Scalar>
struct UserEmbeddings {
  Var<Scalar> vectors;
  Provenance provenance = Provenance::kAutoregressive;
};

/// Anything that turns a window of encoded events into user embeddings.
template <typename Scalar>
class UserEncoder {
 public:
  virtual ~UserEncoder() = default;
  virtual UserEmbeddings<Scalar> embed(Graph<Scalar>& g, std::span<const FeatureIds> events) const = 0;
  virtual int output_dim() const = 0;
};

struct AREncoderConfig {
  int layers = 6;
  int d_model = 128;
  int heads = 8;
  std::vector<int> vocab_sizes;  // one per modality, fixed modality order
  int max_seq_len = 50;
};

/// Widths of the per-modality embedding slices. They sum to d_model; when
/// d_model is not a multiple of the modality count the leading modalities
/// take one extra column each (128 over 3 -> 43, 43, 42).
std::vector<int> modality_slice_widths(int d_model, int modalities);

void validate(const AREncoderConfig& config);

/// Early-fusion autoregressive Transformer. Each modality m owns one table
/// E_m: [V_m, w_m] used both to embed inputs and, transposed, to produce the
/// modality's next-event logits from the matching slice of the hidden state.
template <typename Scalar>
class ArEncoder final : public UserEncoder<Scalar> {
 public:
  ArEncoder(const AREncoderConfig& config, ParameterSet<Scalar>& params, Rng& rng,
            const std::string& prefix = "encoder");

  /// Concatenated per-modality embeddings of one event: [1, d_model].
  Var<Scalar> fuse_early(Graph<Scalar>& g, const FeatureIds& ids) const;
  /// Fused embeddings of a sequence: [T, d_model].
  Var<Scalar> fuse_early(Graph<Scalar>& g, std::span<const FeatureIds> events) const;
  /// Causal Transformer outputs, one per event: [T, d_model].
  Var<Scalar> encode(Graph<Scalar>& g, std::span<const FeatureIds> events) const;
  UserEmbeddings<Scalar> embed(Graph<Scalar>& g, std::span<const FeatureIds> events) const override;
  /// Mean over positions 0..T−2 and modalities of the cross-entropy of
  /// event t+1's id under the tied logits of hidden state t.
  Var<Scalar> pretrain_loss(Graph<Scalar>& g, std::span<const FeatureIds> events) const;

  int output_dim() const override { return config_.d_model; }
  const AREncoderConfig& config() const { return config_; }
  const TensorPtr<Scalar>& embedding_table(std::size_t modality) const { return tables_.at(modality); }
  const std::vector<int>& slice_widths() const { return widths_; }

 private:
  AREncoderConfig config_;
  std::vector<int> widths_;
  std::vector<TensorPtr<Scalar>> tables_;
  TensorPtr<Scalar> positions_;
  std::vector<TransformerBlock<Scalar>> blocks_;
  LayerNorm<Scalar> final_norm_;
};

enum class DualFusion { kMean, kConcatMlp };

struct DualEncoderConfig {
  int layers = 2;
  int d_model = 128;
  int heads = 8;
  std::vector<int> vocab_sizes;
  int max_seq_len = 50;
  DualFusion fusion = DualFusion::kMean;
  int num_outputs = 1;  // K user embeddings
  int fusion_hidden = 256;
};

void validate(const DualEncoderConfig& config);

/// Concatenates per-modality pooled vectors [1, d] each and maps them
/// through a two-layer MLP to K output vectors [K, d].
template <typename Scalar>
class LateFusion {
 public:
  LateFusion() = default;
  LateFusion(ParameterSet<Scalar>& params, const std::string& name, int modalities, int width, int hidden,
             int outputs, Rng& rng);
  Var<Scalar> operator()(Graph<Scalar>& g, std::span<const Var<Scalar>> pooled) const;

  Linear<Scalar>& input_layer() { return in_; }
  Linear<Scalar>& output_layer() { return out_; }

 private:
  Linear<Scalar> in_, out_;
  int modalities_ = 0, width_ = 0, outputs_ = 0;
};

/// Two-tower model: the user tower encodes the history, the label tower
/// embeds the next item's name id; trained with an in-batch softmax.
///
/// With fusion = mean the user tower is one bidirectional Transformer over
/// early-fused events, mean-pooled to a single vector. With concat-MLP each
/// modality has its own Transformer (late fusion) and LateFusion combines
/// their pooled outputs into K vectors.
template <typename Scalar>
class DualEncoder final : public UserEncoder<Scalar> {
 public:
  DualEncoder(const DualEncoderConfig& config, ParameterSet<Scalar>& params, Rng& rng,
              const std::string& prefix = "encoder");

  /// Pair of tower outputs: user [K, d] and labels [C, d].
  struct Encoded {
    Var<Scalar> user;
    Var<Scalar> labels;
  };

  Var<Scalar> user_tower(Graph<Scalar>& g, std::span<const FeatureIds> events) const;
  Var<Scalar> label_tower(Graph<Scalar>& g, std::span<const int> name_ids) const;
  Encoded dual_encode(Graph<Scalar>& g, std::span<const FeatureIds> events, std::span<const int> candidates) const;
  UserEmbeddings<Scalar> embed(Graph<Scalar>& g, std::span<const FeatureIds> events) const override;

  struct Example {
    std::vector<FeatureIds> events;
    int next_name_id = 0;
  };
  /// logits[i][j] = user_i · label_j / τ with τ = exp(log_tau) learnable;
  /// mean cross-entropy against the diagonal. Requires B >= 2.
  Var<Scalar> pretrain_loss(Graph<Scalar>& g, std::span<const Example> batch) const;
  /// Row-wise logits of the same in-batch similarity (no loss), for probes.
  Var<Scalar> similarity(Graph<Scalar>& g, std::span<const Example> batch) const;

  int output_dim() const override { return config_.d_model; }
  const DualEncoderConfig& config() const { return config_; }
  LateFusion<Scalar>& late_fusion() { return late_fusion_; }

 private:
  struct Tower {
    std::vector<TensorPtr<Scalar>> tables;
    TensorPtr<Scalar> positions;
    std::vector<TransformerBlock<Scalar>> blocks;
    LayerNorm<Scalar> final_norm;
  };
  Tower make_tower(ParameterSet<Scalar>& params, const std::string& name, std::vector<int> vocab,
                   std::vector<int> widths, Rng& rng) const;
  Var<Scalar> run_tower(Graph<Scalar>& g, const Tower& tower, std::span<const FeatureIds> events,
                        std::span<const std::size_t> modalities) const;

  DualEncoderConfig config_;
  std::vector<Tower> towers_;  // one shared tower (mean) or one per modality
  LateFusion<Scalar> late_fusion_;
  TensorPtr<Scalar> label_table_;
  TensorPtr<Scalar> log_tau_;
};

}  // namespace userllm
