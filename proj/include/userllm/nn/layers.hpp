#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "userllm/numerics/autograd.hpp"
#include "userllm/numerics/random.hpp"

namespace userllm {

inline constexpr double kInitStd = 0.02;

/// Low-rank additive update W + (alpha/r)·A·B on a frozen base weight, with
/// A: [out, r] zero-initialized and B: [r, in] random.
template <typename Scalar>
struct LoraAdapter {
  TensorPtr<Scalar> a;
  TensorPtr<Scalar> b;
  int rank = 0;
  Scalar scale = 0;
};

/// y = x·W + b with W stored [in, out].
template <typename Scalar>
class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet<Scalar>& params, const std::string& name, int in, int out, Rng& rng, bool bias = true,
         double init_std = kInitStd);

  Var<Scalar> operator()(Graph<Scalar>& g, Var<Scalar> x) const;

  /// Adds a LoRA adapter registered as <name>.lora_a / <name>.lora_b.
  /// Returns the number of scalars added, rank·(in + out).
  std::size_t attach_lora(ParameterSet<Scalar>& params, int rank, double alpha, Rng& rng);

  const std::string& name() const { return name_; }
  int in_features() const { return in_; }
  int out_features() const { return out_; }
  const TensorPtr<Scalar>& weight() const { return weight_; }
  const TensorPtr<Scalar>& bias() const { return bias_; }
  const std::optional<LoraAdapter<Scalar>>& lora() const { return lora_; }

 private:
  std::string name_;
  int in_ = 0;
  int out_ = 0;
  TensorPtr<Scalar> weight_;
  TensorPtr<Scalar> bias_;
  std::optional<LoraAdapter<Scalar>> lora_;
};

template <typename Scalar>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterSet<Scalar>& params, const std::string& name, int width);
  Var<Scalar> operator()(Graph<Scalar>& g, Var<Scalar> x) const;

  static constexpr double kEps = 1e-5;

 private:
  TensorPtr<Scalar> gamma_;
  TensorPtr<Scalar> beta_;
};

/// Independent sequences packed row-wise into one matrix: rows of query
/// segment i attend only to rows of key segment i, causally when `causal`
/// (which requires equal query and key lengths).
struct AttentionLayout {
  std::vector<Eigen::Index> query_lengths;
  std::vector<Eigen::Index> key_lengths;
  bool causal = false;

  static AttentionLayout self(std::vector<Eigen::Index> lengths, bool causal) {
    return {lengths, lengths, causal};
  }
};

/// Multi-head attention with separate query and key/value input widths.
/// Projects queries from query_width and keys/values from kv_width into
/// model_width; the output projection maps back to query_width.
template <typename Scalar>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterSet<Scalar>& params, const std::string& name, int query_width, int kv_width,
                     int model_width, int heads, Rng& rng);

  Var<Scalar> operator()(Graph<Scalar>& g, Var<Scalar> queries, Var<Scalar> keys_values,
                         const std::optional<BoolMatrix>& mask = std::nullopt) const;
  Var<Scalar> operator()(Graph<Scalar>& g, Var<Scalar> queries, Var<Scalar> keys_values,
                         const AttentionLayout& layout) const;

  Linear<Scalar>& query() { return q_; }
  Linear<Scalar>& key() { return k_; }
  Linear<Scalar>& value() { return v_; }
  Linear<Scalar>& output() { return o_; }
  const Linear<Scalar>& key() const { return k_; }
  const Linear<Scalar>& value() const { return v_; }
  int heads() const { return heads_; }

 private:
  Linear<Scalar> q_, k_, v_, o_;
  int heads_ = 1;
};

template <typename Scalar>
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParameterSet<Scalar>& params, const std::string& name, int width, int hidden, Rng& rng);
  Var<Scalar> operator()(Graph<Scalar>& g, Var<Scalar> x) const;

 private:
  Linear<Scalar> up_, down_;
};

/// Pre-norm transformer layer: x + Attn(LN(x)), optional hook, x + MLP(LN(x)).
template <typename Scalar>
class TransformerBlock {
 public:
  using Hook = std::function<Var<Scalar>(Var<Scalar>)>;

  TransformerBlock() = default;
  TransformerBlock(ParameterSet<Scalar>& params, const std::string& name, int width, int heads, Rng& rng);

  Var<Scalar> operator()(Graph<Scalar>& g, Var<Scalar> x, const std::optional<BoolMatrix>& mask,
                         const Hook& after_attention = {}) const;
  Var<Scalar> operator()(Graph<Scalar>& g, Var<Scalar> x, const AttentionLayout& layout,
                         const Hook& after_attention = {}) const;

  MultiHeadAttention<Scalar>& attention() { return attn_; }

 private:
  LayerNorm<Scalar> ln_attn_, ln_mlp_;
  MultiHeadAttention<Scalar> attn_;
  FeedForward<Scalar> mlp_;
};

}  // namespace userllm
