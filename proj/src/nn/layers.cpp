#include "userllm/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace userllm {

template <typename Scalar>
Linear<Scalar>::Linear(ParameterSet<Scalar>& params, const std::string& name, int in, int out, Rng& rng, bool bias,
                       double init_std)
    : name_(name), in_(in), out_(out) {
  if (in < 1 || out < 1) throw std::invalid_argument(name + ": dims must be positive");
  weight_ = params.add(name + ".weight", normal_matrix<Scalar>(in, out, init_std, rng));
  if (bias) bias_ = params.add(name + ".bias", zeros<Scalar>(1, out));
}

template <typename Scalar>
Var<Scalar> Linear<Scalar>::operator()(Graph<Scalar>& g, Var<Scalar> x) const {
  Var<Scalar> y = matmul(x, g.parameter(weight_));
  if (lora_) {
    // x·Bᵀ·Aᵀ == x·(A·B)ᵀ; exactly zero while A is zero.
    Var<Scalar> down = matmul_transposed(x, g.parameter(lora_->b));
    Var<Scalar> up = matmul_transposed(down, g.parameter(lora_->a));
    y = add(y, scale(up, lora_->scale));
  }
  if (bias_) y = add_row(y, g.parameter(bias_));
  return y;
}

template <typename Scalar>
std::size_t Linear<Scalar>::attach_lora(ParameterSet<Scalar>& params, int rank, double alpha, Rng& rng) {
  if (lora_) throw std::logic_error(name_ + ": LoRA adapter already attached");
  if (rank < 1) throw std::invalid_argument(name_ + ": LoRA rank must be >= 1");
  if (rank >= std::min(in_, out_)) {
    throw std::invalid_argument(name_ + ": LoRA rank " + std::to_string(rank) + " must be below min(out, in) = " +
                                std::to_string(std::min(in_, out_)));
  }
  LoraAdapter<Scalar> adapter;
  adapter.rank = rank;
  adapter.scale = static_cast<Scalar>(alpha / rank);
  adapter.a = params.add(name_ + ".lora_a", zeros<Scalar>(out_, rank));
  adapter.b = params.add(name_ + ".lora_b", normal_matrix<Scalar>(rank, in_, 1.0 / std::sqrt(in_), rng));
  lora_ = std::move(adapter);
  return static_cast<std::size_t>(rank) * static_cast<std::size_t>(in_ + out_);
}

template <typename Scalar>
LayerNorm<Scalar>::LayerNorm(ParameterSet<Scalar>& params, const std::string& name, int width) {
  gamma_ = params.add(name + ".gamma", ones<Scalar>(1, width));
  beta_ = params.add(name + ".beta", zeros<Scalar>(1, width));
}

template <typename Scalar>
Var<Scalar> LayerNorm<Scalar>::operator()(Graph<Scalar>& g, Var<Scalar> x) const {
  return layer_norm(x, g.parameter(gamma_), g.parameter(beta_), static_cast<Scalar>(kEps));
}

template <typename Scalar>
MultiHeadAttention<Scalar>::MultiHeadAttention(ParameterSet<Scalar>& params, const std::string& name,
                                               int query_width, int kv_width, int model_width, int heads, Rng& rng)
    : q_(params, name + ".q", query_width, model_width, rng),
      k_(params, name + ".k", kv_width, model_width, rng),
      v_(params, name + ".v", kv_width, model_width, rng),
      o_(params, name + ".o", model_width, query_width, rng),
      heads_(heads) {
  if (heads < 1 || model_width % heads != 0) {
    throw std::invalid_argument(name + ": width " + std::to_string(model_width) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
}

template <typename Scalar>
Var<Scalar> MultiHeadAttention<Scalar>::operator()(Graph<Scalar>& g, Var<Scalar> queries, Var<Scalar> keys_values,
                                                   const std::optional<BoolMatrix>& mask) const {
  Var<Scalar> q = q_(g, queries);
  Var<Scalar> k = k_(g, keys_values);
  Var<Scalar> v = v_(g, keys_values);
  return o_(g, attention(q, k, v, heads_, mask));
}

template <typename Scalar>
Var<Scalar> MultiHeadAttention<Scalar>::operator()(Graph<Scalar>& g, Var<Scalar> queries, Var<Scalar> keys_values,
                                                   const AttentionLayout& layout) const {
  const auto& ql = layout.query_lengths;
  const auto& kl = layout.key_lengths;
  if (ql.size() != kl.size() || ql.empty()) throw std::invalid_argument("attention layout: segment counts differ");
  Var<Scalar> q = q_(g, queries);
  Var<Scalar> k = k_(g, keys_values);
  Var<Scalar> v = v_(g, keys_values);
  if (ql.size() == 1) {
    std::optional<BoolMatrix> mask;
    if (layout.causal) mask = causal_mask(ql[0]);
    return o_(g, attention(q, k, v, heads_, mask));
  }
  std::vector<Var<Scalar>> parts;
  Eigen::Index qo = 0, ko = 0;
  for (std::size_t s = 0; s < ql.size(); ++s) {
    if (layout.causal && ql[s] != kl[s]) throw std::invalid_argument("causal attention layout needs equal lengths");
    std::optional<BoolMatrix> mask;
    if (layout.causal) mask = causal_mask(ql[s]);
    parts.push_back(attention(slice_rows(q, qo, ql[s]), slice_rows(k, ko, kl[s]), slice_rows(v, ko, kl[s]), heads_, mask));
    qo += ql[s];
    ko += kl[s];
  }
  if (qo != queries.rows() || ko != keys_values.rows()) {
    throw std::invalid_argument("attention layout lengths do not cover the packed inputs");
  }
  return o_(g, concat_rows(std::span<const Var<Scalar>>(parts)));
}

template <typename Scalar>
FeedForward<Scalar>::FeedForward(ParameterSet<Scalar>& params, const std::string& name, int width, int hidden,
                                 Rng& rng)
    : up_(params, name + ".up", width, hidden, rng), down_(params, name + ".down", hidden, width, rng) {}

template <typename Scalar>
Var<Scalar> FeedForward<Scalar>::operator()(Graph<Scalar>& g, Var<Scalar> x) const {
  return down_(g, gelu(up_(g, x)));
}

template <typename Scalar>
TransformerBlock<Scalar>::TransformerBlock(ParameterSet<Scalar>& params, const std::string& name, int width,
                                           int heads, Rng& rng)
    : ln_attn_(params, name + ".ln_attn", width),
      ln_mlp_(params, name + ".ln_mlp", width),
      attn_(params, name + ".attn", width, width, width, heads, rng),
      mlp_(params, name + ".mlp", width, 4 * width, rng) {}

template <typename Scalar>
Var<Scalar> TransformerBlock<Scalar>::operator()(Graph<Scalar>& g, Var<Scalar> x,
                                                 const std::optional<BoolMatrix>& mask,
                                                 const Hook& after_attention) const {
  Var<Scalar> normed = ln_attn_(g, x);
  x = add(x, attn_(g, normed, normed, mask));
  if (after_attention) x = after_attention(x);
  return add(x, mlp_(g, ln_mlp_(g, x)));
}

template <typename Scalar>
Var<Scalar> TransformerBlock<Scalar>::operator()(Graph<Scalar>& g, Var<Scalar> x, const AttentionLayout& layout,
                                                 const Hook& after_attention) const {
  Var<Scalar> normed = ln_attn_(g, x);
  x = add(x, attn_(g, normed, normed, layout));
  if (after_attention) x = after_attention(x);
  return add(x, mlp_(g, ln_mlp_(g, x)));
}

template class Linear<float>;
template class Linear<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;
template class MultiHeadAttention<float>;
template class MultiHeadAttention<double>;
template class FeedForward<float>;
template class FeedForward<double>;
template class TransformerBlock<float>;
template class TransformerBlock<double>;

}  // namespace userllm
