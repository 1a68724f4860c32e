#include "userllm/fusion/fusion.hpp"

#include <stdexcept>

namespace userllm {

namespace {

// Independent stream per component, so the LM starts from the same weights
// whatever encoder or adapters sit beside it.
Rng component_rng(std::uint64_t seed, std::uint64_t component) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(component)};
  return Rng(seq);
}

constexpr std::uint64_t kEncoderStream = 1, kLmStream = 2, kFusionStream = 3, kLoraStream = 4;

}  // namespace

// ---- CrossAttnBlock -------------------------------------------------------

template <typename Scalar>
CrossAttnBlock<Scalar>::CrossAttnBlock(ParameterSet<Scalar>& params, const std::string& name, int d_lm, int d_e,
                                       int heads, Rng& rng)
    : norm_(params, name + ".ln", d_lm), attn_(params, name + ".attn", d_lm, d_e, d_lm, heads, rng) {
  gate_ = params.add(name + ".gate", zeros<Scalar>(1, 1));
}

template <typename Scalar>
Var<Scalar> CrossAttnBlock<Scalar>::operator()(Graph<Scalar>& g, Var<Scalar> text_hidden, Var<Scalar> user) const {
  if (user.rows() == 0) throw std::invalid_argument("cross_attend_layer: no user embeddings");
  Var<Scalar> attended = attn_(g, norm_(g, text_hidden), user);
  return add(text_hidden, scale_by(attended, tanh(g.parameter(gate_))));
}

template <typename Scalar>
Var<Scalar> CrossAttnBlock<Scalar>::operator()(Graph<Scalar>& g, Var<Scalar> text_hidden, Var<Scalar> user,
                                               const AttentionLayout& layout) const {
  if (user.rows() == 0) throw std::invalid_argument("cross_attend_layer: no user embeddings");
  Var<Scalar> attended = attn_(g, norm_(g, text_hidden), user, layout);
  return add(text_hidden, scale_by(attended, tanh(g.parameter(gate_))));
}

// ---- Perceiver ------------------------------------------------------------

template <typename Scalar>
Perceiver<Scalar>::Perceiver(ParameterSet<Scalar>& params, const std::string& name, const PerceiverConfig& config,
                             int d_e, Rng& rng)
    : config_(config) {
  if (config_.layers < 1 || config_.latents < 1) throw std::invalid_argument("perceiver layers and latents must be >= 1");
  latents_ = params.add(name + ".latents", normal_matrix<Scalar>(config_.latents, d_e, kInitStd, rng));
  for (int l = 0; l < config_.layers; ++l) {
    const std::string prefix = name + ".layers." + std::to_string(l);
    Layer layer;
    layer.norm_q = LayerNorm<Scalar>(params, prefix + ".ln_q", d_e);
    layer.norm_kv = LayerNorm<Scalar>(params, prefix + ".ln_kv", d_e);
    layer.norm_mlp = LayerNorm<Scalar>(params, prefix + ".ln_mlp", d_e);
    layer.attn = MultiHeadAttention<Scalar>(params, prefix + ".attn", d_e, d_e, d_e, config_.heads, rng);
    layer.mlp = FeedForward<Scalar>(params, prefix + ".mlp", d_e, 4 * d_e, rng);
    layers_.push_back(std::move(layer));
  }
  final_norm_ = LayerNorm<Scalar>(params, name + ".ln_final", d_e);
}

template <typename Scalar>
Var<Scalar> Perceiver<Scalar>::operator()(Graph<Scalar>& g, Var<Scalar> user) const {
  if (user.rows() < 1) throw std::invalid_argument("perceiver_compress: no user embeddings");
  Var<Scalar> x = g.parameter(latents_);
  for (const auto& layer : layers_) {
    x = add(x, layer.attn(g, layer.norm_q(g, x), layer.norm_kv(g, user)));
    x = add(x, layer.mlp(g, layer.norm_mlp(g, x)));
  }
  return final_norm_(g, x);
}

// ---- SoftPrompt -----------------------------------------------------------

template <typename Scalar>
SoftPrompt<Scalar>::SoftPrompt(ParameterSet<Scalar>& params, const std::string& name, int d_e, int d_lm,
                               int prompt_len, Rng& rng)
    : proj_(params, name + ".proj", d_e, d_lm, rng), prompt_len_(prompt_len) {
  if (prompt_len < 1) throw std::invalid_argument("task prompt length must be >= 1");
  prompt_ = params.add(name + ".task_prompt", normal_matrix<Scalar>(prompt_len, d_lm, kInitStd, rng));
}

template <typename Scalar>
Var<Scalar> SoftPrompt<Scalar>::assemble(Graph<Scalar>& g, Var<Scalar> user, Var<Scalar> token_embeddings) const {
  const Var<Scalar> parts[] = {proj_(g, user), g.parameter(prompt_), token_embeddings};
  return concat_rows(std::span<const Var<Scalar>>(parts));
}

// ---- ContextualLM ---------------------------------------------------------

template <typename Scalar>
LogitsFn<Scalar> ContextualLM<Scalar>::logits_fn(std::span<const FeatureIds> events) const {
  std::optional<Matrix<Scalar>> ctx;
  {
    Graph<Scalar> g(false);
    if (auto c = context(g, events)) ctx = c->vectors.value();
  }
  return [this, ctx = std::move(ctx)](std::span<const int> ids) {
    Graph<Scalar> g(false);
    std::optional<Var<Scalar>> c;
    if (ctx) c = g.constant(*ctx);
    return Matrix<Scalar>(decode(g, c, ids).text_logits().value());
  };
}

// ---- FusedModel -----------------------------------------------------------

void validate(const ModelSpec& spec) {
  int d_e = 0;
  if (spec.encoder == EncoderKind::kAutoregressive) {
    validate(spec.ar);
    d_e = spec.ar.d_model;
  } else {
    validate(spec.dual);
    d_e = spec.dual.d_model;
  }
  validate(spec.lm);
  if (spec.lm.d_lm < d_e) throw std::invalid_argument("lm.d_lm must be >= the encoder width");
  if (spec.fusion.perceiver.enabled) {
    const auto& p = spec.fusion.perceiver;
    if (p.layers < 1) throw std::invalid_argument("fusion.perceiver.layers must be >= 1");
    if (p.latents < 1) throw std::invalid_argument("fusion.perceiver.latents must be >= 1");
    if (p.heads < 1 || d_e % p.heads != 0) throw std::invalid_argument("encoder width must be divisible by fusion.perceiver.heads");
  }
  if (spec.fusion.mode == FusionMode::kSoftPrompt && spec.fusion.task_prompt_len < 1) {
    throw std::invalid_argument("fusion.task_prompt_len must be >= 1");
  }
  if (spec.lora && spec.lora->rank < 1) throw std::invalid_argument("lora rank must be >= 1");
}

template <typename Scalar>
FusedModel<Scalar>::FusedModel(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
  validate(spec_);
  Rng enc_rng = component_rng(seed, kEncoderStream);
  if (spec_.encoder == EncoderKind::kAutoregressive) {
    encoder_ = std::make_unique<ArEncoder<Scalar>>(spec_.ar, params_, enc_rng);
  } else {
    encoder_ = std::make_unique<DualEncoder<Scalar>>(spec_.dual, params_, enc_rng);
  }
  Rng lm_rng = component_rng(seed, kLmStream);
  lm_ = std::make_unique<LanguageModel<Scalar>>(spec_.lm, params_, lm_rng);
  if (spec_.lora) {
    Rng lora_rng = component_rng(seed, kLoraStream);
    lm_->inject_lora(params_, *spec_.lora, lora_rng);
  }

  const int d_e = encoder_->output_dim();
  Rng rng = component_rng(seed, kFusionStream);
  if (spec_.fusion.perceiver.enabled) {
    perceiver_.emplace(params_, "fusion.perceiver", spec_.fusion.perceiver, d_e, rng);
  }
  if (spec_.fusion.mode == FusionMode::kCrossAttention) {
    for (int l = 0; l < spec_.lm.layers; ++l) {
      cross_.emplace_back(params_, "fusion.cross." + std::to_string(l), spec_.lm.d_lm, d_e, spec_.lm.heads, rng);
    }
  } else {
    soft_prompt_.emplace(params_, "fusion.soft_prompt", d_e, spec_.lm.d_lm, spec_.fusion.task_prompt_len, rng);
  }
}

template <typename Scalar>
std::optional<UserEmbeddings<Scalar>> FusedModel<Scalar>::context(Graph<Scalar>& g,
                                                                  std::span<const FeatureIds> events) const {
  UserEmbeddings<Scalar> embs = encoder_->embed(g, events);
  if (perceiver_) embs = {(*perceiver_)(g, embs.vectors), Provenance::kPerceiverCompressed};
  return embs;
}

namespace {

template <typename Scalar>
std::vector<Decoded<Scalar>> split_packed(Var<Scalar> logits, const std::vector<Eigen::Index>& lengths,
                                          const std::vector<Eigen::Index>& offsets) {
  std::vector<Decoded<Scalar>> out;
  if (lengths.size() == 1) return {Decoded<Scalar>{logits, offsets[0]}};
  Eigen::Index start = 0;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    out.push_back({slice_rows(logits, start, lengths[i]), offsets[i]});
    start += lengths[i];
  }
  return out;
}

}  // namespace

template <typename Scalar>
std::vector<Decoded<Scalar>> FusedModel<Scalar>::decode_batch(Graph<Scalar>& g,
                                                              std::span<const std::optional<Var<Scalar>>> contexts,
                                                              std::span<const std::span<const int>> ids) const {
  if (contexts.size() != ids.size() || ids.empty()) throw std::invalid_argument("decode_batch: mismatched inputs");
  std::vector<Var<Scalar>> inputs, users;
  std::vector<Eigen::Index> lengths, user_lengths, offsets;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!contexts[i]) throw std::invalid_argument("fused decode needs a user context");
    const Var<Scalar> user = *contexts[i];
    Var<Scalar> tokens = lm_->embed_tokens(g, ids[i]);
    const auto text = static_cast<Eigen::Index>(ids[i].size());
    if (soft_prompt_) {
      const Eigen::Index offset = user.rows() + soft_prompt_->prompt_length();
      if (offset + text > spec_.lm.max_context) {
        throw ContextOverflow("soft prompt input of " + std::to_string(offset + text) +
                              " positions exceeds max_context " + std::to_string(spec_.lm.max_context));
      }
      inputs.push_back(soft_prompt_->assemble(g, user, tokens));
      lengths.push_back(offset + text);
      offsets.push_back(offset);
    } else {
      if (text > spec_.lm.max_context) {
        throw ContextOverflow("text of " + std::to_string(text) + " tokens exceeds max_context " +
                              std::to_string(spec_.lm.max_context));
      }
      inputs.push_back(tokens);
      users.push_back(user);
      lengths.push_back(text);
      user_lengths.push_back(user.rows());
      offsets.push_back(0);
    }
  }
  Var<Scalar> packed = inputs.size() == 1 ? inputs[0] : concat_rows(std::span<const Var<Scalar>>(inputs));
  if (soft_prompt_) return split_packed(lm_->forward_packed(g, packed, lengths), lengths, offsets);

  Var<Scalar> user = users.size() == 1 ? users[0] : concat_rows(std::span<const Var<Scalar>>(users));
  const AttentionLayout layout{lengths, user_lengths, false};
  typename LanguageModel<Scalar>::LayerHook hook = [this, user, &layout, &g](int layer, Var<Scalar> h) {
    return cross_[static_cast<std::size_t>(layer)](g, h, user, layout);
  };
  return split_packed(lm_->forward_packed(g, packed, lengths, hook), lengths, offsets);
}

// ---- PlainModel -----------------------------------------------------------

template <typename Scalar>
PlainModel<Scalar>::PlainModel(const LMConfig& config, std::uint64_t seed, const std::optional<LoraConfig>& lora) {
  Rng lm_rng = component_rng(seed, kLmStream);
  lm_ = std::make_unique<LanguageModel<Scalar>>(config, params_, lm_rng);
  if (lora) {
    Rng lora_rng = component_rng(seed, kLoraStream);
    lm_->inject_lora(params_, *lora, lora_rng);
  }
}

template <typename Scalar>
std::vector<Decoded<Scalar>> PlainModel<Scalar>::decode_batch(Graph<Scalar>& g,
                                                              std::span<const std::optional<Var<Scalar>>> contexts,
                                                              std::span<const std::span<const int>> ids) const {
  if (contexts.size() != ids.size() || ids.empty()) throw std::invalid_argument("decode_batch: mismatched inputs");
  std::vector<Var<Scalar>> inputs;
  std::vector<Eigen::Index> lengths;
  for (const auto& seq : ids) {
    if (static_cast<int>(seq.size()) > lm_->config().max_context) {
      throw ContextOverflow("text of " + std::to_string(seq.size()) + " tokens exceeds max_context " +
                            std::to_string(lm_->config().max_context));
    }
    inputs.push_back(lm_->embed_tokens(g, seq));
    lengths.push_back(static_cast<Eigen::Index>(seq.size()));
  }
  Var<Scalar> packed = inputs.size() == 1 ? inputs[0] : concat_rows(std::span<const Var<Scalar>>(inputs));
  return split_packed(lm_->forward_packed(g, packed, lengths), lengths, std::vector<Eigen::Index>(lengths.size(), 0));
}

template class CrossAttnBlock<float>;
template class CrossAttnBlock<double>;
template class Perceiver<float>;
template class Perceiver<double>;
template class SoftPrompt<float>;
template class SoftPrompt<double>;
template class ContextualLM<float>;
template class ContextualLM<double>;
template class FusedModel<float>;
template class FusedModel<double>;
template class PlainModel<float>;
template class PlainModel<double>;

}  // namespace userllm
