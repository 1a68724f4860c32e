#include "userllm/textlm/language_model.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>

namespace userllm {

void validate(const LMConfig& c) {
  if (c.layers < 1) throw std::invalid_argument("lm.layers must be >= 1");
  if (c.heads < 1 || c.d_lm % c.heads != 0) throw std::invalid_argument("lm.d_lm must be divisible by lm.heads");
  if (c.vocab < 4) throw std::invalid_argument("lm.vocab must hold at least the 4 special tokens");
  if (c.max_context < 1) throw std::invalid_argument("lm.max_context must be >= 1");
}

template <typename Scalar>
LanguageModel<Scalar>::LanguageModel(const LMConfig& config, ParameterSet<Scalar>& params, Rng& rng,
                                     const std::string& prefix)
    : config_(config) {
  validate(config_);
  Matrix<Scalar> table = normal_matrix<Scalar>(config_.vocab, config_.d_lm, kInitStd, rng);
  table.row(0).setZero();
  tokens_ = params.add(prefix + ".embed", std::move(table));
  positions_ = params.add(prefix + ".positions", normal_matrix<Scalar>(config_.max_context, config_.d_lm, kInitStd, rng));
  for (int l = 0; l < config_.layers; ++l) {
    blocks_.emplace_back(params, prefix + ".layers." + std::to_string(l), config_.d_lm, config_.heads, rng);
  }
  final_norm_ = LayerNorm<Scalar>(params, prefix + ".ln_final", config_.d_lm);
}

template <typename Scalar>
Var<Scalar> LanguageModel<Scalar>::embed_tokens(Graph<Scalar>& g, std::span<const int> ids) const {
  for (int id : ids) {
    if (id < 0 || id >= config_.vocab) throw std::out_of_range("token id " + std::to_string(id) + " outside vocab");
  }
  return gather_rows(g.parameter(tokens_), ids);
}

template <typename Scalar>
Var<Scalar> LanguageModel<Scalar>::forward_embeddings(Graph<Scalar>& g, Var<Scalar> inputs,
                                                      const LayerHook& hook) const {
  return forward_packed(g, inputs, {inputs.rows()}, hook);
}

template <typename Scalar>
Var<Scalar> LanguageModel<Scalar>::forward_packed(Graph<Scalar>& g, Var<Scalar> inputs,
                                                  const std::vector<Eigen::Index>& lengths,
                                                  const LayerHook& hook) const {
  std::vector<int> position_ids;
  for (Eigen::Index length : lengths) {
    if (length < 1) throw std::invalid_argument("lm_forward: empty input");
    if (length > config_.max_context) {
      throw ContextOverflow("lm_forward: " + std::to_string(length) + " positions exceed max_context " +
                            std::to_string(config_.max_context));
    }
    for (Eigen::Index t = 0; t < length; ++t) position_ids.push_back(static_cast<int>(t));
  }
  if (static_cast<Eigen::Index>(position_ids.size()) != inputs.rows()) {
    throw std::invalid_argument("lm_forward: lengths do not cover the packed inputs");
  }
  Var<Scalar> positions = lengths.size() == 1 ? slice_rows(g.parameter(positions_), 0, lengths[0])
                                              : gather_rows(g.parameter(positions_), std::span<const int>(position_ids));
  Var<Scalar> x = add(inputs, positions);
  const AttentionLayout layout = AttentionLayout::self(lengths, true);
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    typename TransformerBlock<Scalar>::Hook after;
    if (hook) after = [&hook, l](Var<Scalar> h) { return hook(static_cast<int>(l), h); };
    x = blocks_[l](g, x, layout, after);
  }
  return matmul_transposed(final_norm_(g, x), g.parameter(tokens_));
}

template <typename Scalar>
Var<Scalar> LanguageModel<Scalar>::forward(Graph<Scalar>& g, std::span<const int> ids) const {
  if (static_cast<int>(ids.size()) > config_.max_context) {
    throw ContextOverflow("lm_forward: " + std::to_string(ids.size()) + " tokens exceed max_context " +
                          std::to_string(config_.max_context));
  }
  return forward_embeddings(g, embed_tokens(g, ids));
}

template <typename Scalar>
std::size_t LanguageModel<Scalar>::inject_lora(ParameterSet<Scalar>& params, const LoraConfig& lora, Rng& rng) {
  std::size_t added = 0;
  for (auto& block : blocks_) {
    added += block.attention().query().attach_lora(params, lora.rank, lora.alpha, rng);
    added += block.attention().value().attach_lora(params, lora.rank, lora.alpha, rng);
  }
  return added;
}

template <typename Scalar>
LogitsFn<Scalar> logits_fn(const LanguageModel<Scalar>& model) {
  return [&model](std::span<const int> ids) {
    Graph<Scalar> g(false);
    return Matrix<Scalar>(model.forward(g, ids).value());
  };
}

template <typename Scalar>
std::vector<int> generate(const LogitsFn<Scalar>& model, std::vector<int> prefix, int max_new,
                          const GenerateOptions& options, int max_context) {
  if (prefix.empty()) throw std::invalid_argument("generate: prefix must be nonempty");
  if (options.mode == DecodeMode::kTopK && options.top_k < 1) throw std::invalid_argument("generate: top_k must be >= 1");
  Rng rng(options.seed);
  for (int step = 0; step < max_new; ++step) {
    if (max_context > 0 && static_cast<int>(prefix.size()) >= max_context) break;
    const Matrix<Scalar> logits = model(prefix);
    const auto last = logits.row(logits.rows() - 1);
    int next = 0;
    if (options.mode == DecodeMode::kGreedy) {
      last.maxCoeff(&next);
    } else {
      std::vector<int> order(static_cast<std::size_t>(last.size()));
      std::iota(order.begin(), order.end(), 0);
      const auto k = std::min<std::size_t>(static_cast<std::size_t>(options.top_k), order.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                        [&](int a, int b) { return last(a) > last(b) || (last(a) == last(b) && a < b); });
      std::vector<double> weights(k);
      const double top = static_cast<double>(last(order[0]));
      for (std::size_t i = 0; i < k; ++i) weights[i] = std::exp(static_cast<double>(last(order[i])) - top);
      std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
      next = order[pick(rng)];
    }
    prefix.push_back(next);
    if (next == options.eos) break;
  }
  return prefix;
}

template <typename Scalar>
double score_sequence(const LogitsFn<Scalar>& model, std::span<const int> prefix, std::span<const int> continuation) {
  if (continuation.empty()) return 0.0;
  if (prefix.empty()) throw std::invalid_argument("score_sequence: prefix must be nonempty");
  std::vector<int> ids(prefix.begin(), prefix.end());
  ids.insert(ids.end(), continuation.begin(), continuation.end());
  ids.pop_back();
  const Matrix<Scalar> logits = model(ids);
  const Matrix<Scalar> logp = log_softmax_rows<Scalar>(logits.bottomRows(static_cast<Eigen::Index>(continuation.size())));
  double total = 0.0;
  for (std::size_t t = 0; t < continuation.size(); ++t) {
    total += static_cast<double>(logp(static_cast<Eigen::Index>(t), continuation[t]));
  }
  return total;
}

#define USERLLM_INSTANTIATE_LM(S)                                                                          \
  template class LanguageModel<S>;                                                                         \
  template LogitsFn<S> logits_fn<S>(const LanguageModel<S>&);                                              \
  template std::vector<int> generate<S>(const LogitsFn<S>&, std::vector<int>, int, const GenerateOptions&, \
                                        int);                                                              \
  template double score_sequence<S>(const LogitsFn<S>&, std::span<const int>, std::span<const int>);

USERLLM_INSTANTIATE_LM(float)
USERLLM_INSTANTIATE_LM(double)

}  // namespace userllm
