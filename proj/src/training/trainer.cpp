#include "userllm/training/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

namespace userllm {

void write_metrics_line(std::ostream& out, const StepRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["loss"] = r.loss;
  j["lr"] = r.lr;
  j["strategy"] = r.strategy;
  out << j.dump() << '\n';
}

BatchSampler::BatchSampler(std::size_t examples, std::uint64_t seed) : order_(examples), rng_(seed) {
  if (examples == 0) throw std::invalid_argument("no training examples");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::shuffle(order_.begin(), order_.end(), rng_);
}

std::vector<std::size_t> BatchSampler::next(std::size_t batch_size) {
  std::vector<std::size_t> batch;
  while (batch.size() < batch_size) {
    if (cursor_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    batch.push_back(order_[cursor_++]);
  }
  return batch;
}

template <typename Scalar>
std::vector<double> train_loop(ParameterSet<Scalar>& params, std::size_t examples, const IndexedLoss<Scalar>& loss_fn,
                               const TrainOptions& options, const std::string& label) {
  if (options.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (options.schedule.total_steps < 0) throw std::invalid_argument("total_steps must be >= 0");
  std::vector<double> losses;
  if (options.schedule.total_steps == 0) return losses;
  AdamW<Scalar> optimizer(params, options.optim);
  BatchSampler sampler(examples, options.seed);
  for (int step = 0; step < options.schedule.total_steps; ++step) {
    const auto batch = sampler.next(static_cast<std::size_t>(options.batch_size));
    params.zero_grad();
    double loss = 0.0;
    try {
      loss = batch_gradient<Scalar>(
          params, batch.size(),
          [&](Graph<Scalar>& g, std::size_t begin, std::size_t end) {
            return loss_fn(g, std::span<const std::size_t>(batch.data() + begin, end - begin));
          },
          options.shards, options.threads);
    } catch (const std::domain_error& e) {
      throw TrainingDiverged(step + 1, e.what());
    }
    if (!std::isfinite(loss)) throw TrainingDiverged(step + 1, "loss is not finite");
    const double lr = lr_at(step + 1, options.schedule);
    try {
      optimizer.step(lr);
    } catch (const std::domain_error& e) {
      throw TrainingDiverged(step + 1, e.what());
    }
    losses.push_back(loss);
    if (options.on_step) options.on_step({step + 1, loss, lr, label});
  }
  params.zero_grad();
  return losses;
}

template <typename Scalar>
std::vector<double> pretrain_ar(const ArEncoder<Scalar>& encoder, ParameterSet<Scalar>& params,
                                const std::vector<std::vector<FeatureIds>>& sequences, const TrainOptions& options) {
  for (auto& entry : params.entries()) entry.second->trainable = true;
  return train_loop<Scalar>(
      params, sequences.size(),
      [&](Graph<Scalar>& g, std::span<const std::size_t> indices) {
        std::vector<Var<Scalar>> losses;
        for (std::size_t i : indices) losses.push_back(encoder.pretrain_loss(g, sequences[i]));
        return losses;
      },
      options, "pretrain");
}

template <typename Scalar>
std::vector<double> pretrain_dual(const DualEncoder<Scalar>& encoder, ParameterSet<Scalar>& params,
                                  const std::vector<typename DualEncoder<Scalar>::Example>& examples,
                                  const TrainOptions& options) {
  if (examples.size() < 2) throw std::invalid_argument("dual pretraining needs at least 2 examples");
  for (auto& entry : params.entries()) entry.second->trainable = true;
  // Each step is one in-batch softmax over distinct examples, so the loop
  // samples a single "example" per step and the batch is drawn here.
  TrainOptions single = options;
  single.batch_size = 1;
  single.shards = 1;
  single.threads = 1;
  const auto batch_size = std::min<std::size_t>(static_cast<std::size_t>(options.batch_size), examples.size());
  BatchSampler sampler(examples.size(), options.seed);
  std::vector<typename DualEncoder<Scalar>::Example> batch;
  return train_loop<Scalar>(
      params, 1,
      [&](Graph<Scalar>& g, std::span<const std::size_t>) {
        batch.clear();
        std::vector<std::size_t> picked;
        while (picked.size() < batch_size) {
          const std::size_t i = sampler.next(1).front();
          if (std::find(picked.begin(), picked.end(), i) == picked.end()) picked.push_back(i);
        }
        for (std::size_t i : picked) batch.push_back(examples[i]);
        return std::vector<Var<Scalar>>{encoder.pretrain_loss(g, batch)};
      },
      single, "pretrain");
}

template <typename Scalar>
std::vector<Var<Scalar>> text_example_losses(const ContextualLM<Scalar>& model, Graph<Scalar>& g,
                                             std::span<const TextExample* const> examples) {
  std::vector<std::optional<Var<Scalar>>> contexts;
  std::vector<std::span<const int>> inputs;
  for (const TextExample* ex : examples) {
    const auto n = ex->ids.size();
    if (n < 2) throw std::invalid_argument("text example needs at least 2 tokens");
    if (ex->target_start < 1 || ex->target_start >= static_cast<int>(n)) {
      throw std::invalid_argument("text example target_start out of range");
    }
    std::optional<Var<Scalar>> context;
    if (auto c = model.context(g, ex->events)) context = c->vectors;
    contexts.push_back(context);
    inputs.emplace_back(ex->ids.data(), n - 1);
  }
  const auto decoded = model.decode_batch(g, contexts, inputs);
  std::vector<Var<Scalar>> losses;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ids = examples[i]->ids;
    std::vector<int> targets(ids.size() - 1, kIgnoreTarget);
    for (auto t = static_cast<std::size_t>(examples[i]->target_start); t < ids.size(); ++t) targets[t - 1] = ids[t];
    losses.push_back(cross_entropy(decoded[i].text_logits(), std::span<const int>(targets)));
  }
  return losses;
}

template <typename Scalar>
std::vector<double> cotrain(ContextualLM<Scalar>& model, const std::vector<TextExample>& examples, Strategy strategy,
                            const TrainOptions& options) {
  apply_strategy(model.params(), strategy);
  return train_loop<Scalar>(
      model.params(), examples.size(),
      [&](Graph<Scalar>& g, std::span<const std::size_t> indices) {
        std::vector<const TextExample*> picked;
        for (std::size_t i : indices) picked.push_back(&examples[i]);
        return text_example_losses(model, g, std::span<const TextExample* const>(picked));
      },
      options, std::string(strategy_name(strategy)));
}

#define USERLLM_INSTANTIATE_TRAINER(S)                                                                            \
  template std::vector<double> train_loop<S>(ParameterSet<S>&, std::size_t, const IndexedLoss<S>&,              \
                                             const TrainOptions&, const std::string&);                           \
  template std::vector<double> pretrain_ar<S>(const ArEncoder<S>&, ParameterSet<S>&,                             \
                                              const std::vector<std::vector<FeatureIds>>&, const TrainOptions&); \
  template std::vector<double> pretrain_dual<S>(const DualEncoder<S>&, ParameterSet<S>&,                         \
                                                const std::vector<typename DualEncoder<S>::Example>&,            \
                                                const TrainOptions&);                                            \
  template std::vector<Var<S>> text_example_losses<S>(const ContextualLM<S>&, Graph<S>&,                        \
                                                      std::span<const TextExample* const>);                      \
  template std::vector<double> cotrain<S>(ContextualLM<S>&, const std::vector<TextExample>&, Strategy,           \
                                          const TrainOptions&);

USERLLM_INSTANTIATE_TRAINER(float)
USERLLM_INSTANTIATE_TRAINER(double)

}  // namespace userllm
