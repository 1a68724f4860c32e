#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "userllm/numerics/tensor.hpp"

namespace userllm {

/// Which parameters cotraining updates.
///   Full: encoder, fusion adapters and the LM (adapters included)
///   Enc:  encoder and fusion adapters; LM frozen
///   LoRA: LoRA adapters, encoder and fusion adapters; base LM frozen
///   Proj: fusion adapters only
enum class Strategy { kFull, kEnc, kLora, kProj };

Strategy parse_strategy(std::string_view name);
std::string_view strategy_name(Strategy strategy);

/// Membership by parameter name: encoder.*, fusion.*, lm.* and *.lora_a/b.
bool in_strategy(std::string_view param_name, Strategy strategy);

template <typename Scalar>
std::vector<std::string> trainable_params(const ParameterSet<Scalar>& params, Strategy strategy) {
  std::vector<std::string> names;
  for (const auto& [name, tensor] : params.entries()) {
    if (in_strategy(name, strategy)) names.push_back(name);
  }
  return names;
}

/// Sets Tensor::trainable from the strategy. Throws std::invalid_argument
/// when the model lacks what the strategy trains (e.g. LoRA without adapters).
template <typename Scalar>
void apply_strategy(ParameterSet<Scalar>& params, Strategy strategy) {
  bool any = false, has_lora = false;
  for (auto& [name, tensor] : params.entries()) {
    tensor->trainable = in_strategy(name, strategy);
    any = any || tensor->trainable;
    has_lora = has_lora || name.find(".lora_") != std::string::npos;
  }
  if (strategy == Strategy::kLora && !has_lora) {
    throw std::invalid_argument("strategy LoRA needs a model with LoRA adapters");
  }
  if (!any) {
    throw std::invalid_argument("strategy " + std::string(strategy_name(strategy)) + " selects no parameters");
  }
}

}  // namespace userllm
