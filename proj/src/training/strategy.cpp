#include "userllm/training/strategy.hpp"

#include <stdexcept>

namespace userllm {

Strategy parse_strategy(std::string_view name) {
  if (name == "Full" || name == "full") return Strategy::kFull;
  if (name == "Enc" || name == "enc") return Strategy::kEnc;
  if (name == "LoRA" || name == "lora") return Strategy::kLora;
  if (name == "Proj" || name == "proj") return Strategy::kProj;
  throw std::invalid_argument("unknown training strategy '" + std::string(name) + "' (expected Full, Enc, LoRA or Proj)");
}

std::string_view strategy_name(Strategy strategy) {
  switch (strategy) {
    case Strategy::kFull: return "Full";
    case Strategy::kEnc: return "Enc";
    case Strategy::kLora: return "LoRA";
    case Strategy::kProj: return "Proj";
  }
  return "?";
}

bool in_strategy(std::string_view name, Strategy strategy) {
  const bool encoder = name.starts_with("encoder.");
  const bool fusion = name.starts_with("fusion.");
  const bool lora = name.find(".lora_") != std::string_view::npos;
  switch (strategy) {
    case Strategy::kFull: return true;
    case Strategy::kEnc: return encoder || fusion;
    case Strategy::kLora: return encoder || fusion || lora;
    case Strategy::kProj: return fusion;
  }
  return false;
}

}  // namespace userllm
