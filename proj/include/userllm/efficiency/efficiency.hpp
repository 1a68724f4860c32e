#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace userllm {

/// Parameters N, batch B, steps S and tokens per example L.
struct FlopsQuery {
  double n_params = 0;
  double batch = 0;
  double steps = 0;
  double tokens = 0;
};

/// 6·N·B·S·L. Encoder and Perceiver compute is not counted.
double flops_estimate(const FlopsQuery& query);

enum class PromptMode { kUserLlm, kTextPrompt };
/// Which token stream is counted: the LM's text input, or the user
/// embeddings the LM attends to.
enum class TokenSide { kLmText, kEmbedding };

struct TokenBudgets {
  /// Text-prompt tokens per history length.
  std::map<int, int> text_prompt = {{50, 700}, {100, 1350}, {200, 2500}};
  /// LM text budget in cross-attention mode, independent of history length.
  int user_llm_text = 32;
  int perceiver_latents = 16;
};

int token_count(PromptMode mode, int seq_len, bool perceiver, const TokenBudgets& budgets = {},
                TokenSide side = TokenSide::kLmText);

/// tp_tokens / userllm_tokens rounded half-up to one decimal.
double flops_reduction(double tp_tokens, double userllm_tokens);

struct FlopsReport {
  std::string mode;
  int seq_len = 0;
  int tokens = 0;
  double flops = 0;
  double reduction = 0;  // text-prompt flops over this mode's flops
};

/// One text-prompt row and one User-LLM row per configured history length.
std::vector<FlopsReport> flops_table(double n_params, double batch, double steps, const TokenBudgets& budgets = {});

std::string render_flops_text(const std::vector<FlopsReport>& rows, const TokenBudgets& budgets);
nlohmann::ordered_json render_flops_json(const std::vector<FlopsReport>& rows, const TokenBudgets& budgets);

}  // namespace userllm
