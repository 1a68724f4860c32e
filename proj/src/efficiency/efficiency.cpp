#include "userllm/efficiency/efficiency.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace userllm {

double flops_estimate(const FlopsQuery& q) {
  if (!(q.n_params > 0 && q.batch > 0 && q.steps > 0 && q.tokens > 0)) {
    throw std::invalid_argument("flops_estimate: N, B, S and L must all be positive");
  }
  return 6.0 * q.n_params * q.batch * q.steps * q.tokens;
}

int token_count(PromptMode mode, int seq_len, bool perceiver, const TokenBudgets& budgets, TokenSide side) {
  if (seq_len < 1) throw std::invalid_argument("token_count: seq_len must be >= 1");
  if (mode == PromptMode::kUserLlm) {
    if (side == TokenSide::kLmText) return budgets.user_llm_text;
    return perceiver ? budgets.perceiver_latents : seq_len;
  }
  auto it = budgets.text_prompt.find(seq_len);
  if (it == budgets.text_prompt.end()) {
    throw std::out_of_range("no text-prompt token budget configured for sequence length " + std::to_string(seq_len));
  }
  return it->second;
}

double flops_reduction(double tp_tokens, double userllm_tokens) {
  if (userllm_tokens == 0) throw std::invalid_argument("flops_reduction: zero User-LLM tokens");
  if (!(tp_tokens > 0 && userllm_tokens > 0)) throw std::invalid_argument("flops_reduction: token counts must be positive");
  return std::floor(tp_tokens / userllm_tokens * 10.0 + 0.5) / 10.0;
}

std::vector<FlopsReport> flops_table(double n_params, double batch, double steps, const TokenBudgets& budgets) {
  std::vector<FlopsReport> rows;
  for (const auto& [len, tp] : budgets.text_prompt) {
    const int ul = token_count(PromptMode::kUserLlm, len, false, budgets);
    const double tp_flops = flops_estimate({n_params, batch, steps, static_cast<double>(tp)});
    const double ul_flops = flops_estimate({n_params, batch, steps, static_cast<double>(ul)});
    rows.push_back({"text_prompt", len, tp, tp_flops, 1.0});
    rows.push_back({"user_llm", len, ul, ul_flops, flops_reduction(tp, ul)});
  }
  return rows;
}

namespace {

std::string fixed1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

}  // namespace

std::string render_flops_text(const std::vector<FlopsReport>& rows, const TokenBudgets& budgets) {
  std::vector<const FlopsReport*> tp, ul;
  for (const auto& r : rows) (r.mode == "text_prompt" ? tp : ul).push_back(&r);
  std::ostringstream os;
  auto line = [&](const std::string& head, auto cell) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%-22s", head.c_str());
    os << buf;
    for (std::size_t i = 0; i < tp.size(); ++i) {
      std::snprintf(buf, sizeof buf, " %12s", cell(i).c_str());
      os << buf;
    }
    os << '\n';
  };
  line("Seq len", [&](std::size_t i) { return std::to_string(tp[i]->seq_len); });
  line("TP tokens", [&](std::size_t i) { return std::to_string(tp[i]->tokens); });
  line("User-LLM tokens", [&](std::size_t i) { return std::to_string(ul[i]->tokens); });
  line("TP FLOPs", [&](std::size_t i) { return sci(tp[i]->flops); });
  line("User-LLM FLOPs", [&](std::size_t i) { return sci(ul[i]->flops); });
  line("FLOPs reduction", [&](std::size_t i) { return fixed1(ul[i]->reduction) + "X"; });
  const int first = rows.empty() ? 50 : rows.front().seq_len;
  const int latents = token_count(PromptMode::kUserLlm, first, true, budgets, TokenSide::kEmbedding);
  os << "\nPerceiver: " << first << " user embeddings -> " << latents << " latents ("
     << "-" << static_cast<int>(std::lround(100.0 * (1.0 - static_cast<double>(latents) / first))) << "%)\n";
  os << "FLOPs = 6*N*B*S*L over LM tokens only; encoder and Perceiver compute excluded.\n";
  return os.str();
}

nlohmann::ordered_json render_flops_json(const std::vector<FlopsReport>& rows, const TokenBudgets& budgets) {
  nlohmann::ordered_json j;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json row;
    row["mode"] = r.mode;
    row["seq_len"] = r.seq_len;
    row["tokens"] = r.tokens;
    row["flops"] = r.flops;
    row["reduction"] = r.reduction;
    j["rows"].push_back(row);
  }
  nlohmann::ordered_json perceiver = nlohmann::ordered_json::array();
  for (const auto& [len, tp] : budgets.text_prompt) {
    const int latents = token_count(PromptMode::kUserLlm, len, true, budgets, TokenSide::kEmbedding);
    perceiver.push_back({{"seq_len", len},
                         {"embedding_tokens", len},
                         {"compressed_tokens", latents},
                         {"reduction_pct", std::lround(100.0 * (1.0 - static_cast<double>(latents) / len))}});
  }
  j["perceiver"] = perceiver;
  j["assumption"] = "encoder and Perceiver FLOPs excluded";
  return j;
}

}  // namespace userllm
