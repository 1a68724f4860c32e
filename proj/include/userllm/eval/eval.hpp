#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "userllm/events/events.hpp"
#include "userllm/fusion/fusion.hpp"
#include "userllm/textlm/tokenizer.hpp"
#include "userllm/training/trainer.hpp"

namespace userllm {

/// Most frequent category; ties go to the category seen most recently.
std::string favorite_label(std::span<const Event> history);

enum class TaskKind { kNextItem, kFavoriteCategory, kReviewGeneration };

TaskKind parse_task(std::string_view name);
std::string_view task_name(TaskKind kind);

struct PromptTemplates {
  std::string next_item = "predict next item :";
  std::string favorite_category = "favorite category :";
  /// {item} and {rating} are substituted from the label event.
  std::string review = "write a review for {item} rated {rating} :";
};

struct TaskSpec {
  TaskKind kind = TaskKind::kNextItem;
  /// Item names (next item) or category names (favorite category).
  std::vector<std::string> candidates;
  PromptTemplates prompts;
  /// When > 0 the prompt starts with this many most recent events as text.
  int short_term_events = 0;
  std::vector<int> ks = {1, 5, 10};
  int max_new_tokens = 24;
};

/// "<name> <category> rated <r>"
std::string event_description(const Event& event);

/// Prompt text for a window, short-term events included.
std::string task_prompt(const TaskSpec& task, const ExampleWindow& window);
/// Expected answer text: next item name, favorite category or the review.
/// Empty when a review window's label carries no review.
std::string task_target(const TaskSpec& task, const ExampleWindow& window);

std::vector<FeatureIds> encode_events(const VocabularySet& vocab, std::span<const Event> events);

/// BOS + prompt + target + EOS, with the loss starting at the target.
TextExample make_text_example(const TaskSpec& task, const ExampleWindow& window, const Tokenizer& tokenizer,
                              const VocabularySet& vocab);

/// Texts from which to build a tokenizer covering every task's prompts and
/// targets over the corpus.
std::vector<std::string> task_corpus(const std::vector<UserSequence>& users, const PromptTemplates& prompts);

struct Ranking {
  std::vector<std::string> ranked;
  /// Candidates that did not fit the context; they sit at the end of ranked.
  std::vector<std::string> overflowed;
};

/// Sorts candidates by descending score_sequence(prompt, candidate tokens),
/// ties lexicographic. Single-token candidates share one forward pass.
template <typename Scalar>
Ranking rank_candidates(const LogitsFn<Scalar>& model, std::span<const int> prompt,
                        const std::vector<std::string>& candidates, const Tokenizer& tokenizer);

/// 1 when truth is among the first k entries. Throws when truth is not ranked.
int recall_at_k(const std::vector<std::string>& ranked, const std::string& truth, int k);

/// Summary-level ROUGE-L F1 (union LCS over '.'/newline-split sentences,
/// lowercased alphanumeric tokens). An empty reference scores 0.
double rouge_lsum(std::string_view prediction, std::string_view reference);

struct Metrics {
  std::map<int, double> recall;  // k -> mean Recall@k
  std::optional<double> rouge_lsum;
  std::size_t n = 0;
};

nlohmann::ordered_json metrics_json(const Metrics& metrics, TaskKind task, std::string_view strategy,
                                    std::string_view fusion_mode);

/// Ranking tasks report Recall@k; review generation decodes greedily and
/// reports mean ROUGE-Lsum. Throws on an empty test split.
template <typename Scalar>
Metrics evaluate(const ContextualLM<Scalar>& model, const TaskSpec& task, const std::vector<ExampleWindow>& test,
                 const Tokenizer& tokenizer, const VocabularySet& vocab, int threads = 1);

}  // namespace userllm
