#include "userllm/eval/eval.hpp"

#include <algorithm>
#include <cctype>
#include <iostream>
#include <map>
#include <thread>
#include <unordered_map>

namespace userllm {

std::string favorite_label(std::span<const Event> history) {
  if (history.empty()) throw std::invalid_argument("favorite_label: empty history");
  std::unordered_map<std::string, std::pair<int, std::size_t>> stats;  // count, last position
  for (std::size_t i = 0; i < history.size(); ++i) {
    auto& s = stats[history[i].category];
    ++s.first;
    s.second = i;
  }
  const auto best = std::max_element(stats.begin(), stats.end(), [](const auto& a, const auto& b) {
    return a.second.first < b.second.first || (a.second.first == b.second.first && a.second.second < b.second.second);
  });
  return best->first;
}

TaskKind parse_task(std::string_view name) {
  if (name == "next_item") return TaskKind::kNextItem;
  if (name == "favorite_category") return TaskKind::kFavoriteCategory;
  if (name == "review_generation") return TaskKind::kReviewGeneration;
  throw std::invalid_argument("unknown task '" + std::string(name) +
                              "' (expected next_item, favorite_category or review_generation)");
}

std::string_view task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kNextItem: return "next_item";
    case TaskKind::kFavoriteCategory: return "favorite_category";
    case TaskKind::kReviewGeneration: return "review_generation";
  }
  return "?";
}

std::string event_description(const Event& e) { return e.name + " " + e.category + " rated " + rating_key(e.rating); }

namespace {

std::string substitute(std::string text, const std::string& key, const std::string& value) {
  for (auto pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos + value.size())) {
    text.replace(pos, key.size(), value);
  }
  return text;
}

}  // namespace

std::string task_prompt(const TaskSpec& task, const ExampleWindow& window) {
  std::string prompt;
  const auto s = std::min<std::size_t>(static_cast<std::size_t>(std::max(0, task.short_term_events)),
                                       window.inputs.size());
  for (std::size_t i = window.inputs.size() - s; i < window.inputs.size(); ++i) {
    prompt += event_description(window.inputs[i]) + " ; ";
  }
  switch (task.kind) {
    case TaskKind::kNextItem: return prompt + task.prompts.next_item;
    case TaskKind::kFavoriteCategory: return prompt + task.prompts.favorite_category;
    case TaskKind::kReviewGeneration:
      return prompt + substitute(substitute(task.prompts.review, "{item}", window.label.name), "{rating}",
                                 rating_key(window.label.rating));
  }
  return prompt;
}

std::string task_target(const TaskSpec& task, const ExampleWindow& window) {
  switch (task.kind) {
    case TaskKind::kNextItem: return window.label.name;
    case TaskKind::kFavoriteCategory: return favorite_label(window.inputs);
    case TaskKind::kReviewGeneration: return window.label.review.value_or("");
  }
  return "";
}

std::vector<FeatureIds> encode_events(const VocabularySet& vocab, std::span<const Event> events) {
  std::vector<FeatureIds> out;
  out.reserve(events.size());
  for (const auto& e : events) out.push_back(vocab.encode(e));
  return out;
}

TextExample make_text_example(const TaskSpec& task, const ExampleWindow& window, const Tokenizer& tokenizer,
                              const VocabularySet& vocab) {
  TextExample ex;
  ex.events = encode_events(vocab, window.inputs);
  ex.ids = tokenizer.tokenize(task_prompt(task, window));
  ex.target_start = static_cast<int>(ex.ids.size());
  for (int id : tokenizer.encode_words(task_target(task, window))) ex.ids.push_back(id);
  ex.ids.push_back(Tokenizer::kEos);
  return ex;
}

std::vector<std::string> task_corpus(const std::vector<UserSequence>& users, const PromptTemplates& prompts) {
  std::vector<std::string> texts = {prompts.next_item, prompts.favorite_category,
                                    substitute(substitute(prompts.review, "{item}", ""), "{rating}", ""), ";"};
  for (int half = 1; half <= 10; ++half) texts.push_back(rating_key(half * 0.5));
  for (const auto& u : users) {
    for (const auto& e : u.events) {
      texts.push_back(event_description(e));
      if (e.review) texts.push_back(*e.review);
    }
  }
  return texts;
}

template <typename Scalar>
Ranking rank_candidates(const LogitsFn<Scalar>& model, std::span<const int> prompt,
                        const std::vector<std::string>& candidates, const Tokenizer& tokenizer) {
  if (candidates.empty()) throw std::invalid_argument("rank_candidates: no candidates");
  std::vector<std::vector<int>> tokens;
  for (const auto& c : candidates) {
    tokens.push_back(tokenizer.encode_words(c));
    if (tokens.back().empty()) throw std::invalid_argument("rank_candidates: candidate '" + c + "' has no tokens");
  }
  // Candidates that agree on all but their last token share one forward
  // pass over prompt + that prefix; the causal logits score every member.
  std::map<std::vector<int>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < tokens.size(); ++i) groups[{tokens[i].begin(), tokens[i].end() - 1}].push_back(i);
  std::vector<std::optional<double>> scores(candidates.size());
  for (const auto& [prefix, members] : groups) {
    std::vector<int> ids(prompt.begin(), prompt.end());
    ids.insert(ids.end(), prefix.begin(), prefix.end());
    Matrix<Scalar> logp;
    try {
      const Matrix<Scalar> logits = model(ids);
      logp = log_softmax_rows<Scalar>(logits.bottomRows(static_cast<Eigen::Index>(prefix.size() + 1)));
    } catch (const ContextOverflow&) {
      continue;
    }
    for (std::size_t i : members) {
      double total = 0.0;
      for (std::size_t t = 0; t < tokens[i].size(); ++t) {
        total += static_cast<double>(logp(static_cast<Eigen::Index>(t), tokens[i][t]));
      }
      scores[i] = total;
    }
  }
  std::vector<std::size_t> order(candidates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a].has_value() != scores[b].has_value()) return scores[a].has_value();
    if (scores[a] && *scores[a] != *scores[b]) return *scores[a] > *scores[b];
    return candidates[a] < candidates[b];
  });
  Ranking out;
  for (std::size_t i : order) {
    out.ranked.push_back(candidates[i]);
    if (!scores[i]) out.overflowed.push_back(candidates[i]);
  }
  return out;
}

int recall_at_k(const std::vector<std::string>& ranked, const std::string& truth, int k) {
  if (k < 1) throw std::invalid_argument("recall_at_k: k must be >= 1");
  const auto it = std::find(ranked.begin(), ranked.end(), truth);
  if (it == ranked.end()) throw std::invalid_argument("recall_at_k: '" + truth + "' is not a candidate");
  return it - ranked.begin() < k ? 1 : 0;
}

namespace {

std::vector<std::vector<std::string>> sentences(std::string_view text) {
  std::vector<std::vector<std::string>> out;
  std::vector<std::string> current;
  std::string word;
  auto flush_word = [&] {
    if (!word.empty()) current.push_back(std::move(word));
    word.clear();
  };
  auto flush_sentence = [&] {
    flush_word();
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (ch == '.' || ch == '\n') {
      flush_sentence();
    } else if (std::isalnum(c)) {
      word += static_cast<char>(std::tolower(c));
    } else {
      flush_word();
    }
  }
  flush_sentence();
  return out;
}

// Positions of `ref` covered by one LCS with `cand`.
std::vector<std::size_t> lcs_positions(const std::vector<std::string>& ref, const std::vector<std::string>& cand) {
  const std::size_t m = ref.size(), n = cand.size();
  std::vector<std::vector<int>> table(m + 1, std::vector<int>(n + 1, 0));
  for (std::size_t i = 1; i <= m; ++i)
    for (std::size_t j = 1; j <= n; ++j)
      table[i][j] = ref[i - 1] == cand[j - 1] ? table[i - 1][j - 1] + 1 : std::max(table[i - 1][j], table[i][j - 1]);
  std::vector<std::size_t> hits;
  for (std::size_t i = m, j = n; i > 0 && j > 0;) {
    if (ref[i - 1] == cand[j - 1]) {
      hits.push_back(i - 1);
      --i;
      --j;
    } else if (table[i - 1][j] >= table[i][j - 1]) {
      --i;
    } else {
      --j;
    }
  }
  return hits;
}

}  // namespace

double rouge_lsum(std::string_view prediction, std::string_view reference) {
  const auto ref = sentences(reference);
  const auto pred = sentences(prediction);
  std::size_t m = 0, n = 0;
  std::unordered_map<std::string, int> ref_counts, pred_counts;
  for (const auto& s : ref)
    for (const auto& w : s) ++m, ++ref_counts[w];
  for (const auto& s : pred)
    for (const auto& w : s) ++n, ++pred_counts[w];
  if (m == 0) {
    std::clog << "warning: rouge_lsum with an empty reference is defined as 0\n";
    return 0.0;
  }
  if (n == 0) return 0.0;
  std::size_t hits = 0;
  for (const auto& r : ref) {
    std::vector<bool> covered(r.size(), false);
    for (const auto& c : pred) {
      for (std::size_t i : lcs_positions(r, c)) covered[i] = true;
    }
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (!covered[i]) continue;
      auto& rc = ref_counts[r[i]];
      auto& pc = pred_counts[r[i]];
      if (rc > 0 && pc > 0) {
        ++hits;
        --rc;
        --pc;
      }
    }
  }
  if (hits == 0) return 0.0;
  const double recall = static_cast<double>(hits) / static_cast<double>(m);
  const double precision = static_cast<double>(hits) / static_cast<double>(n);
  return 2 * precision * recall / (precision + recall);
}

nlohmann::ordered_json metrics_json(const Metrics& metrics, TaskKind task, std::string_view strategy,
                                    std::string_view fusion_mode) {
  nlohmann::ordered_json j;
  j["task"] = task_name(task);
  j["strategy"] = strategy;
  j["fusion_mode"] = fusion_mode;
  for (const auto& [k, value] : metrics.recall) j["recall@" + std::to_string(k)] = value;
  j["rouge_lsum"] = metrics.rouge_lsum ? nlohmann::ordered_json(*metrics.rouge_lsum) : nlohmann::ordered_json();
  j["n"] = metrics.n;
  return j;
}

template <typename Scalar>
Metrics evaluate(const ContextualLM<Scalar>& model, const TaskSpec& task, const std::vector<ExampleWindow>& test,
                 const Tokenizer& tokenizer, const VocabularySet& vocab, int threads) {
  if (test.empty()) throw std::invalid_argument("evaluate: empty test split");
  const bool ranking = task.kind != TaskKind::kReviewGeneration;
  if (ranking && task.candidates.empty()) throw std::invalid_argument("evaluate: ranking task without candidates");
  for (int k : task.ks) {
    if (k < 1) throw std::invalid_argument("evaluate: k must be >= 1");
  }

  // Per-example results land in fixed slots, so the reduction order does not
  // depend on the thread count.
  std::vector<std::vector<int>> hits(test.size());
  std::vector<std::optional<double>> rouge(test.size());
  auto run = [&](std::size_t i) {
    const auto& window = test[i];
    const auto events = encode_events(vocab, window.inputs);
    const LogitsFn<Scalar> fn = model.logits_fn(events);
    const std::vector<int> prompt = tokenizer.tokenize(task_prompt(task, window));
    if (ranking) {
      const Ranking r = rank_candidates<Scalar>(fn, prompt, task.candidates, tokenizer);
      const std::string truth = task_target(task, window);
      for (int k : task.ks) hits[i].push_back(recall_at_k(r.ranked, truth, k));
    } else {
      const std::string reference = task_target(task, window);
      if (reference.empty()) return;
      GenerateOptions options;
      options.eos = Tokenizer::kEos;
      const auto out = generate<Scalar>(fn, prompt, task.max_new_tokens, options, model.lm().config().max_context);
      const std::span<const int> fresh(out.data() + prompt.size(), out.size() - prompt.size());
      rouge[i] = rouge_lsum(tokenizer.detokenize(fresh), reference);
    }
  };

  threads = std::max(1, threads);
  if (threads == 1) {
    for (std::size_t i = 0; i < test.size(); ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = static_cast<std::size_t>(t); i < test.size(); i += static_cast<std::size_t>(threads)) run(i);
        } catch (...) {
          errors[static_cast<std::size_t>(t)] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  Metrics m;
  if (ranking) {
    m.n = test.size();
    for (std::size_t j = 0; j < task.ks.size(); ++j) {
      double total = 0.0;
      for (const auto& h : hits) total += h[j];
      m.recall[task.ks[j]] = total / static_cast<double>(m.n);
    }
  } else {
    double total = 0.0;
    for (const auto& r : rouge) {
      if (!r) continue;
      total += *r;
      ++m.n;
    }
    if (m.n == 0) throw std::invalid_argument("evaluate: no test window carries a reference review");
    m.rouge_lsum = total / static_cast<double>(m.n);
  }
  return m;
}

#define USERLLM_INSTANTIATE_EVAL(S)                                                                              \
  template Ranking rank_candidates<S>(const LogitsFn<S>&, std::span<const int>, const std::vector<std::string>&, \
                                      const Tokenizer&);                                                         \
  template Metrics evaluate<S>(const ContextualLM<S>&, const TaskSpec&, const std::vector<ExampleWindow>&,       \
                               const Tokenizer&, const VocabularySet&, int);

USERLLM_INSTANTIATE_EVAL(float)
USERLLM_INSTANTIATE_EVAL(double)

}  // namespace userllm
