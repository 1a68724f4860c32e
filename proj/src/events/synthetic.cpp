#include "userllm/events/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>

namespace userllm {

namespace {

std::string padded(const char* prefix, int value, int count) {
  int width = 2;
  for (int n = count - 1; n >= 100; n /= 10) ++width;
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, "%s%0*d", prefix, width, value);
  return buffer;
}

double snap_to_grid(double value) {
  const double snapped = std::round(value * 2.0) / 2.0;
  return std::clamp(snapped, 0.5, 5.0);
}

std::vector<double> draw_preferences(const SyntheticConfig& config, std::mt19937_64& rng) {
  const auto c = static_cast<std::size_t>(config.num_categories);
  std::vector<double> weights(c, 0.0);
  if (config.single_category_users) {
    std::uniform_int_distribution<std::size_t> pick(0, c - 1);
    weights[pick(rng)] = 1.0;
    return weights;
  }
  std::gamma_distribution<double> gamma(config.preference_concentration, 1.0);
  double total = 0.0;
  for (auto& w : weights) total += (w = gamma(rng));
  if (!(total > 0.0)) {
    // Every draw underflowed: the limit of a vanishing concentration.
    std::uniform_int_distribution<std::size_t> pick(0, c - 1);
    weights.assign(c, 0.0);
    weights[pick(rng)] = 1.0;
    return weights;
  }
  for (auto& w : weights) w /= total;
  return weights;
}

}  // namespace

void validate(const SyntheticConfig& config) {
  if (config.num_users < 1) throw std::invalid_argument("num_users must be >= 1");
  if (config.num_categories < 1) throw std::invalid_argument("num_categories must be >= 1");
  if (config.num_items < config.num_categories) throw std::invalid_argument("num_items must be >= num_categories");
  if (config.events_per_user < 1) throw std::invalid_argument("events_per_user must be >= 1");
  if (!(config.preference_concentration > 0.0)) throw std::invalid_argument("preference_concentration must be > 0");
}

std::string synthetic_review(const std::string& item, const std::string& category, double rating) {
  const char* adjective = rating < 1.5 ? "awful" : rating < 2.5 ? "poor" : rating < 3.5 ? "decent"
                                                 : rating < 4.5 ? "great" : "perfect";
  const char* verdict = rating >= 3.5 ? "would recommend" : "would avoid";
  return std::string(adjective) + " " + category + " experience . " + verdict + " " + item + " .";
}

SyntheticCorpus synth_generate(const SyntheticConfig& config) {
  validate(config);
  std::mt19937_64 rng(config.seed);
  SyntheticCorpus corpus;

  for (int c = 0; c < config.num_categories; ++c) corpus.category_names.push_back(padded("category_", c, config.num_categories));
  std::vector<std::vector<int>> items_by_category(static_cast<std::size_t>(config.num_categories));
  for (int i = 0; i < config.num_items; ++i) {
    const int c = i % config.num_categories;
    const std::string& category = corpus.category_names[static_cast<std::size_t>(c)];
    corpus.item_names.push_back(category + " " + padded("item_", i, config.num_items));
    corpus.item_categories.push_back(category);
    items_by_category[static_cast<std::size_t>(c)].push_back(i);
  }

  std::normal_distribution<double> rating_noise(0.0, 0.6);
  std::uniform_int_distribution<std::int64_t> gap(60, 86400);
  for (int u = 0; u < config.num_users; ++u) {
    const std::vector<double> preference = draw_preferences(config, rng);
    const double strongest = *std::max_element(preference.begin(), preference.end());
    std::discrete_distribution<int> pick_category(preference.begin(), preference.end());

    UserSequence user;
    user.user_id = padded("user_", u, config.num_users);
    std::int64_t clock = 1'600'000'000;
    std::vector<int> counts(static_cast<std::size_t>(config.num_categories), 0);
    std::vector<int> last_seen(static_cast<std::size_t>(config.num_categories), -1);
    for (int k = 0; k < config.events_per_user; ++k) {
      const int c = pick_category(rng);
      const auto& pool = items_by_category[static_cast<std::size_t>(c)];
      std::uniform_int_distribution<std::size_t> pick_item(0, pool.size() - 1);
      const int item = pool[pick_item(rng)];
      const double mean_rating = 1.5 + 3.0 * preference[static_cast<std::size_t>(c)] / strongest;
      clock += gap(rng);

      Event e;
      e.user_id = user.user_id;
      e.timestamp = clock;
      e.name = corpus.item_names[static_cast<std::size_t>(item)];
      e.category = corpus.category_names[static_cast<std::size_t>(c)];
      e.rating = snap_to_grid(mean_rating + rating_noise(rng));
      e.review = synthetic_review(e.name, e.category, e.rating);
      user.events.push_back(std::move(e));
      ++counts[static_cast<std::size_t>(c)];
      last_seen[static_cast<std::size_t>(c)] = k;
    }

    int favorite = 0;
    for (int c = 1; c < config.num_categories; ++c) {
      const auto cu = static_cast<std::size_t>(c), fu = static_cast<std::size_t>(favorite);
      if (counts[cu] > counts[fu] || (counts[cu] == counts[fu] && last_seen[cu] > last_seen[fu])) favorite = c;
    }
    corpus.favorites.push_back(corpus.category_names[static_cast<std::size_t>(favorite)]);
    corpus.users.push_back(std::move(user));
  }
  return corpus;
}

}  // namespace userllm
