#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "userllm/events/events.hpp"

namespace userllm {

/// Desk-scale corpus generator with known latent preferences. Every user
/// draws a Dirichlet(concentration) distribution over categories; each event
/// samples a category from it, an item uniformly within that category, a
/// rating that rises with the category's preference weight, and a templated
/// review.
struct SyntheticConfig {
  int num_users = 200;
  int num_items = 100;
  int num_categories = 10;
  int events_per_user = 60;
  double preference_concentration = 0.3;
  std::uint64_t seed = 1;
  /// Limit case concentration -> 0: every user keeps to one category.
  bool single_category_users = false;
};

/// Throws std::invalid_argument when the config is unusable.
void validate(const SyntheticConfig& config);

struct SyntheticCorpus {
  std::vector<UserSequence> users;
  /// Ground truth per user (same order as users): argmax of realized
  /// category counts, ties going to the most recently seen category.
  std::vector<std::string> favorites;
  /// "<category> item_<i>": like a catalog title, an item's name starts
  /// with its category, so a text model can relate items to categories.
  std::vector<std::string> item_names;
  std::vector<std::string> category_names;
  /// item_categories[i] is the category of item_names[i].
  std::vector<std::string> item_categories;
};

SyntheticCorpus synth_generate(const SyntheticConfig& config);

/// Templated review text for an (item, category, rating) triple.
std::string synthetic_review(const std::string& item, const std::string& category, double rating);

}  // namespace userllm
