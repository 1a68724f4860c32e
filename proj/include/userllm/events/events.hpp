#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace userllm {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One timestamped user interaction.
struct Event {
  std::string user_id;
  std::int64_t timestamp = 0;
  std::string name;
  std::string category;
  double rating = 0.0;
  std::optional<std::string> review;

  bool operator==(const Event&) const = default;
};

struct UserSequence {
  std::string user_id;
  std::vector<Event> events;  // ascending timestamp

  bool operator==(const UserSequence&) const = default;
};

/// True iff rating is one of 0.5, 1.0, ..., 5.0.
bool on_half_star_grid(double rating);
/// Canonical bucket string for a grid rating, e.g. "4.5".
std::string rating_key(double rating);

enum class Modality { kName = 0, kCategory = 1, kRating = 2 };
inline constexpr int kNumModalities = 3;
std::string_view modality_name(Modality m);

/// Per-event integer ids, one per modality in (name, category, rating) order.
using FeatureIds = std::vector<int>;

/// Bijection between feature strings and ids with PAD=0 and UNK=1 reserved.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocabulary() = default;
  /// `entries` must be distinct; they receive ids 2, 3, ... in order.
  Vocabulary(Modality modality, std::vector<std::string> entries);

  int encode(std::string_view token) const;
  const std::string& decode(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  Modality modality() const { return modality_; }
  /// All tokens indexed by id, specials included.
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  Modality modality_ = Modality::kName;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct VocabularySet {
  Vocabulary name;
  Vocabulary category;
  Vocabulary rating;

  const Vocabulary& operator[](Modality m) const;
  FeatureIds encode(const Event& event) const;
  std::vector<int> sizes() const;
};

/// One vocabulary per modality. Name and category entries are sorted; the
/// rating vocabulary always enumerates the 10 half-star buckets.
VocabularySet build_vocab(const std::vector<UserSequence>& users);
VocabularySet build_vocab(const std::vector<Event>& events);

/// N consecutive events and the event that follows them.
struct ExampleWindow {
  std::string user_id;
  std::vector<Event> inputs;
  Event label;
};

/// Stride-1 windows; a user with E events yields max(0, E − N).
std::vector<ExampleWindow> sliding_windows(const UserSequence& user, int window);

struct WindowSplit {
  std::vector<ExampleWindow> train;
  std::vector<ExampleWindow> test;
};

/// Per user: last window to test, earlier windows to train.
WindowSplit split_train_test(const std::vector<std::vector<ExampleWindow>>& windows_per_user);

/// Convenience: windows for every user, then the per-user holdout split.
WindowSplit make_split(const std::vector<UserSequence>& users, int window);

/// Parses one JSONL line (keys: user_id, timestamp, name, category, rating,
/// review optional). Throws DataError without line context.
Event parse_event_json(std::string_view line);
std::string event_to_json(const Event& event);

/// Reads a JSONL file into per-user sequences (users in first-appearance
/// order, events stably sorted by timestamp). All malformed lines are
/// reported together in one DataError naming their line numbers.
std::vector<UserSequence> ingest_jsonl(const std::filesystem::path& path);
std::vector<UserSequence> ingest_jsonl(std::istream& in);

void write_jsonl(std::ostream& out, const std::vector<UserSequence>& users);
void write_jsonl(const std::filesystem::path& path, const std::vector<UserSequence>& users);

std::vector<UserSequence> group_by_user(std::vector<Event> events);

}  // namespace userllm
