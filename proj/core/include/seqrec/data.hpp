#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "seqrec/rng.hpp"
#include "seqrec/tensor.hpp"

namespace seqrec::data {

using ItemIndex = std::size_t;
using Timestamp = std::int64_t;

inline constexpr ItemIndex kPadToken = 0;
inline constexpr std::int64_t kIgnoreLabel = -1;

/// One observed user-item event. Ratings are read and dropped.
struct RawInteraction {
  std::string user;
  std::string item;
  Timestamp timestamp = 0;

  bool operator==(const RawInteraction&) const = default;
};

/// Column layout of a delimited interaction log (0-based column indices).
struct Schema {
  std::string delimiter = ",";
  std::size_t user_column = 0;
  std::size_t item_column = 1;
  std::optional<std::size_t> rating_column = 2;
  std::size_t timestamp_column = 3;
  bool has_header = false;

  /// "user::item::rating::timestamp", as in MovieLens ratings.dat.
  static Schema movielens();
  static Schema csv();
  void validate() const;
};

std::vector<RawInteraction> ingest(const std::filesystem::path& path, const Schema& schema);
std::vector<RawInteraction> parse_interactions(std::istream& in, const Schema& schema);

/// Dense id maps and item statistics for a filtered dataset.
///
/// Items are 1..|V|, [PAD] is 0 and [MASK] is |V|+1.
struct Catalog {
  std::vector<std::string> user_ids;  // dense index -> external id
  std::vector<std::string> item_ids;  // index 0 is the PAD placeholder ""
  std::vector<std::uint64_t> popularity;  // per item index; [0] = 0
  Timestamp t_min = 0;
  Timestamp t_max = 0;

  std::size_t num_items() const noexcept { return item_ids.empty() ? 0 : item_ids.size() - 1; }
  std::size_t num_users() const noexcept { return user_ids.size(); }
  ItemIndex pad_token() const noexcept { return kPadToken; }
  ItemIndex mask_token() const noexcept { return num_items() + 1; }
  std::uint64_t total_interactions() const;
};

/// Chronological history of one user.
struct UserSequence {
  std::size_t user = 0;
  std::vector<ItemIndex> items;
  std::vector<Timestamp> timestamps;

  std::size_t size() const noexcept { return items.size(); }
  bool operator==(const UserSequence&) const = default;
};

struct SequenceData {
  std::vector<UserSequence> sequences;
  Catalog catalog;
};

enum class FilterMode {
  single_pass,  // drop rare items, then short users, once
  k_core,       // repeat until every user and item has min_count interactions
};

/// Filters, sorts each user's events by timestamp (stable) and assigns dense
/// ids in order of first appearance.
SequenceData build_sequences(const std::vector<RawInteraction>& interactions,
                             std::size_t min_count = 5,
                             FilterMode mode = FilterMode::single_pass);

/// Turns sequences back into interactions with external ids, user by user.
std::vector<RawInteraction> to_interactions(const SequenceData& data);

/// Keeps `count` users picked by a seeded shuffle (in their original order)
/// and rebuilds the catalog from their interactions with the same filter.
SequenceData subsample_users(const SequenceData& data, std::size_t count, std::uint64_t seed,
                             std::size_t min_count = 5,
                             FilterMode mode = FilterMode::single_pass);

struct UserSplit {
  std::size_t user = 0;
  UserSequence train;
  ItemIndex val_item = 0;
  Timestamp val_time = 0;
  ItemIndex test_item = 0;
  Timestamp test_time = 0;
};

enum class SplitKind { validation, test };

struct SplitDataset {
  std::vector<UserSplit> users;
  Catalog catalog;

  /// What the model may observe when predicting the held-out item: train
  /// only for validation, train plus the validation item for test.
  UserSequence history(const UserSplit& u, SplitKind which) const;
  static ItemIndex target(const UserSplit& u, SplitKind which);
  static Timestamp target_time(const UserSplit& u, SplitKind which);
  /// Every item the user ever interacted with, sorted, unique.
  static std::vector<ItemIndex> all_items(const UserSplit& u);
  UserSequence reassemble(const UserSplit& u) const;
};

SplitDataset leave_one_out_split(const SequenceData& data);

/// A fixed-length model input; left-padded with [PAD] (timestamp 0).
struct Window {
  std::vector<ItemIndex> items;
  std::vector<Timestamp> timestamps;

  std::size_t size() const noexcept { return items.size(); }
  bool is_pad(std::size_t i) const noexcept { return items[i] == kPadToken; }
};

/// Window of the `length` items ending just before position `end` (exclusive).
Window window_ending_at(const UserSequence& seq, std::size_t end, std::size_t length);

/// Window ending at a uniformly chosen position in 1..size().
Window sample_training_window(const UserSequence& seq, std::size_t length, Rng& rng);

/// A window after Cloze masking; labels hold the original item at masked
/// slots and kIgnoreLabel elsewhere.
struct MaskedRow {
  std::vector<ItemIndex> items;
  std::vector<Timestamp> timestamps;
  std::vector<std::int64_t> labels;

  std::size_t masked_count() const;
};

MaskedRow apply_cloze_mask(const Window& window, double mask_prob, ItemIndex mask_token, Rng& rng);

/// Last `length - 1` history items followed by [MASK] at `t_next`.
Window build_eval_instance(std::span<const ItemIndex> items, std::span<const Timestamp> timestamps,
                           Timestamp t_next, std::size_t length, ItemIndex mask_token);

/// Training row that mimics inference: the last train item is masked and
/// predicted from the preceding history at its own timestamp. Requires at
/// least two train items.
std::optional<MaskedRow> inference_style_row(const UserSequence& train, std::size_t length,
                                             ItemIndex mask_token);

/// Row-major B x N batch assembled from masked rows.
struct MaskedBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<ItemIndex> items;
  std::vector<Timestamp> timestamps;
  std::vector<std::int64_t> labels;
  std::vector<unsigned char> pad;

  void append(const MaskedRow& row);
  MaskedRow row(std::size_t b) const;
  std::size_t masked_count() const;
};

/// k distinct negatives, drawn without replacement with probability
/// proportional to popularity, never from `user_items` (sorted).
std::vector<ItemIndex> sample_negatives(std::span<const ItemIndex> user_items,
                                        const Catalog& catalog, std::size_t k, Rng& rng);

/// Preprocessed cache: `catalog.txt` plus `sequences.bin`.
void write_cache(const std::filesystem::path& dir, const SequenceData& data);
SequenceData read_cache(const std::filesystem::path& dir);

}  // namespace seqrec::data
