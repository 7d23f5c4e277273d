// Copyright 2026 The CMI Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CMI_DATA_H_
#define CMI_DATA_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <vector>

namespace cmi {

using UserId = std::uint32_t;
using ItemId = std::uint32_t;
using Timestamp = std::int64_t;

struct InteractionRecord {
  UserId user = 0;
  ItemId item = 0;
  Timestamp timestamp = 0;

  bool operator==(const InteractionRecord&) const = default;
};

// Records over dense user/item indices. `raw_user_ids[u]` / `raw_item_ids[i]`
// map dense indices back to the identifiers found in the source file; both
// are ascending, so dense order matches raw order.
struct InteractionLog {
  std::vector<InteractionRecord> records;
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::vector<std::int64_t> raw_user_ids;
  std::vector<std::int64_t> raw_item_ids;
};

struct ParseOptions {
  char delimiter = ',';
};

// Reads `user,item,timestamp` lines. A non-numeric first row is treated as a
// header. Blank lines are skipped. IDs are re-indexed densely in ascending raw
// order; record order is preserved. Throws ParseError.
InteractionLog ParseInteractions(const std::filesystem::path& path,
                                 const ParseOptions& options = {});
InteractionLog ParseInteractions(std::istream& in,
                                 const ParseOptions& options = {});

// Writes records using raw IDs, one per line, no header.
void WriteInteractions(std::ostream& out, const InteractionLog& log,
                       char delimiter = ',');

struct SplitLog {
  InteractionLog train;
  InteractionLog validation;
  InteractionLog test;
  int span_days = 0;
};

// Day index is floor((t - min_t) / day_length); a record exactly on a
// boundary belongs to the later day. Days [0, h-3] train, h-2 validation,
// h-1 test. Validation/test records whose user or item never occurs in train
// are dropped. All three logs share the source's ID space. Throws
// ConfigError for span_days < 3, day_length <= 0, or records past day h-1.
SplitLog ChronologicalSplit(const InteractionLog& log, int span_days,
                            Timestamp day_length);

struct UserSequence {
  UserId user = 0;
  std::vector<ItemId> items;

  bool operator==(const UserSequence&) const = default;
};

// One sequence per user with at least one record, ascending by user. Items are
// ordered by timestamp (stable on ties) and only the `max_length` most recent
// are kept.
std::vector<UserSequence> BuildSequences(const InteractionLog& log,
                                         std::size_t max_length);

// Per-user sorted, de-duplicated item sets, indexed by UserId.
std::vector<std::vector<ItemId>> UserItemSets(const InteractionLog& log);

struct AugmentedPair {
  UserSequence first;
  UserSequence second;

  bool operator==(const AugmentedPair&) const = default;
};

// Number of items each augmented view keeps: max(1, min(floor(ratio*n), f)).
std::size_t AugmentedLength(std::size_t source_length, double ratio,
                            std::size_t max_length);

// Two independent draws without replacement from `sequence`, each kept in
// source order.
AugmentedPair AugmentSequence(const UserSequence& sequence, double ratio,
                              std::size_t max_length, std::mt19937_64& rng);

// Planted-category benchmark. Items are split into contiguous, equally sized
// categories, and each category into equally sized subtopics. A user picks
// `interests_per_user` categories and one preferred subtopic in each. An
// interaction is noise (a uniform catalog item) with probability noise_rate;
// otherwise it picks one of the user's categories uniformly and then the
// preferred subtopic with probability subtopic_affinity, else a uniform item of
// the category. A user never repeats an item while unseen alternatives exist.
// Timestamps spread each user's history evenly over span_days days starting at
// t = 0, so every user lands in all three chronological splits once
// interactions_per_user >= span_days.
struct SyntheticSpec {
  std::size_t num_users = 1000;
  std::size_t num_items = 2000;
  std::size_t num_planted_categories = 4;
  std::size_t interests_per_user = 2;
  std::size_t interactions_per_user = 100;
  double noise_rate = 0.1;
  std::uint64_t seed = 1;
  std::size_t subtopics_per_category = 10;
  double subtopic_affinity = 0.8;
  int span_days = 14;
  Timestamp day_length = 86400;

  // Throws ConfigError.
  void Validate() const;
};

struct SyntheticDataset {
  InteractionLog log;
  std::vector<std::size_t> item_category;
  std::vector<std::vector<std::size_t>> user_categories;  // sorted
};

SyntheticDataset GenerateSynthetic(const SyntheticSpec& spec);

// `item<TAB>category` and `user<TAB>c1,c2,...` lines.
void WriteItemCategories(std::ostream& out, const SyntheticDataset& data);
void WriteUserCategories(std::ostream& out, const SyntheticDataset& data);

}  // namespace cmi

#endif  // CMI_DATA_H_
