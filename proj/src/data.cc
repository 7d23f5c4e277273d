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

#include "cmi/data.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>

#include "cmi/error.h"

namespace cmi {
namespace {

std::string_view Trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::optional<std::int64_t> ParseInt(std::string_view field) {
  field = Trim(field);
  std::int64_t value = 0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end || field.empty()) return std::nullopt;
  return value;
}

struct RawRecord {
  std::int64_t user;
  std::int64_t item;
  std::int64_t timestamp;
};

// Returns nullopt if any field is non-numeric; throws on wrong field count.
std::optional<RawRecord> ParseLine(std::string_view line, char delimiter,
                                   std::size_t line_number) {
  std::int64_t fields[3];
  std::size_t count = 0;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delimiter, start);
    const auto field = line.substr(start, pos == std::string_view::npos
                                              ? std::string_view::npos
                                              : pos - start);
    if (count == 3) {
      throw ParseError("expected 3 fields (user, item, timestamp)",
                       line_number);
    }
    const auto value = ParseInt(field);
    if (!value) return std::nullopt;
    fields[count++] = *value;
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  if (count != 3) {
    throw ParseError("expected 3 fields (user, item, timestamp)", line_number);
  }
  return RawRecord{fields[0], fields[1], fields[2]};
}

std::vector<std::int64_t> SortedUnique(std::vector<std::int64_t> values) {
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  return values;
}

std::uint32_t DenseIndex(const std::vector<std::int64_t>& sorted,
                         std::int64_t raw) {
  return static_cast<std::uint32_t>(
      std::lower_bound(sorted.begin(), sorted.end(), raw) - sorted.begin());
}

InteractionLog EmptyLike(const InteractionLog& log) {
  InteractionLog out;
  out.num_users = log.num_users;
  out.num_items = log.num_items;
  out.raw_user_ids = log.raw_user_ids;
  out.raw_item_ids = log.raw_item_ids;
  return out;
}

}  // namespace

InteractionLog ParseInteractions(const std::filesystem::path& path,
                                 const ParseOptions& options) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  return ParseInteractions(in, options);
}

InteractionLog ParseInteractions(std::istream& in,
                                 const ParseOptions& options) {
  std::vector<RawRecord> raw;
  std::string line;
  std::size_t line_number = 0;
  bool seen_first_row = false;
  while (std::getline(in, line)) {
    ++line_number;
    const auto trimmed = Trim(line);
    if (trimmed.empty()) continue;
    const bool first_row = !seen_first_row;
    seen_first_row = true;
    auto record = ParseLine(trimmed, options.delimiter, line_number);
    if (!record) {
      if (first_row) continue;  // header
      throw ParseError("non-numeric field", line_number);
    }
    if (record->user < 0 || record->item < 0 || record->timestamp < 0) {
      throw ParseError("negative field", line_number);
    }
    raw.push_back(*record);
  }
  if (raw.empty()) throw ParseError("no interactions in input", 0);

  std::vector<std::int64_t> users, items;
  users.reserve(raw.size());
  items.reserve(raw.size());
  for (const auto& r : raw) {
    users.push_back(r.user);
    items.push_back(r.item);
  }
  InteractionLog log;
  log.raw_user_ids = SortedUnique(std::move(users));
  log.raw_item_ids = SortedUnique(std::move(items));
  log.num_users = log.raw_user_ids.size();
  log.num_items = log.raw_item_ids.size();
  log.records.reserve(raw.size());
  for (const auto& r : raw) {
    log.records.push_back({DenseIndex(log.raw_user_ids, r.user),
                           DenseIndex(log.raw_item_ids, r.item),
                           r.timestamp});
  }
  return log;
}

void WriteInteractions(std::ostream& out, const InteractionLog& log,
                       char delimiter) {
  for (const auto& r : log.records) {
    const auto user = log.raw_user_ids.empty()
                          ? static_cast<std::int64_t>(r.user)
                          : log.raw_user_ids[r.user];
    const auto item = log.raw_item_ids.empty()
                          ? static_cast<std::int64_t>(r.item)
                          : log.raw_item_ids[r.item];
    out << user << delimiter << item << delimiter << r.timestamp << '\n';
  }
}

SplitLog ChronologicalSplit(const InteractionLog& log, int span_days,
                            Timestamp day_length) {
  if (span_days < 3) {
    throw ConfigError("span_days must be at least 3 (train, validation, test)");
  }
  if (day_length <= 0) throw ConfigError("day_length must be positive");

  SplitLog split;
  split.span_days = span_days;
  split.train = EmptyLike(log);
  split.validation = EmptyLike(log);
  split.test = EmptyLike(log);
  if (log.records.empty()) return split;

  Timestamp min_t = log.records.front().timestamp;
  for (const auto& r : log.records) min_t = std::min(min_t, r.timestamp);

  std::vector<bool> user_in_train(log.num_users, false);
  std::vector<bool> item_in_train(log.num_items, false);
  std::vector<int> day_of(log.records.size());
  for (std::size_t i = 0; i < log.records.size(); ++i) {
    const auto& r = log.records[i];
    const Timestamp day = (r.timestamp - min_t) / day_length;
    if (day >= span_days) {
      throw ConfigError("timestamps span more than " +
                        std::to_string(span_days) + " days");
    }
    day_of[i] = static_cast<int>(day);
    if (day <= span_days - 3) {
      user_in_train[r.user] = true;
      item_in_train[r.item] = true;
    }
  }
  for (std::size_t i = 0; i < log.records.size(); ++i) {
    const auto& r = log.records[i];
    if (day_of[i] <= span_days - 3) {
      split.train.records.push_back(r);
    } else if (user_in_train[r.user] && item_in_train[r.item]) {
      auto& target =
          day_of[i] == span_days - 2 ? split.validation : split.test;
      target.records.push_back(r);
    }
  }
  return split;
}

std::vector<UserSequence> BuildSequences(const InteractionLog& log,
                                         std::size_t max_length) {
  std::vector<std::vector<std::size_t>> by_user(log.num_users);
  for (std::size_t i = 0; i < log.records.size(); ++i) {
    by_user[log.records[i].user].push_back(i);
  }
  std::vector<UserSequence> out;
  for (UserId u = 0; u < by_user.size(); ++u) {
    auto& idx = by_user[u];
    if (idx.empty()) continue;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return log.records[a].timestamp < log.records[b].timestamp;
    });
    const std::size_t keep = std::min(max_length, idx.size());
    UserSequence seq{u, {}};
    seq.items.reserve(keep);
    for (std::size_t k = idx.size() - keep; k < idx.size(); ++k) {
      seq.items.push_back(log.records[idx[k]].item);
    }
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<std::vector<ItemId>> UserItemSets(const InteractionLog& log) {
  std::vector<std::vector<ItemId>> sets(log.num_users);
  for (const auto& r : log.records) sets[r.user].push_back(r.item);
  for (auto& s : sets) {
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
  }
  return sets;
}

std::size_t AugmentedLength(std::size_t source_length, double ratio,
                            std::size_t max_length) {
  const auto scaled = static_cast<std::size_t>(
      std::floor(ratio * static_cast<double>(source_length)));
  return std::max<std::size_t>(1, std::min(scaled, max_length));
}

namespace {

UserSequence SampleView(const UserSequence& source, std::size_t length,
                        std::mt19937_64& rng) {
  const std::size_t n = source.items.size();
  std::vector<std::size_t> positions(n);
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  // Partial Fisher-Yates: the first `length` slots become a uniform sample.
  for (std::size_t i = 0; i < length; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(positions[i], positions[pick(rng)]);
  }
  positions.resize(length);
  std::sort(positions.begin(), positions.end());
  UserSequence view{source.user, {}};
  view.items.reserve(length);
  for (auto p : positions) view.items.push_back(source.items[p]);
  return view;
}

}  // namespace

AugmentedPair AugmentSequence(const UserSequence& sequence, double ratio,
                              std::size_t max_length, std::mt19937_64& rng) {
  if (sequence.items.empty()) {
    throw ConfigError("cannot augment an empty sequence");
  }
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    throw ConfigError("sampling ratio must be in (0, 1]");
  }
  const auto length =
      std::min(AugmentedLength(sequence.items.size(), ratio, max_length),
               sequence.items.size());
  AugmentedPair pair;
  pair.first = SampleView(sequence, length, rng);
  pair.second = SampleView(sequence, length, rng);
  return pair;
}

void SyntheticSpec::Validate() const {
  if (num_users == 0 || num_items == 0) {
    throw ConfigError("synthetic spec needs at least one user and one item");
  }
  if (num_planted_categories == 0 || num_planted_categories > num_items) {
    throw ConfigError("num_planted_categories must be in [1, num_items]");
  }
  if (interests_per_user == 0 ||
      interests_per_user > num_planted_categories) {
    throw ConfigError("interests_per_user must be in [1, categories]");
  }
  if (interactions_per_user == 0) {
    throw ConfigError("interactions_per_user must be positive");
  }
  if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) {
    throw ConfigError("noise_rate must be in [0, 1]");
  }
  if (!(subtopic_affinity >= 0.0 && subtopic_affinity <= 1.0)) {
    throw ConfigError("subtopic_affinity must be in [0, 1]");
  }
  if (subtopics_per_category == 0 ||
      subtopics_per_category * num_planted_categories > num_items) {
    throw ConfigError("every subtopic needs at least one item");
  }
  if (span_days < 3 || day_length <= 0) {
    throw ConfigError("synthetic span needs >= 3 days of positive length");
  }
}

SyntheticDataset GenerateSynthetic(const SyntheticSpec& spec) {
  spec.Validate();
  std::mt19937_64 rng(spec.seed);
  const std::size_t categories = spec.num_planted_categories;

  // Contiguous blocks: category c owns [begin(c), begin(c+1)).
  auto block_begin = [](std::size_t total, std::size_t parts, std::size_t k) {
    return total * k / parts;
  };

  SyntheticDataset data;
  data.item_category.resize(spec.num_items);
  for (std::size_t c = 0; c < categories; ++c) {
    for (auto i = block_begin(spec.num_items, categories, c);
         i < block_begin(spec.num_items, categories, c + 1); ++i) {
      data.item_category[i] = c;
    }
  }

  auto& log = data.log;
  log.num_users = spec.num_users;
  log.num_items = spec.num_items;
  log.raw_user_ids.resize(spec.num_users);
  log.raw_item_ids.resize(spec.num_items);
  std::iota(log.raw_user_ids.begin(), log.raw_user_ids.end(), 0);
  std::iota(log.raw_item_ids.begin(), log.raw_item_ids.end(), 0);
  log.records.reserve(spec.num_users * spec.interactions_per_user);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> any_item(0, spec.num_items - 1);
  const Timestamp span = spec.day_length * spec.span_days;
  const std::size_t n = spec.interactions_per_user;
  constexpr int kMaxRedraws = 32;

  std::vector<std::size_t> all_categories(categories);
  std::iota(all_categories.begin(), all_categories.end(), std::size_t{0});
  std::vector<bool> seen(spec.num_items);

  for (UserId u = 0; u < spec.num_users; ++u) {
    auto pool = all_categories;
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<std::size_t> chosen(pool.begin(),
                                    pool.begin() + spec.interests_per_user);
    std::vector<std::size_t> subtopic(chosen.size());
    std::uniform_int_distribution<std::size_t> pick_subtopic(
        0, spec.subtopics_per_category - 1);
    for (auto& s : subtopic) s = pick_subtopic(rng);

    std::fill(seen.begin(), seen.end(), false);
    std::size_t in_category_draws = 0;
    for (std::size_t k = 0; k < n; ++k) {
      ItemId item = 0;
      for (int attempt = 0; attempt <= kMaxRedraws; ++attempt) {
        if (unit(rng) < spec.noise_rate) {
          item = static_cast<ItemId>(any_item(rng));
        } else {
          // The first draws visit each chosen category once so the user's
          // history covers all of its planted interests.
          std::size_t slot = in_category_draws < chosen.size()
                                 ? in_category_draws
                                 : std::uniform_int_distribution<std::size_t>(
                                       0, chosen.size() - 1)(rng);
          const std::size_t c = chosen[slot];
          const auto cat_begin = block_begin(spec.num_items, categories, c);
          const auto cat_end = block_begin(spec.num_items, categories, c + 1);
          std::size_t lo = cat_begin, hi = cat_end;
          if (unit(rng) < spec.subtopic_affinity) {
            const auto width = cat_end - cat_begin;
            lo = cat_begin + block_begin(width, spec.subtopics_per_category,
                                         subtopic[slot]);
            hi = cat_begin + block_begin(width, spec.subtopics_per_category,
                                         subtopic[slot] + 1);
          }
          item = static_cast<ItemId>(
              std::uniform_int_distribution<std::size_t>(lo, hi - 1)(rng));
          if (attempt == kMaxRedraws || !seen[item]) ++in_category_draws;
        }
        if (!seen[item]) break;
      }
      seen[item] = true;
      const Timestamp t =
          k == 0 ? 0
                 : static_cast<Timestamp>(
                       (static_cast<double>(k) + unit(rng)) *
                       static_cast<double>(span) / static_cast<double>(n));
      log.records.push_back({u, item, std::min(t, span - 1)});
    }
    std::sort(chosen.begin(), chosen.end());
    data.user_categories.push_back(std::move(chosen));
  }
  return data;
}

void WriteItemCategories(std::ostream& out, const SyntheticDataset& data) {
  for (std::size_t i = 0; i < data.item_category.size(); ++i) {
    out << data.log.raw_item_ids[i] << '\t' << data.item_category[i] << '\n';
  }
}

void WriteUserCategories(std::ostream& out, const SyntheticDataset& data) {
  for (std::size_t u = 0; u < data.user_categories.size(); ++u) {
    out << data.log.raw_user_ids[u] << '\t';
    for (std::size_t k = 0; k < data.user_categories[u].size(); ++k) {
      out << (k ? "," : "") << data.user_categories[u][k];
    }
    out << '\n';
  }
}

}  // namespace cmi
