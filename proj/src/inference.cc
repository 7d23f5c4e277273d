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

#include "cmi/inference.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ostream>
#include <string>

#include "cmi/error.h"
#include "cmi/parallel.h"

namespace cmi {
namespace {

struct Scored {
  float score;
  ItemId item;
};

bool Better(const Scored& a, const Scored& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.item < b.item;
}

float SafeCosine(std::span<const float> a, std::span<const float> b,
                 float norm_a, float norm_b) {
  if (norm_a == 0.0f || norm_b == 0.0f) return 0.0f;
  return Dot(a, b) / (norm_a * norm_b);
}

std::string FormatDouble(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

std::string_view RankModeName(RankMode mode) {
  return mode == RankMode::kCombined ? "combined" : "multi_cosine";
}

RankMode ParseRankMode(std::string_view name) {
  if (name == "combined") return RankMode::kCombined;
  if (name == "multi_cosine") return RankMode::kMultiCosine;
  throw ConfigError("unknown rank mode '" + std::string(name) +
                    "' (expected combined or multi_cosine)");
}

Retriever::Retriever(const ModelParameters& params, const Hyperparams& hyper)
    : params_(params), hyper_(hyper) {
  item_norms_.resize(params.item_embeddings.rows());
  for (std::size_t j = 0; j < item_norms_.size(); ++j) {
    item_norms_[j] = Norm(params.item_embeddings.row(j));
  }
}

Recommendation Retriever::Recall(const UserSequence& history,
                                 std::span<const ItemId> excluded,
                                 std::size_t k, RankMode mode) const {
  const std::size_t ks[] = {k};
  return std::move(RecallAtKs(history, excluded, ks, mode).front());
}

std::vector<Recommendation> Retriever::RecallAtKs(
    const UserSequence& history, std::span<const ItemId> excluded,
    std::span<const std::size_t> ks, RankMode mode) const {
  const auto interests = ForwardUser<float>(history.items, params_, hyper_);
  const std::size_t m = interests.interests.rows();
  const std::size_t num_items = params_.item_embeddings.rows();
  const std::size_t max_k =
      ks.empty() ? 0 : *std::max_element(ks.begin(), ks.end());

  std::vector<bool> blocked(num_items, false);
  for (ItemId item : excluded) {
    if (item < num_items) blocked[item] = true;
  }
  std::vector<ItemId> eligible;
  eligible.reserve(num_items);
  for (std::size_t j = 0; j < num_items; ++j) {
    if (!blocked[j]) eligible.push_back(static_cast<ItemId>(j));
  }

  // Per-interest cosine top-max_k; the top-k for smaller k is its prefix.
  std::vector<std::vector<Scored>> per_interest(m);
  std::vector<Scored> scored(eligible.size());
  for (std::size_t l = 0; l < m; ++l) {
    const auto u = interests.interests.row(l);
    const float u_norm = Norm(u);
    for (std::size_t e = 0; e < eligible.size(); ++e) {
      const ItemId j = eligible[e];
      scored[e] = {SafeCosine(u, params_.item_embeddings.row(j), u_norm,
                              item_norms_[j]),
                   j};
    }
    const std::size_t keep = std::min(max_k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + keep, scored.end(),
                      Better);
    per_interest[l].assign(scored.begin(), scored.begin() + keep);
  }

  std::vector<float> interest_norms(m);
  for (std::size_t l = 0; l < m; ++l) {
    interest_norms[l] = Norm(interests.interests.row(l));
  }
  const float epsilon = static_cast<float>(hyper_.epsilon);
  auto final_score = [&](ItemId j) {
    const auto v = params_.item_embeddings.row(j);
    if (mode == RankMode::kCombined) {
      return ScoreInteraction(interests, v, epsilon);
    }
    float best = -INFINITY;
    for (std::size_t l = 0; l < m; ++l) {
      best = std::max(best, SafeCosine(interests.interests.row(l), v,
                                       interest_norms[l], item_norms_[j]));
    }
    return best;
  };

  std::vector<Recommendation> out;
  out.reserve(ks.size());
  std::vector<ItemId> pool;
  for (std::size_t k : ks) {
    pool.clear();
    for (const auto& list : per_interest) {
      for (std::size_t r = 0; r < std::min(k, list.size()); ++r) {
        pool.push_back(list[r].item);
      }
    }
    std::sort(pool.begin(), pool.end());
    pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
    std::vector<Scored> ranked;
    ranked.reserve(pool.size());
    for (ItemId j : pool) ranked.push_back({final_score(j), j});
    const std::size_t keep = std::min(k, ranked.size());
    std::partial_sort(ranked.begin(), ranked.begin() + keep, ranked.end(),
                      Better);
    Recommendation rec;
    rec.user = history.user;
    rec.truncated = eligible.size() < k;
    for (std::size_t r = 0; r < keep; ++r) {
      rec.items.push_back(ranked[r].item);
      rec.scores.push_back(ranked[r].score);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

Recommendation RecallForUser(const UserSequence& history,
                             const ModelParameters& params,
                             const Hyperparams& hyper, std::size_t k,
                             RankMode mode) {
  std::vector<ItemId> excluded = history.items;
  std::sort(excluded.begin(), excluded.end());
  return Retriever(params, hyper).Recall(history, excluded, k, mode);
}

double MetricsReport::RecallAt(std::size_t k) const {
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] == k) return recall[i];
  }
  throw ConfigError("Recall@" + std::to_string(k) + " was not evaluated");
}

double MetricsReport::HitRateAt(std::size_t k) const {
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] == k) return hitrate[i];
  }
  throw ConfigError("HitRate@" + std::to_string(k) + " was not evaluated");
}

void MetricsAccumulator::Compensated::Add(double x) {
  // Neumaier summation.
  const double t = sum + x;
  if (std::abs(sum) >= std::abs(x)) {
    carry += (sum - t) + x;
  } else {
    carry += (x - t) + sum;
  }
  sum = t;
}

MetricsAccumulator::MetricsAccumulator(std::vector<std::size_t> ks)
    : ks_(std::move(ks)), recall_(ks_.size()), hits_(ks_.size()) {}

void MetricsAccumulator::AddUser(std::span<const std::vector<ItemId>> rankings,
                                 std::span<const ItemId> truth) {
  if (rankings.size() != ks_.size()) {
    throw ConfigError("one ranking per K expected");
  }
  if (truth.empty()) throw ConfigError("user without truth items");
  std::vector<ItemId> sorted_truth(truth.begin(), truth.end());
  std::sort(sorted_truth.begin(), sorted_truth.end());
  sorted_truth.erase(std::unique(sorted_truth.begin(), sorted_truth.end()),
                     sorted_truth.end());
  for (std::size_t i = 0; i < ks_.size(); ++i) {
    const auto& ranking = rankings[i];
    std::vector<ItemId> top(ranking.begin(),
                            ranking.begin() +
                                std::min(ks_[i], ranking.size()));
    std::sort(top.begin(), top.end());
    top.erase(std::unique(top.begin(), top.end()), top.end());
    std::vector<ItemId> common;
    std::set_intersection(top.begin(), top.end(), sorted_truth.begin(),
                          sorted_truth.end(), std::back_inserter(common));
    recall_[i].Add(static_cast<double>(common.size()) /
                   static_cast<double>(sorted_truth.size()));
    hits_[i].Add(common.empty() ? 0.0 : 1.0);
  }
  ++users_;
}

void MetricsAccumulator::AddUser(std::span<const ItemId> ranking,
                                 std::span<const ItemId> truth) {
  const std::vector<std::vector<ItemId>> rankings(
      ks_.size(), std::vector<ItemId>(ranking.begin(), ranking.end()));
  AddUser(rankings, truth);
}

MetricsReport MetricsAccumulator::Finish() const {
  MetricsReport report;
  report.ks = ks_;
  report.users = users_;
  for (std::size_t i = 0; i < ks_.size(); ++i) {
    const double n = users_ == 0 ? 1.0 : static_cast<double>(users_);
    report.recall.push_back(recall_[i].Value() / n);
    report.hitrate.push_back(hits_[i].Value() / n);
  }
  return report;
}

namespace {

struct EvalUser {
  UserSequence history;
  std::vector<ItemId> truth;
};

// Users with at least one target record and a non-empty train history.
std::vector<EvalUser> CollectEvalUsers(const InteractionLog& train,
                                       const InteractionLog& target,
                                       std::size_t max_length) {
  auto sequences = BuildSequences(train, max_length);
  std::vector<std::size_t> seq_of(std::max(train.num_users, target.num_users),
                                  SIZE_MAX);
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    seq_of[sequences[s].user] = s;
  }
  const auto truth = UserItemSets(target);
  std::vector<EvalUser> users;
  for (UserId u = 0; u < truth.size(); ++u) {
    if (truth[u].empty() || u >= seq_of.size() || seq_of[u] == SIZE_MAX) {
      continue;
    }
    users.push_back({sequences[seq_of[u]], truth[u]});
  }
  return users;
}

}  // namespace

MetricsReport EvaluateSplit(const InteractionLog& train,
                            const InteractionLog& target,
                            const ModelParameters& params,
                            const Hyperparams& hyper,
                            std::span<const std::size_t> ks, RankMode mode,
                            std::size_t threads) {
  const auto users = CollectEvalUsers(train, target, hyper.max_length);
  const auto train_items = UserItemSets(train);
  const Retriever retriever(params, hyper);

  std::vector<std::vector<std::vector<ItemId>>> rankings(users.size());
  ParallelChunks(users.size(), threads,
                 [&](std::size_t begin, std::size_t end, std::size_t) {
                   for (std::size_t i = begin; i < end; ++i) {
                     const auto recs = retriever.RecallAtKs(
                         users[i].history, train_items[users[i].history.user],
                         ks, mode);
                     for (const auto& rec : recs) {
                       rankings[i].push_back(rec.items);
                     }
                   }
                 });
  MetricsAccumulator acc({ks.begin(), ks.end()});
  for (std::size_t i = 0; i < users.size(); ++i) {
    acc.AddUser(rankings[i], users[i].truth);
  }
  return acc.Finish();
}

MetricsReport EvaluatePopularity(const InteractionLog& train,
                                 const InteractionLog& target,
                                 std::span<const std::size_t> ks) {
  std::vector<std::size_t> counts(train.num_items, 0);
  for (const auto& r : train.records) ++counts[r.item];
  std::vector<ItemId> order(train.num_items);
  for (std::size_t j = 0; j < order.size(); ++j) {
    order[j] = static_cast<ItemId>(j);
  }
  std::stable_sort(order.begin(), order.end(), [&](ItemId a, ItemId b) {
    return counts[a] > counts[b];
  });

  const auto train_items = UserItemSets(train);
  const auto truth = UserItemSets(target);
  const std::size_t max_k =
      ks.empty() ? 0 : *std::max_element(ks.begin(), ks.end());
  MetricsAccumulator acc({ks.begin(), ks.end()});
  std::vector<ItemId> ranking;
  for (UserId u = 0; u < truth.size(); ++u) {
    if (truth[u].empty() || u >= train_items.size() ||
        train_items[u].empty()) {
      continue;
    }
    ranking.clear();
    for (ItemId j : order) {
      if (ranking.size() == max_k) break;
      if (!std::binary_search(train_items[u].begin(), train_items[u].end(),
                              j)) {
        ranking.push_back(j);
      }
    }
    acc.AddUser(std::span<const ItemId>(ranking), truth[u]);
  }
  return acc.Finish();
}

std::string FormatRecommendation(const Recommendation& rec,
                                 const InteractionLog& naming) {
  std::string line = std::to_string(naming.raw_user_ids.at(rec.user));
  line += '\t';
  for (std::size_t r = 0; r < rec.items.size(); ++r) {
    if (r) line += ',';
    line += std::to_string(naming.raw_item_ids.at(rec.items[r]));
    line += ':';
    line += FormatDouble(rec.scores[r]);
  }
  return line;
}

void WriteMetricsTsv(std::ostream& out, const MetricsReport& report) {
  out << "k\trecall\thitrate\n";
  for (std::size_t i = 0; i < report.ks.size(); ++i) {
    out << report.ks[i] << '\t' << FormatDouble(report.recall[i]) << '\t'
        << FormatDouble(report.hitrate[i]) << '\n';
  }
}

void WriteMetricsKeyValue(std::ostream& out, const MetricsReport& report) {
  for (std::size_t i = 0; i < report.ks.size(); ++i) {
    out << "recall " << report.ks[i] << ' ' << FormatDouble(report.recall[i])
        << '\n';
  }
  for (std::size_t i = 0; i < report.ks.size(); ++i) {
    out << "hitrate " << report.ks[i] << ' '
        << FormatDouble(report.hitrate[i]) << '\n';
  }
  out << "users " << report.users << '\n';
}

}  // namespace cmi
