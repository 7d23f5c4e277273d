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

#ifndef CMI_INFERENCE_H_
#define CMI_INFERENCE_H_

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cmi/data.h"
#include "cmi/model.h"

namespace cmi {

enum class RankMode {
  kMultiCosine,  // max_l cos(u_l, v)
  kCombined,     // max_l (u_l . v / epsilon) + u_g . v
};

std::string_view RankModeName(RankMode mode);
// Accepts "multi_cosine" / "combined"; throws ConfigError otherwise.
RankMode ParseRankMode(std::string_view name);

struct Recommendation {
  UserId user = 0;
  std::vector<ItemId> items;
  std::vector<double> scores;
  bool truncated = false;  // fewer than K eligible items
};

// Two-stage recall: each interest retrieves its K nearest items by cosine
// (excluded items skipped), the union is re-ranked by `mode` and cut to K.
// Ties break toward the smaller item id.
class Retriever {
 public:
  Retriever(const ModelParameters& params, const Hyperparams& hyper);

  Recommendation Recall(const UserSequence& history,
                        std::span<const ItemId> excluded, std::size_t k,
                        RankMode mode) const;

  // Same as calling Recall once per k, sharing the forward pass.
  std::vector<Recommendation> RecallAtKs(const UserSequence& history,
                                         std::span<const ItemId> excluded,
                                         std::span<const std::size_t> ks,
                                         RankMode mode) const;

 private:
  const ModelParameters& params_;
  Hyperparams hyper_;
  std::vector<float> item_norms_;
};

// Excludes the history's own items.
Recommendation RecallForUser(const UserSequence& history,
                             const ModelParameters& params,
                             const Hyperparams& hyper, std::size_t k,
                             RankMode mode);

struct MetricsReport {
  std::vector<std::size_t> ks;
  std::vector<double> recall;
  std::vector<double> hitrate;
  std::size_t users = 0;

  // Throws ConfigError if k was not evaluated.
  double RecallAt(std::size_t k) const;
  double HitRateAt(std::size_t k) const;
};

// Macro-averaged Recall@K (|top-K ∩ truth| / |truth|) and HitRate@K (share
// of users with a hit), summed with compensation in insertion order.
class MetricsAccumulator {
 public:
  explicit MetricsAccumulator(std::vector<std::size_t> ks);

  // rankings[i] is the list evaluated at ks[i]; only its first ks[i] entries
  // count. `truth` must be non-empty.
  void AddUser(std::span<const std::vector<ItemId>> rankings,
               std::span<const ItemId> truth);
  // One ranking evaluated at every K.
  void AddUser(std::span<const ItemId> ranking, std::span<const ItemId> truth);

  MetricsReport Finish() const;

 private:
  struct Compensated {
    double sum = 0.0;
    double carry = 0.0;
    void Add(double x);
    double Value() const { return sum + carry; }
  };

  std::vector<std::size_t> ks_;
  std::vector<Compensated> recall_;
  std::vector<Compensated> hits_;
  std::size_t users_ = 0;
};

inline const std::vector<std::size_t>& DefaultMetricKs() {
  static const std::vector<std::size_t> ks = {10, 20, 50};
  return ks;
}

// Every user with at least one `target` record is scored against its train
// sequence (last hyper.max_length items); train items are excluded from
// recommendations.
MetricsReport EvaluateSplit(const InteractionLog& train,
                            const InteractionLog& target,
                            const ModelParameters& params,
                            const Hyperparams& hyper,
                            std::span<const std::size_t> ks, RankMode mode,
                            std::size_t threads = 1);

// Baseline ranking every item by train-split interaction count (ties to the
// smaller id), with each user's train items excluded.
MetricsReport EvaluatePopularity(const InteractionLog& train,
                                 const InteractionLog& target,
                                 std::span<const std::size_t> ks);

// `user<TAB>item:score,item:score,...` using raw ids from `naming`.
std::string FormatRecommendation(const Recommendation& rec,
                                 const InteractionLog& naming);

// `K<TAB>recall<TAB>hitrate` rows after a header.
void WriteMetricsTsv(std::ostream& out, const MetricsReport& report);
// `metric K value` lines, e.g. `recall 10 0.25`.
void WriteMetricsKeyValue(std::ostream& out, const MetricsReport& report);

}  // namespace cmi

#endif  // CMI_INFERENCE_H_
