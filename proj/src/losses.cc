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

#include "cmi/losses.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "cmi/error.h"

namespace cmi {

template <typename Real>
Real LogSumExp(std::span<const Real> values) {
  if (values.empty()) return -INFINITY;
  const Real max = *std::max_element(values.begin(), values.end());
  if (std::isinf(max)) return max;
  Real sum = 0;
  for (Real v : values) sum += std::exp(v - max);
  return max + std::log(sum);
}

template <typename Real>
Real OrthogonalityLoss(const Matrix<Real>& categories) {
  Real loss = 0;
  for (std::size_t i = 0; i < categories.rows(); ++i) {
    for (std::size_t j = 0; j < categories.rows(); ++j) {
      if (i == j) continue;
      const Real dot = Dot(categories.row(i), categories.row(j));
      loss += dot * dot;
    }
  }
  return loss;
}

template <typename Real>
Real ContrastiveMultiInterestLoss(std::span<const Matrix<Real>> view1,
                                  std::span<const Matrix<Real>> view2,
                                  Real tau, ContrastiveStats* stats) {
  if (view1.size() != view2.size() || view1.empty()) {
    throw ConfigError("contrastive views must be non-empty and equal in size");
  }
  const std::size_t batch = view1.size();
  const std::size_t m = view1.front().rows();
  const std::size_t d = view1.front().cols();

  // unit[v][i * m + k] is interest k of user i in view v, normalized.
  Matrix<Real> unit[2] = {Matrix<Real>(batch * m, d),
                          Matrix<Real>(batch * m, d)};
  for (int v = 0; v < 2; ++v) {
    const auto views = v == 0 ? view1 : view2;
    for (std::size_t i = 0; i < batch; ++i) {
      if (views[i].rows() != m || views[i].cols() != d) {
        throw ConfigError("contrastive interest shapes disagree");
      }
      for (std::size_t k = 0; k < m; ++k) {
        const Real norm = Norm(views[i].row(k));
        if (norm == Real(0)) {
          throw NumericError("zero-norm interest vector (user " +
                             std::to_string(i) + ", interest " +
                             std::to_string(k) + ")");
        }
        auto dst = unit[v].row(i * m + k);
        for (std::size_t c = 0; c < d; ++c) dst[c] = views[i](k, c) / norm;
      }
    }
  }

  const std::size_t rows = batch * m;
  std::vector<Real> logits_a, logits_b;
  Real total = 0;
  std::size_t negatives = 0;
  for (std::size_t anchor = 0; anchor < rows; ++anchor) {
    const auto a = unit[0].row(anchor);
    const auto b = unit[1].row(anchor);
    const Real positive = Dot(a, b) / tau;
    logits_a.assign(1, positive);
    logits_b.assign(1, positive);
    for (int v = 0; v < 2; ++v) {
      for (std::size_t other = 0; other < rows; ++other) {
        if (other == anchor) continue;
        const auto n = unit[v].row(other);
        logits_a.push_back(Dot(a, n) / tau);
        logits_b.push_back(Dot(b, n) / tau);
      }
    }
    negatives = logits_a.size() - 1;
    total += (LogSumExp<Real>(logits_a) - positive) +
             (LogSumExp<Real>(logits_b) - positive);
  }
  if (stats != nullptr) {
    stats->anchors = rows;
    stats->negatives_per_anchor = negatives;
  }
  return total / static_cast<Real>(rows);
}

std::vector<ItemId> SampleNegatives(std::span<const ItemId> history,
                                    std::size_t catalog_size, std::size_t n,
                                    std::mt19937_64& rng) {
  std::size_t excluded = 0;
  for (std::size_t k = 0; k < history.size(); ++k) {
    if (history[k] < catalog_size && (k == 0 || history[k] != history[k - 1])) {
      ++excluded;
    }
  }
  const std::size_t available = catalog_size - excluded;
  if (available < n) {
    throw ConfigError("only " + std::to_string(available) +
                      " never-interacted items left, need " +
                      std::to_string(n));
  }
  auto interacted = [&](ItemId item) {
    return std::binary_search(history.begin(), history.end(), item);
  };
  std::vector<ItemId> out;
  out.reserve(n);
  if (available * 4 >= catalog_size) {
    // Dense complement: rejection sampling terminates quickly.
    std::uniform_int_distribution<std::size_t> pick(0, catalog_size - 1);
    while (out.size() < n) {
      const auto item = static_cast<ItemId>(pick(rng));
      if (interacted(item) ||
          std::find(out.begin(), out.end(), item) != out.end()) {
        continue;
      }
      out.push_back(item);
    }
    return out;
  }
  std::vector<ItemId> complement;
  complement.reserve(available);
  for (std::size_t i = 0; i < catalog_size; ++i) {
    if (!interacted(static_cast<ItemId>(i))) {
      complement.push_back(static_cast<ItemId>(i));
    }
  }
  for (std::size_t k = 0; k < n; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, complement.size() - 1);
    std::swap(complement[k], complement[pick(rng)]);
    out.push_back(complement[k]);
  }
  return out;
}

CandidateSet BuildCandidateSet(std::span<const ItemId> positives,
                               std::span<const std::vector<ItemId>> negatives) {
  if (positives.size() != negatives.size()) {
    throw ConfigError("one negative list per positive expected");
  }
  CandidateSet set;
  set.batch_size = positives.size();
  set.items.assign(positives.begin(), positives.end());
  for (const auto& list : negatives) {
    set.items.insert(set.items.end(), list.begin(), list.end());
  }
  return set;
}

template <typename Real>
Real MainLoss(std::span<const InterestSet<Real>> users,
              const CandidateSet& candidates,
              const Matrix<Real>& item_embeddings, Real epsilon) {
  if (users.size() != candidates.batch_size || users.empty()) {
    throw ConfigError("main loss needs one interest set per batch user");
  }
  std::vector<Real> logits(candidates.items.size());
  Real total = 0;
  for (std::size_t i = 0; i < users.size(); ++i) {
    for (std::size_t j = 0; j < candidates.items.size(); ++j) {
      logits[j] = ScoreInteraction(
          users[i], item_embeddings.row(candidates.items[j]), epsilon);
    }
    total += LogSumExp<Real>(logits) - logits[i];
  }
  return total / static_cast<Real>(users.size());
}

BatchLossReport TotalLoss(double main, double contrastive,
                          double orthogonality, double lambda_cl,
                          double lambda_orth) {
  if (!std::isfinite(main) || !std::isfinite(contrastive) ||
      !std::isfinite(orthogonality)) {
    throw NumericError("non-finite loss component (main=" +
                       std::to_string(main) +
                       ", contrastive=" + std::to_string(contrastive) +
                       ", orthogonality=" + std::to_string(orthogonality) +
                       ")");
  }
  BatchLossReport report;
  report.main = main;
  report.contrastive = contrastive;
  report.orthogonality = orthogonality;
  report.total =
      main + lambda_cl * contrastive + lambda_orth * orthogonality;
  return report;
}

#define CMI_INSTANTIATE_LOSSES(Real)                                        \
  template Real LogSumExp<Real>(std::span<const Real>);                     \
  template Real OrthogonalityLoss<Real>(const Matrix<Real>&);               \
  template Real ContrastiveMultiInterestLoss<Real>(                         \
      std::span<const Matrix<Real>>, std::span<const Matrix<Real>>, Real,   \
      ContrastiveStats*);                                                   \
  template Real MainLoss<Real>(std::span<const InterestSet<Real>>,          \
                               const CandidateSet&, const Matrix<Real>&, Real);

CMI_INSTANTIATE_LOSSES(float)
CMI_INSTANTIATE_LOSSES(double)

#undef CMI_INSTANTIATE_LOSSES

}  // namespace cmi
