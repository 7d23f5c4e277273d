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

#ifndef CMI_LOSSES_H_
#define CMI_LOSSES_H_

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "cmi/data.h"
#include "cmi/model.h"
#include "cmi/tensor.h"

namespace cmi {

struct BatchLossReport {
  double main = 0.0;
  double contrastive = 0.0;
  double orthogonality = 0.0;
  double total = 0.0;
  std::size_t batch_size = 0;
  std::size_t negatives_per_positive = 0;
};

// sum over ordered pairs i != j of (g_i . g_j)^2.
template <typename Real>
Real OrthogonalityLoss(const Matrix<Real>& categories);

struct ContrastiveStats {
  std::size_t anchors = 0;
  std::size_t negatives_per_anchor = 0;
};

// Contrastive multi-interest loss over a batch of two augmented views, each
// |B| matrices of m x d interests. For anchor (i, k) the positive is the
// same interest in the other view and the negatives are every other
// interest vector in the batch (both views), 2(m|B| - 1) of them:
//
//   -log e^{s(a,b)} / (e^{s(a,b)} + sum_n e^{s(a,n)})
//   -log e^{s(a,b)} / (e^{s(a,b)} + sum_n e^{s(b,n)})
//
// with s(x, y) = cos(x, y) / tau. Returns the mean over the |B| m anchors.
// Throws NumericError on a zero-norm interest.
template <typename Real>
Real ContrastiveMultiInterestLoss(std::span<const Matrix<Real>> view1,
                                  std::span<const Matrix<Real>> view2,
                                  Real tau, ContrastiveStats* stats = nullptr);

// n distinct items drawn uniformly from [0, catalog_size) minus `history`
// (sorted). Throws ConfigError when fewer than n items remain.
std::vector<ItemId> SampleNegatives(std::span<const ItemId> history,
                                    std::size_t catalog_size, std::size_t n,
                                    std::mt19937_64& rng);

// Candidates scored for every user of a batch: slot i holds user i's positive,
// followed by all users' sampled negatives. User i's negative set is every
// slot other than i. Items are not de-duplicated.
struct CandidateSet {
  std::vector<ItemId> items;
  std::size_t batch_size = 0;

  std::size_t negatives_per_positive() const { return items.size() - 1; }
};

CandidateSet BuildCandidateSet(std::span<const ItemId> positives,
                               std::span<const std::vector<ItemId>> negatives);

// Mean over users of -log softmax(c_i)[i], where c_i holds ScoreInteraction
// of user i against every candidate.
template <typename Real>
Real MainLoss(std::span<const InterestSet<Real>> users,
              const CandidateSet& candidates,
              const Matrix<Real>& item_embeddings, Real epsilon);

// total = main + lambda_cl * contrastive + lambda_orth * orthogonality.
// Throws NumericError if any component is non-finite.
BatchLossReport TotalLoss(double main, double contrastive,
                          double orthogonality, double lambda_cl,
                          double lambda_orth);

// log(sum exp(x)) with the maximum subtracted first.
template <typename Real>
Real LogSumExp(std::span<const Real> values);

}  // namespace cmi

#endif  // CMI_LOSSES_H_
