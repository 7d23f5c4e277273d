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

#ifndef CMI_TRAINING_H_
#define CMI_TRAINING_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cmi/data.h"
#include "cmi/inference.h"
#include "cmi/losses.h"
#include "cmi/model.h"

namespace cmi {

// Next-item example: `history` holds the items strictly before `positive`.
struct TrainingInstance {
  UserId user = 0;
  UserSequence history;
  ItemId positive = 0;

  bool operator==(const TrainingInstance&) const = default;
};

// For each sequence and each position t >= 1 (0-based), emits
// (items[0..t) truncated to the last max_length, items[t]). With cap > 0 at
// most `cap` positions per user are kept, chosen uniformly and emitted in
// sequence order.
std::vector<TrainingInstance> BuildInstances(
    std::span<const UserSequence> train, std::size_t max_length,
    std::size_t cap, std::mt19937_64& rng);

// What negative sampling needs to know about the catalog.
struct SamplingContext {
  std::span<const std::vector<ItemId>> user_items;  // sorted, per UserId
  std::size_t catalog_size = 0;
};

// Stochastic inputs of one batch, drawn once so loss and gradient
// evaluations can share them.
struct BatchDraws {
  std::vector<AugmentedPair> views;
  std::vector<std::vector<ItemId>> negatives;
};

// Instance i draws from an engine seeded by (seed, i) only.
BatchDraws DrawBatch(std::span<const TrainingInstance> batch,
                     const Hyperparams& hyper, const SamplingContext& context,
                     std::uint64_t seed);

// Gradients of the total loss. Item rows appear only if the batch touched
// them (histories, positives, negatives); every other row is implicitly zero.
template <typename Real>
struct GradientSet {
  std::vector<ItemId> item_rows;  // sorted, unique
  Matrix<Real> item_grads;        // item_rows.size() x d
  Matrix<Real> category;          // m x d
  GruParameters<Real> gru;

  Matrix<Real> DenseItemGradients(std::size_t num_items) const;
};

// Forward-only objective composed from the public model and loss functions.
template <typename Real>
BatchLossReport ComputeLoss(std::span<const TrainingInstance> batch,
                            const Parameters<Real>& params,
                            const Hyperparams& hyper, const BatchDraws& draws);

// Reverse-mode gradients of the same objective. Per-instance work is split
// into `threads` contiguous chunks whose partial sums are reduced in chunk
// order. Throws NumericError on a non-finite loss.
template <typename Real>
std::pair<BatchLossReport, GradientSet<Real>> ComputeGradients(
    std::span<const TrainingInstance> batch, const Parameters<Real>& params,
    const Hyperparams& hyper, const BatchDraws& draws,
    std::size_t threads = 1);

// Adam moments. Item moments live per row and only rows present in a
// gradient set are touched; bias correction uses the global step count.
struct OptimizerState {
  Matrix<float> item_m, item_v;
  Matrix<float> category_m, category_v;
  GruParameters<float> gru_m, gru_v;
  std::uint64_t step = 0;

  static OptimizerState For(const ModelParameters& params);
};

// One Adam update followed by unit-norm projection of the touched item rows
// and every category row.
void AdamStep(ModelParameters& params, const GradientSet<float>& grads,
              OptimizerState& state, const Hyperparams& hyper);

struct TrainConfig {
  Hyperparams hyper;
  std::size_t max_epochs = 100;
  std::size_t instances_per_user = 0;  // 0 keeps every position
  std::uint64_t seed = 42;
  std::size_t threads = 1;
  RankMode rank_mode = RankMode::kCombined;
  std::size_t eval_k = 50;
  std::filesystem::path checkpoint_path;  // empty: keep best in memory only

  void Validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;
  double main = 0.0;
  double contrastive = 0.0;
  double orthogonality = 0.0;
  double total = 0.0;
  double validation_recall = 0.0;
  double elapsed_seconds = 0.0;
};

struct FitCallbacks {
  // After every optimizer step.
  std::function<void(const ModelParameters&, std::size_t epoch,
                      std::size_t step)>
      on_step;
  // After every epoch's validation.
  std::function<void(const EpochStats&)> on_epoch;
};

struct FitResult {
  ModelParameters best;
  std::size_t best_epoch = 0;
  double best_validation_recall = 0.0;
  double initial_validation_recall = 0.0;  // untrained parameters
  std::vector<EpochStats> epochs;
};

// Trains on split.train, validating Recall@eval_k on split.validation after
// every epoch, and returns the best epoch's parameters. Stops after
// hyper.patience epochs without improvement or at max_epochs.
FitResult Fit(const SplitLog& split, const TrainConfig& config,
              const FitCallbacks& callbacks = {});

struct GradientCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-5;
  std::uint64_t seed = 7;
  // When false every loss evaluation redraws views and negatives.
  bool freeze_draws = true;
};

struct GradientCheckReport {
  std::vector<std::string> names;          // per parameter array
  std::vector<double> max_relative_error;  // per parameter array
  std::size_t coordinates = 0;
  double worst = 0.0;
  bool passed = false;
};

// Central differences of ComputeLoss against ComputeGradients in double
// precision over every coordinate of every parameter array.
GradientCheckReport GradientCheck(const Parameters<double>& params,
                                  std::span<const TrainingInstance> batch,
                                  const Hyperparams& hyper,
                                  const SamplingContext& context,
                                  const GradientCheckOptions& options = {});

// Deterministic seed derivation shared by data draws and training.
std::uint64_t MixSeed(std::uint64_t seed, std::uint64_t a,
                      std::uint64_t b = 0);

}  // namespace cmi

#endif  // CMI_TRAINING_H_
