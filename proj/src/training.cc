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

#include "cmi/training.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "cmi/checkpoint.h"
#include "cmi/error.h"

namespace cmi {

std::uint64_t MixSeed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a running combination.
  auto mix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  return mix(mix(mix(seed) ^ a) ^ b);
}

std::vector<TrainingInstance> BuildInstances(
    std::span<const UserSequence> train, std::size_t max_length,
    std::size_t cap, std::mt19937_64& rng) {
  if (max_length == 0) throw ConfigError("max_length must be >= 1");
  std::vector<TrainingInstance> out;
  std::vector<std::size_t> positions;
  for (const auto& seq : train) {
    if (seq.items.size() < 2) continue;
    positions.resize(seq.items.size() - 1);
    std::iota(positions.begin(), positions.end(), std::size_t{1});
    if (cap > 0 && positions.size() > cap) {
      for (std::size_t i = 0; i < cap; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i,
                                                        positions.size() - 1);
        std::swap(positions[i], positions[pick(rng)]);
      }
      positions.resize(cap);
      std::sort(positions.begin(), positions.end());
    }
    for (std::size_t t : positions) {
      const std::size_t begin = t > max_length ? t - max_length : 0;
      TrainingInstance inst;
      inst.user = seq.user;
      inst.history.user = seq.user;
      inst.history.items.assign(seq.items.begin() + begin,
                                seq.items.begin() + t);
      inst.positive = seq.items[t];
      out.push_back(std::move(inst));
    }
  }
  return out;
}

BatchDraws DrawBatch(std::span<const TrainingInstance> batch,
                     const Hyperparams& hyper, const SamplingContext& context,
                     std::uint64_t seed) {
  BatchDraws draws;
  draws.views.reserve(batch.size());
  draws.negatives.reserve(batch.size());
  std::vector<ItemId> fallback;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& inst = batch[i];
    std::mt19937_64 rng(MixSeed(seed, i));
    draws.views.push_back(AugmentSequence(inst.history, hyper.sample_ratio,
                                          hyper.max_length, rng));
    std::span<const ItemId> history;
    if (inst.user < context.user_items.size()) {
      history = context.user_items[inst.user];
    } else {
      fallback = inst.history.items;
      fallback.push_back(inst.positive);
      std::sort(fallback.begin(), fallback.end());
      fallback.erase(std::unique(fallback.begin(), fallback.end()),
                     fallback.end());
      history = fallback;
    }
    draws.negatives.push_back(SampleNegatives(history, context.catalog_size,
                                              hyper.num_negatives, rng));
  }
  return draws;
}

template <typename Real>
Matrix<Real> GradientSet<Real>::DenseItemGradients(
    std::size_t num_items) const {
  Matrix<Real> dense(num_items, category.cols());
  for (std::size_t r = 0; r < item_rows.size(); ++r) {
    std::copy_n(item_grads.row(r).begin(), dense.cols(),
                dense.row(item_rows[r]).begin());
  }
  return dense;
}

template struct GradientSet<float>;
template struct GradientSet<double>;

template <typename Real>
BatchLossReport ComputeLoss(std::span<const TrainingInstance> batch,
                            const Parameters<Real>& params,
                            const Hyperparams& hyper, const BatchDraws& draws) {
  if (batch.empty()) throw ConfigError("empty training batch");
  std::vector<InterestSet<Real>> users;
  std::vector<Matrix<Real>> view1, view2;
  std::vector<ItemId> positives;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    users.push_back(ForwardUser<Real>(batch[i].history.items, params, hyper));
    view1.push_back(
        ForwardInterests<Real>(draws.views[i].first.items, params, hyper));
    view2.push_back(
        ForwardInterests<Real>(draws.views[i].second.items, params, hyper));
    positives.push_back(batch[i].positive);
  }
  const auto candidates = BuildCandidateSet(positives, draws.negatives);
  const double main =
      MainLoss<Real>(users, candidates, params.item_embeddings,
                     static_cast<Real>(hyper.epsilon));
  const double contrastive = ContrastiveMultiInterestLoss<Real>(
      view1, view2, static_cast<Real>(hyper.tau));
  const double orthogonality = OrthogonalityLoss(params.category_matrix);
  auto report = TotalLoss(main, contrastive, orthogonality, hyper.lambda_cl,
                          hyper.lambda_orth);
  report.batch_size = batch.size();
  report.negatives_per_positive = candidates.negatives_per_positive();
  return report;
}

template BatchLossReport ComputeLoss<float>(std::span<const TrainingInstance>,
                                            const Parameters<float>&,
                                            const Hyperparams&,
                                            const BatchDraws&);
template BatchLossReport ComputeLoss<double>(std::span<const TrainingInstance>,
                                             const Parameters<double>&,
                                             const Hyperparams&,
                                             const BatchDraws&);

OptimizerState OptimizerState::For(const ModelParameters& params) {
  const auto dims = params.dims();
  OptimizerState state;
  state.item_m = Matrix<float>(dims.num_items, dims.dim);
  state.item_v = Matrix<float>(dims.num_items, dims.dim);
  state.category_m = Matrix<float>(dims.num_interests, dims.dim);
  state.category_v = Matrix<float>(dims.num_interests, dims.dim);
  state.gru_m = GruParameters<float>::Zeros(dims.dim);
  state.gru_v = GruParameters<float>::Zeros(dims.dim);
  return state;
}

namespace {

struct AdamUpdate {
  double lr, beta1, beta2, epsilon, correction1, correction2;

  // Returns true if the parameter moved.
  bool operator()(float& param, float grad, float& m, float& v) const {
    const double g = grad;
    const double m_new = beta1 * m + (1.0 - beta1) * g;
    const double v_new = beta2 * v + (1.0 - beta2) * g * g;
    m = static_cast<float>(m_new);
    v = static_cast<float>(v_new);
    const double step =
        lr * (m_new / correction1) / (std::sqrt(v_new / correction2) + epsilon);
    const float before = param;
    param = static_cast<float>(param - step);
    return param != before;
  }
};

}  // namespace

void AdamStep(ModelParameters& params, const GradientSet<float>& grads,
              OptimizerState& state, const Hyperparams& hyper) {
  const auto dims = params.dims();
  if (grads.category.rows() != dims.num_interests ||
      grads.category.cols() != dims.dim ||
      grads.item_grads.rows() != grads.item_rows.size() ||
      (!grads.item_rows.empty() && grads.item_grads.cols() != dims.dim) ||
      state.item_m.rows() != dims.num_items) {
    throw ConfigError("gradient or optimizer state shape mismatch");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const AdamUpdate update{hyper.learning_rate,
                          hyper.beta1,
                          hyper.beta2,
                          hyper.adam_epsilon,
                          1.0 - std::pow(hyper.beta1, t),
                          1.0 - std::pow(hyper.beta2, t)};

  for (std::size_t r = 0; r < grads.item_rows.size(); ++r) {
    const ItemId item = grads.item_rows[r];
    auto row = params.item_embeddings.row(item);
    const auto g = grads.item_grads.row(r);
    auto m = state.item_m.row(item);
    auto v = state.item_v.row(item);
    bool moved = false;
    for (std::size_t c = 0; c < dims.dim; ++c) {
      moved = update(row[c], g[c], m[c], v[c]) || moved;
    }
    if (moved) NormalizeRow(row);
  }
  for (std::size_t l = 0; l < dims.num_interests; ++l) {
    auto row = params.category_matrix.row(l);
    const auto g = grads.category.row(l);
    auto m = state.category_m.row(l);
    auto v = state.category_v.row(l);
    bool moved = false;
    for (std::size_t c = 0; c < dims.dim; ++c) {
      moved = update(row[c], g[c], m[c], v[c]) || moved;
    }
    if (moved) NormalizeRow(row);
  }
  auto p = params.gru.Arrays();
  const auto g = grads.gru.Arrays();
  auto m = state.gru_m.Arrays();
  auto v = state.gru_v.Arrays();
  for (std::size_t a = 0; a < p.size(); ++a) {
    if (g[a].size() != p[a].size()) {
      throw ConfigError("GRU gradient shape mismatch");
    }
    for (std::size_t i = 0; i < p[a].size(); ++i) {
      update(p[a][i], g[a][i], m[a][i], v[a][i]);
    }
  }
}

void TrainConfig::Validate() const {
  hyper.Validate();
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (eval_k < 1) throw ConfigError("eval_k must be >= 1");
}

FitResult Fit(const SplitLog& split, const TrainConfig& config,
              const FitCallbacks& callbacks) {
  config.Validate();
  const auto& hyper = config.hyper;
  const auto& train = split.train;
  if (train.records.empty()) throw ConfigError("train split is empty");

  const auto start = std::chrono::steady_clock::now();
  const auto sequences =
      BuildSequences(train, std::numeric_limits<std::size_t>::max());
  const auto user_items = UserItemSets(train);
  const SamplingContext context{user_items, train.num_items};
  const std::size_t eval_ks[] = {config.eval_k};

  auto validate = [&](const ModelParameters& p) {
    return EvaluateSplit(train, split.validation, p, hyper, eval_ks,
                         config.rank_mode, config.threads)
        .RecallAt(config.eval_k);
  };

  auto params = InitParameters<float>(
      {train.num_items, hyper.dim, hyper.num_interests},
      MixSeed(config.seed, 0));
  auto state = OptimizerState::For(params);

  FitResult result;
  result.initial_validation_recall = validate(params);
  result.best = params;
  result.best_validation_recall = -1.0;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::mt19937_64 rng(MixSeed(config.seed, epoch, 1));
    auto instances = BuildInstances(sequences, hyper.max_length,
                                    config.instances_per_user, rng);
    if (instances.empty()) {
      throw ConfigError("train split has no user with two interactions");
    }
    std::shuffle(instances.begin(), instances.end(), rng);

    double sums[4] = {0, 0, 0, 0};
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < instances.size();
         begin += hyper.batch_size, ++batches) {
      const std::span<const TrainingInstance> batch(
          instances.data() + begin,
          std::min(hyper.batch_size, instances.size() - begin));
      const auto draws = DrawBatch(batch, hyper, context,
                                   MixSeed(config.seed, epoch, batches + 2));
      std::pair<BatchLossReport, GradientSet<float>> step;
      try {
        step = ComputeGradients<float>(batch, params, hyper, draws,
                                       config.threads);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches) + ": " + e.what());
      }
      AdamStep(params, step.second, state, hyper);
      sums[0] += step.first.main;
      sums[1] += step.first.contrastive;
      sums[2] += step.first.orthogonality;
      sums[3] += step.first.total;
      if (callbacks.on_step) callbacks.on_step(params, epoch, batches);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.main = sums[0] / static_cast<double>(batches);
    stats.contrastive = sums[1] / static_cast<double>(batches);
    stats.orthogonality = sums[2] / static_cast<double>(batches);
    stats.total = sums[3] / static_cast<double>(batches);
    stats.validation_recall = validate(params);
    stats.elapsed_seconds = std::chrono::duration<double>(
                                std::chrono::steady_clock::now() - start)
                                .count();
    result.epochs.push_back(stats);
    if (callbacks.on_epoch) callbacks.on_epoch(stats);

    if (stats.validation_recall > result.best_validation_recall) {
      result.best_validation_recall = stats.validation_recall;
      result.best_epoch = epoch;
      result.best = params;
      since_best = 0;
      if (!config.checkpoint_path.empty()) {
        SaveCheckpoint(config.checkpoint_path, params);
      }
    } else if (++since_best >= hyper.patience) {
      break;
    }
  }
  return result;
}

GradientCheckReport GradientCheck(const Parameters<double>& params,
                                  std::span<const TrainingInstance> batch,
                                  const Hyperparams& hyper,
                                  const SamplingContext& context,
                                  const GradientCheckOptions& options) {
  const auto draws = DrawBatch(batch, hyper, context, options.seed);
  const auto analytic =
      ComputeGradients<double>(batch, params, hyper, draws).second;

  auto probe = params;
  Matrix<double> dense_items =
      analytic.DenseItemGradients(params.item_embeddings.rows());
  std::vector<std::span<double>> values = {probe.item_embeddings.flat(),
                                           probe.category_matrix.flat()};
  std::vector<std::span<const double>> expected = {
      std::as_const(dense_items).flat(), analytic.category.flat()};
  for (auto a : probe.gru.Arrays()) values.push_back(a);
  for (auto a : analytic.gru.Arrays()) expected.push_back(a);

  GradientCheckReport report;
  report.names = {"item_embeddings", "category_matrix", "W_z", "U_z", "b_z",
                  "W_r",             "U_r",             "b_r", "W_h", "U_h",
                  "b_h"};
  std::uint64_t evaluations = 0;
  auto loss = [&]() {
    if (options.freeze_draws) {
      return ComputeLoss<double>(batch, probe, hyper, draws).total;
    }
    const auto fresh =
        DrawBatch(batch, hyper, context, MixSeed(options.seed, ++evaluations));
    return ComputeLoss<double>(batch, probe, hyper, fresh).total;
  };

  for (std::size_t a = 0; a < values.size(); ++a) {
    double worst = 0.0;
    for (std::size_t i = 0; i < values[a].size(); ++i) {
      const double saved = values[a][i];
      values[a][i] = saved + options.step;
      const double plus = loss();
      values[a][i] = saved - options.step;
      const double minus = loss();
      values[a][i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double exact = expected[a][i];
      const double denom =
          std::max({std::abs(numeric), std::abs(exact), options.floor});
      worst = std::max(worst, std::abs(numeric - exact) / denom);
      ++report.coordinates;
    }
    report.max_relative_error.push_back(worst);
    report.worst = std::max(report.worst, worst);
  }
  report.passed = report.worst < options.tolerance;
  return report;
}

}  // namespace cmi
