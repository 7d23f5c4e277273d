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

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "cmi/data.h"
#include "cmi/error.h"
#include "cmi/training.h"
#include "doctest.h"
#include "toy.h"

namespace cmi {
namespace {

using testing::MakeToyProblem;

TEST_CASE("instances are next-item pairs") {
  const std::vector<UserSequence> seqs = {{0, {5, 6, 7}}, {1, {9}}, {2, {1, 2}}};
  std::mt19937_64 rng(1);
  const auto inst = BuildInstances(seqs, 100, 0, rng);
  REQUIRE(inst.size() == 3);
  CHECK(inst[0] == TrainingInstance{0, {0, {5}}, 6});
  CHECK(inst[1] == TrainingInstance{0, {0, {5, 6}}, 7});
  CHECK(inst[2] == TrainingInstance{2, {2, {1}}, 2});
}

TEST_CASE("instance histories are truncated to f") {
  const std::vector<UserSequence> seqs = {{0, {1, 2, 3, 4, 5}}};
  std::mt19937_64 rng(1);
  const auto inst = BuildInstances(seqs, 2, 0, rng);
  REQUIRE(inst.size() == 4);
  CHECK(inst[3].history.items == std::vector<ItemId>{3, 4});
  CHECK(inst[3].positive == 5);
}

TEST_CASE("instance cap keeps distinct positions in order") {
  UserSequence seq{0, {}};
  for (ItemId i = 0; i < 50; ++i) seq.items.push_back(i);
  const std::vector<UserSequence> seqs = {seq};
  std::mt19937_64 rng(2);
  const auto inst = BuildInstances(seqs, 100, 5, rng);
  REQUIRE(inst.size() == 5);
  for (std::size_t i = 1; i < inst.size(); ++i) CHECK(inst[i - 1].positive < inst[i].positive);
  for (const auto& x : inst) CHECK(x.history.items.size() == x.positive);
  std::mt19937_64 again(2);
  CHECK(BuildInstances(seqs, 100, 5, again) == inst);
}

TEST_CASE("batch draws are deterministic per seed") {
  const auto toy = MakeToyProblem(4, 2, 4, 6, 3);
  const auto a = DrawBatch(toy.batch, toy.hyper, toy.context(), 11);
  const auto b = DrawBatch(toy.batch, toy.hyper, toy.context(), 11);
  const auto c = DrawBatch(toy.batch, toy.hyper, toy.context(), 12);
  CHECK(a.views == b.views);
  CHECK(a.negatives == b.negatives);
  CHECK_FALSE((a.views == c.views && a.negatives == c.negatives));
  for (std::size_t i = 0; i < toy.batch.size(); ++i) {
    for (ItemId x : a.negatives[i]) {
      CHECK_FALSE(std::binary_search(toy.user_items[i].begin(), toy.user_items[i].end(), x));
    }
  }
}

TEST_CASE("gradient loss equals the forward loss") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto toy = MakeToyProblem(4, 2, 3, 6, seed);
    const auto draws = DrawBatch(toy.batch, toy.hyper, toy.context(), seed);
    const auto forward = ComputeLoss<double>(toy.batch, toy.params, toy.hyper, draws);
    const auto [report, grads] =
        ComputeGradients<double>(toy.batch, toy.params, toy.hyper, draws);
    CHECK(report.total == doctest::Approx(forward.total).epsilon(1e-12));
    CHECK(report.main == doctest::Approx(forward.main).epsilon(1e-12));
    CHECK(report.contrastive == doctest::Approx(forward.contrastive).epsilon(1e-12));
    CHECK(report.orthogonality == doctest::Approx(forward.orthogonality).epsilon(1e-12));
    CHECK(report.batch_size == 3);
    CHECK(report.negatives_per_positive == 5);
    CHECK(std::is_sorted(grads.item_rows.begin(), grads.item_rows.end()));
  }
}

TEST_CASE("gradients agree across thread counts") {
  const auto toy = MakeToyProblem(8, 4, 4, 6, 9);
  const auto draws = DrawBatch(toy.batch, toy.hyper, toy.context(), 1);
  const auto one = ComputeGradients<double>(toy.batch, toy.params, toy.hyper, draws, 1).second;
  const auto three = ComputeGradients<double>(toy.batch, toy.params, toy.hyper, draws, 3).second;
  CHECK(one.item_rows == three.item_rows);
  for (std::size_t i = 0; i < one.item_grads.size(); ++i) {
    CHECK(three.item_grads.flat()[i] == doctest::Approx(one.item_grads.flat()[i]).epsilon(1e-12));
  }
  const auto again = ComputeGradients<double>(toy.batch, toy.params, toy.hyper, draws, 3).second;
  CHECK(again.item_grads == three.item_grads);
  CHECK(again.category == three.category);
}

TEST_CASE("plain sampled softmax gradient matches finite differences") {
  auto toy = MakeToyProblem(4, 1, 1, 5, 21);
  toy.hyper.lambda_cl = 0.0;
  toy.hyper.lambda_orth = 0.0;
  const auto report = GradientCheck(toy.params, toy.batch, toy.hyper, toy.context());
  CHECK(report.passed);
  CHECK(report.worst < 1e-4);
}

TEST_CASE("full objective on a d=4, m=2, two-user batch") {
  const auto toy = MakeToyProblem(4, 2, 2, 6, 22);
  const auto report = GradientCheck(toy.params, toy.batch, toy.hyper, toy.context());
  REQUIRE(report.names.size() == 11);
  REQUIRE(report.max_relative_error.size() == 11);
  for (std::size_t a = 0; a < 11; ++a) {
    INFO(report.names[a]);
    CHECK(report.max_relative_error[a] < 1e-4);
  }
  CHECK(report.passed);
}

TEST_CASE("randomized gradient checks") {
  const std::size_t dims[] = {2, 4, 8};
  const std::size_t interests[] = {1, 2, 4};
  const std::size_t batches[] = {1, 2, 4};
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> pick(0, 2);
  std::uniform_int_distribution<std::size_t> history(1, 6);
  for (int trial = 0; trial < 24; ++trial) {
    const std::size_t d = dims[pick(rng)];
    const std::size_t m = interests[pick(rng)];
    const std::size_t b = batches[pick(rng)];
    const auto toy = MakeToyProblem(d, m, b, history(rng), 1000 + trial);
    GradientCheckOptions options;
    options.seed = static_cast<std::uint64_t>(trial);
    const auto report = GradientCheck(toy.params, toy.batch, toy.hyper, toy.context(), options);
    INFO("d=" << d << " m=" << m << " B=" << b << " worst=" << report.worst);
    CHECK(report.passed);
  }
}

TEST_CASE("gradient check fails when draws are not frozen") {
  const auto toy = MakeToyProblem(4, 2, 4, 6, 23);
  GradientCheckOptions options;
  options.freeze_draws = false;
  const auto report = GradientCheck(toy.params, toy.batch, toy.hyper, toy.context(), options);
  CHECK_FALSE(report.passed);
}

TEST_CASE("a large step inflates the reported error") {
  const auto toy = MakeToyProblem(4, 2, 2, 6, 24);
  const auto fine = GradientCheck(toy.params, toy.batch, toy.hyper, toy.context());
  GradientCheckOptions coarse_options;
  coarse_options.step = 0.1;
  const auto coarse = GradientCheck(toy.params, toy.batch, toy.hyper, toy.context(), coarse_options);
  CHECK(coarse.worst > 10 * fine.worst);
}

TEST_CASE("orthogonal categories get no orthogonality gradient") {
  auto toy = MakeToyProblem(4, 3, 2, 4, 25);
  toy.hyper.lambda_orth = 1.0;
  auto only_orth = toy.hyper;
  only_orth.lambda_cl = 0.0;
  toy.params.category_matrix.Fill(0.0);
  for (std::size_t l = 0; l < 3; ++l) toy.params.category_matrix(l, l) = 1.0;
  const auto draws = DrawBatch(toy.batch, toy.hyper, toy.context(), 1);
  const auto with = ComputeGradients<double>(toy.batch, toy.params, only_orth, draws).second;
  auto without_hyper = only_orth;
  without_hyper.lambda_orth = 0.0;
  const auto without = ComputeGradients<double>(toy.batch, toy.params, without_hyper, draws).second;
  for (std::size_t i = 0; i < with.category.size(); ++i) {
    CHECK(with.category.flat()[i] == doctest::Approx(without.category.flat()[i]).epsilon(1e-15));
  }
}

ModelParameters SmallModel() {
  return InitParameters<float>({12, 4, 2}, 5);
}

GradientSet<float> ZeroGradients(const ModelParameters& p) {
  GradientSet<float> g;
  g.category = Matrix<float>(p.category_matrix.rows(), p.category_matrix.cols());
  g.gru = GruParameters<float>::Zeros(p.item_embeddings.cols());
  g.item_grads = Matrix<float>(0, p.item_embeddings.cols());
  return g;
}

TEST_CASE("adam matches hand arithmetic") {
  auto p = SmallModel();
  p.gru.b_z[0] = 0.0f;
  auto state = OptimizerState::For(p);
  auto g = ZeroGradients(p);
  g.gru.b_z[0] = 1.0f;
  Hyperparams hyper;
  hyper.learning_rate = 0.1;
  AdamStep(p, g, state, hyper);
  CHECK(p.gru.b_z[0] == static_cast<float>(-0.09999999900000002));
  AdamStep(p, g, state, hyper);
  CHECK(p.gru.b_z[0] == doctest::Approx(-0.09999999900000002 - 0.099999998999999312).epsilon(1e-7));
  CHECK(state.step == 2);
}

TEST_CASE("zero gradients leave parameters bit-identical") {
  auto p = SmallModel();
  const auto before = p;
  auto state = OptimizerState::For(p);
  auto g = ZeroGradients(p);
  // A touched row with zero gradient must not move either.
  g.item_rows = {3};
  g.item_grads = Matrix<float>(1, 4);
  for (int step = 0; step < 5; ++step) AdamStep(p, g, state, Hyperparams{});
  CHECK(p == before);
}

TEST_CASE("untouched item rows keep their values and moments") {
  auto p = SmallModel();
  const auto before = p;
  auto state = OptimizerState::For(p);
  auto g = ZeroGradients(p);
  g.item_rows = {2, 7};
  g.item_grads = Matrix<float>(2, 4, 0.5f);
  Hyperparams hyper;
  hyper.learning_rate = 0.05;
  for (int step = 0; step < 3; ++step) AdamStep(p, g, state, hyper);
  for (std::size_t r = 0; r < 12; ++r) {
    const bool touched = r == 2 || r == 7;
    CHECK((p.item_embeddings.row(r)[0] != before.item_embeddings.row(r)[0]) == touched);
    if (!touched) {
      for (std::size_t c = 0; c < 4; ++c) {
        CHECK(p.item_embeddings(r, c) == before.item_embeddings(r, c));
        CHECK(state.item_m(r, c) == 0.0f);
        CHECK(state.item_v(r, c) == 0.0f);
      }
    }
  }
}

TEST_CASE("rows stay on the unit sphere through training steps") {
  const auto toy = MakeToyProblem(8, 4, 4, 6, 26);
  auto p = toy.params.Cast<float>();
  NormalizeRows(p.item_embeddings);
  NormalizeRows(p.category_matrix);
  auto state = OptimizerState::For(p);
  Hyperparams hyper = toy.hyper;
  hyper.learning_rate = 0.05;
  for (int step = 0; step < 30; ++step) {
    const auto draws = DrawBatch(toy.batch, hyper, toy.context(), step);
    const auto grads = ComputeGradients<float>(toy.batch, p, hyper, draws).second;
    AdamStep(p, grads, state, hyper);
    for (const auto* m : {&p.item_embeddings, &p.category_matrix}) {
      for (std::size_t r = 0; r < m->rows(); ++r) {
        double sq = 0;
        for (float x : m->row(r)) sq += double(x) * x;
        CHECK(std::abs(std::sqrt(sq) - 1.0) < 1e-6);
      }
    }
  }
}

TEST_CASE("adam rejects mismatched shapes") {
  auto p = SmallModel();
  auto state = OptimizerState::For(p);
  auto g = ZeroGradients(p);
  g.category = Matrix<float>(3, 4);
  CHECK_THROWS_AS(AdamStep(p, g, state, Hyperparams{}), ConfigError);
}

SplitLog TinySplit() {
  SyntheticSpec spec;
  spec.num_users = 40;
  spec.num_items = 200;
  spec.interactions_per_user = 30;
  spec.seed = 3;
  return ChronologicalSplit(GenerateSynthetic(spec).log, spec.span_days, spec.day_length);
}

TrainConfig TinyConfig() {
  TrainConfig config;
  config.hyper.dim = 8;
  config.hyper.num_interests = 2;
  config.hyper.batch_size = 16;
  config.hyper.max_length = 10;
  config.hyper.learning_rate = 0.01;
  config.max_epochs = 3;
  config.instances_per_user = 4;
  config.seed = 17;
  return config;
}

TEST_CASE("fit is reproducible for a seed") {
  const auto split = TinySplit();
  std::vector<EpochStats> seen;
  FitCallbacks callbacks;
  callbacks.on_epoch = [&](const EpochStats& s) { seen.push_back(s); };
  const auto a = Fit(split, TinyConfig(), callbacks);
  const auto b = Fit(split, TinyConfig());
  CHECK(a.best == b.best);
  CHECK(a.best_epoch == b.best_epoch);
  REQUIRE(a.epochs.size() == b.epochs.size());
  CHECK(seen.size() == a.epochs.size());
  for (std::size_t e = 0; e < a.epochs.size(); ++e) {
    CHECK(a.epochs[e].total == b.epochs[e].total);
    CHECK(a.epochs[e].validation_recall == b.epochs[e].validation_recall);
  }
  auto other = TinyConfig();
  other.seed = 18;
  CHECK_FALSE(Fit(split, other).best == a.best);
}

TEST_CASE("fit stops early and reports every step") {
  const auto split = TinySplit();
  auto config = TinyConfig();
  config.max_epochs = 30;
  config.hyper.patience = 1;
  std::size_t steps = 0;
  FitCallbacks callbacks;
  callbacks.on_step = [&](const ModelParameters&, std::size_t, std::size_t) { ++steps; };
  const auto result = Fit(split, config, callbacks);
  CHECK(result.epochs.size() < 30);
  CHECK(result.epochs.size() == result.best_epoch + 1);
  CHECK(steps > 0);
}

TEST_CASE("fit validates its configuration") {
  const auto split = TinySplit();
  auto config = TinyConfig();
  config.max_epochs = 0;
  CHECK_THROWS_AS(Fit(split, config), ConfigError);
  config = TinyConfig();
  config.hyper.tau = 0;
  CHECK_THROWS_AS(Fit(split, config), ConfigError);
  SplitLog empty;
  CHECK_THROWS_AS(Fit(empty, TinyConfig()), ConfigError);
}

TEST_CASE("seed mixing separates streams") {
  CHECK(MixSeed(1, 2) == MixSeed(1, 2));
  CHECK(MixSeed(1, 2) != MixSeed(2, 1));
  CHECK(MixSeed(1, 2, 3) != MixSeed(1, 2, 4));
}

}  // namespace
}  // namespace cmi
