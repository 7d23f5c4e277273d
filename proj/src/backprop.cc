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

// Reverse-mode gradients of main + lambda_cl * contrastive +
// lambda_orth * orthogonality. The forward pass is recomputed per sequence
// during the backward sweep instead of caching every GRU state of the batch.

#include <algorithm>
#include <cmath>
#include <string>

#include "cmi/error.h"
#include "cmi/losses.h"
#include "cmi/parallel.h"
#include "cmi/training.h"

namespace cmi {
namespace {

template <typename Real>
Real Sigmoid(Real x) {
  return Real(1) / (Real(1) + std::exp(-x));
}

// Adjoint of CategoryAssignment + EncodeInterests for one sequence.
// Accumulates into d_seq (|s| x d) and d_categories (m x d).
template <typename Real>
void BackwardInterests(const Matrix<Real>& seq, const Matrix<Real>& categories,
                       Real epsilon, const Matrix<Real>& d_interests,
                       Matrix<Real>& d_seq, Matrix<Real>& d_categories) {
  const std::size_t len = seq.rows();
  const std::size_t m = categories.rows();
  const std::size_t d = seq.cols();

  std::vector<Real> g_norm(m);
  Matrix<Real> g_hat(m, d);
  for (std::size_t l = 0; l < m; ++l) {
    g_norm[l] = Norm(categories.row(l));
    for (std::size_t c = 0; c < d; ++c) g_hat(l, c) = categories(l, c) / g_norm[l];
  }

  Matrix<Real> d_g_hat(m, d);
  std::vector<Real> x_hat(d), d_x_hat(d), logits(m), p(m), dp(m);
  for (std::size_t k = 0; k < len; ++k) {
    const auto x = seq.row(k);
    const Real x_norm = Norm(x);
    for (std::size_t c = 0; c < d; ++c) x_hat[c] = x[c] / x_norm;

    Real max_logit = -INFINITY;
    for (std::size_t l = 0; l < m; ++l) {
      logits[l] = Dot(g_hat.row(l), std::span<const Real>(x_hat)) / epsilon;
      max_logit = std::max(max_logit, logits[l]);
    }
    Real sum = 0;
    for (std::size_t l = 0; l < m; ++l) {
      p[l] = std::exp(logits[l] - max_logit);
      sum += p[l];
    }
    for (auto& v : p) v /= sum;

    // u_l = sum_k p_kl x_k
    Real weighted = 0;
    for (std::size_t l = 0; l < m; ++l) {
      Axpy(p[l], d_interests.row(l), d_seq.row(k));
      dp[l] = Dot(d_interests.row(l), x);
      weighted += p[l] * dp[l];
    }

    // softmax, then cosine through both normalizations.
    std::fill(d_x_hat.begin(), d_x_hat.end(), Real(0));
    for (std::size_t l = 0; l < m; ++l) {
      const Real d_w = p[l] * (dp[l] - weighted) / epsilon;
      Axpy(d_w, std::span<const Real>(x_hat), d_g_hat.row(l));
      Axpy(d_w, g_hat.row(l), std::span<Real>(d_x_hat));
    }
    const Real radial = Dot(std::span<const Real>(x_hat),
                            std::span<const Real>(d_x_hat));
    auto dx = d_seq.row(k);
    for (std::size_t c = 0; c < d; ++c) {
      dx[c] += (d_x_hat[c] - x_hat[c] * radial) / x_norm;
    }
  }
  for (std::size_t l = 0; l < m; ++l) {
    const Real radial = Dot(g_hat.row(l), d_g_hat.row(l));
    auto dg = d_categories.row(l);
    for (std::size_t c = 0; c < d; ++c) {
      dg[c] += (d_g_hat(l, c) - g_hat(l, c) * radial) / g_norm[l];
    }
  }
}

// Backpropagation through time for the GRU general interest.
template <typename Real>
void BackwardGeneral(const Matrix<Real>& seq, const GruParameters<Real>& gru,
                     std::span<const Real> d_out, Matrix<Real>& d_seq,
                     GruParameters<Real>& d_gru) {
  const std::size_t len = seq.rows();
  const std::size_t d = seq.cols();
  Matrix<Real> h(len + 1, d), z(len, d), r(len, d), cand(len, d);
  std::vector<Real> tmp(d), rh(d);
  for (std::size_t t = 0; t < len; ++t) {
    const auto x = seq.row(t);
    const auto h_prev = std::as_const(h).row(t);
    MatVec(gru.w_z, x, z.row(t));
    MatVec(gru.u_z, h_prev, std::span<Real>(tmp));
    for (std::size_t i = 0; i < d; ++i) z(t, i) = Sigmoid(z(t, i) + tmp[i] + gru.b_z[i]);
    MatVec(gru.w_r, x, r.row(t));
    MatVec(gru.u_r, h_prev, std::span<Real>(tmp));
    for (std::size_t i = 0; i < d; ++i) {
      r(t, i) = Sigmoid(r(t, i) + tmp[i] + gru.b_r[i]);
      rh[i] = r(t, i) * h_prev[i];
    }
    MatVec(gru.w_h, x, cand.row(t));
    MatVec(gru.u_h, std::span<const Real>(rh), std::span<Real>(tmp));
    for (std::size_t i = 0; i < d; ++i) {
      cand(t, i) = std::tanh(cand(t, i) + tmp[i] + gru.b_h[i]);
      h(t + 1, i) = (Real(1) - z(t, i)) * h_prev[i] + z(t, i) * cand(t, i);
    }
  }

  std::vector<Real> dh(d_out.begin(), d_out.end()), dh_prev(d), da_z(d),
      da_r(d), da_h(d), d_rh(d);
  for (std::size_t t = len; t-- > 0;) {
    const auto x = seq.row(t);
    const auto h_prev = std::as_const(h).row(t);
    for (std::size_t i = 0; i < d; ++i) {
      const Real zi = z(t, i), ci = cand(t, i);
      da_z[i] = dh[i] * (ci - h_prev[i]) * zi * (Real(1) - zi);
      da_h[i] = dh[i] * zi * (Real(1) - ci * ci);
      dh_prev[i] = dh[i] * (Real(1) - zi);
      rh[i] = r(t, i) * h_prev[i];
    }
    auto dx = d_seq.row(t);
    const std::span<const Real> cda_z(da_z), cda_r(da_r), cda_h(da_h);

    OuterAdd(cda_h, x, d_gru.w_h);
    OuterAdd(cda_h, std::span<const Real>(rh), d_gru.u_h);
    Axpy(Real(1), cda_h, std::span<Real>(d_gru.b_h));
    MatTVecAdd(gru.w_h, cda_h, dx);
    std::fill(d_rh.begin(), d_rh.end(), Real(0));
    MatTVecAdd(gru.u_h, cda_h, std::span<Real>(d_rh));
    for (std::size_t i = 0; i < d; ++i) {
      const Real ri = r(t, i);
      dh_prev[i] += d_rh[i] * ri;
      da_r[i] = d_rh[i] * h_prev[i] * ri * (Real(1) - ri);
    }

    OuterAdd(cda_r, x, d_gru.w_r);
    OuterAdd(cda_r, h_prev, d_gru.u_r);
    Axpy(Real(1), cda_r, std::span<Real>(d_gru.b_r));
    MatTVecAdd(gru.w_r, cda_r, dx);
    MatTVecAdd(gru.u_r, cda_r, std::span<Real>(dh_prev));

    OuterAdd(cda_z, x, d_gru.w_z);
    OuterAdd(cda_z, h_prev, d_gru.u_z);
    Axpy(Real(1), cda_z, std::span<Real>(d_gru.b_z));
    MatTVecAdd(gru.w_z, cda_z, dx);
    MatTVecAdd(gru.u_z, cda_z, std::span<Real>(dh_prev));

    dh.swap(dh_prev);
  }
}

template <typename Real>
void AddInto(GruParameters<Real>& dst, const GruParameters<Real>& src) {
  auto d = dst.Arrays();
  const auto s = src.Arrays();
  for (std::size_t a = 0; a < d.size(); ++a) Axpy(Real(1), s[a], d[a]);
}

template <typename Real>
bool AllFinite(std::span<const Real> values) {
  return std::all_of(values.begin(), values.end(),
                     [](Real v) { return std::isfinite(v); });
}

}  // namespace

template <typename Real>
std::pair<BatchLossReport, GradientSet<Real>> ComputeGradients(
    std::span<const TrainingInstance> batch, const Parameters<Real>& params,
    const Hyperparams& hyper, const BatchDraws& draws, std::size_t threads) {
  const std::size_t batch_size = batch.size();
  if (batch_size == 0) throw ConfigError("empty training batch");
  if (draws.views.size() != batch_size ||
      draws.negatives.size() != batch_size) {
    throw ConfigError("batch draws do not match the batch");
  }
  const std::size_t m = params.category_matrix.rows();
  const std::size_t d = params.item_embeddings.cols();
  const Real epsilon = static_cast<Real>(hyper.epsilon);
  const Real tau = static_cast<Real>(hyper.tau);
  const Real lambda_cl = static_cast<Real>(hyper.lambda_cl);
  const Real lambda_orth = static_cast<Real>(hyper.lambda_orth);
  const bool general = hyper.use_general_interest;
  const std::size_t workers = WorkerCount(batch_size, threads);

  GradientSet<Real> grads;
  for (std::size_t i = 0; i < batch_size; ++i) {
    const auto& items = batch[i].history.items;
    grads.item_rows.insert(grads.item_rows.end(), items.begin(), items.end());
    grads.item_rows.push_back(batch[i].positive);
    grads.item_rows.insert(grads.item_rows.end(), draws.negatives[i].begin(),
                           draws.negatives[i].end());
  }
  std::sort(grads.item_rows.begin(), grads.item_rows.end());
  grads.item_rows.erase(
      std::unique(grads.item_rows.begin(), grads.item_rows.end()),
      grads.item_rows.end());
  if (!grads.item_rows.empty() &&
      grads.item_rows.back() >= params.item_embeddings.rows()) {
    throw ConfigError("batch references an item outside the catalog");
  }
  auto local_row = [&](ItemId item) {
    return static_cast<std::size_t>(
        std::lower_bound(grads.item_rows.begin(), grads.item_rows.end(),
                         item) -
        grads.item_rows.begin());
  };

  // Forward.
  std::vector<InterestSet<Real>> users(batch_size);
  std::vector<Matrix<Real>> views[2] = {std::vector<Matrix<Real>>(batch_size),
                                        std::vector<Matrix<Real>>(batch_size)};
  ParallelChunks(batch_size, threads,
                 [&](std::size_t begin, std::size_t end, std::size_t) {
                   for (std::size_t i = begin; i < end; ++i) {
                     users[i] = ForwardUser<Real>(batch[i].history.items,
                                                  params, hyper);
                     views[0][i] = ForwardInterests<Real>(
                         draws.views[i].first.items, params, hyper);
                     views[1][i] = ForwardInterests<Real>(
                         draws.views[i].second.items, params, hyper);
                   }
                 });

  // Main loss over the shared candidate set.
  std::vector<ItemId> positives(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) positives[i] = batch[i].positive;
  const auto candidates = BuildCandidateSet(positives, draws.negatives);
  const std::size_t num_candidates = candidates.items.size();
  const auto candidate_emb =
      GatherRows(params.item_embeddings, std::span<const ItemId>(candidates.items));

  std::vector<Matrix<Real>> d_interests(batch_size, Matrix<Real>(m, d));
  std::vector<std::vector<Real>> d_general(batch_size, std::vector<Real>(d));
  std::vector<Matrix<Real>> d_candidates(workers,
                                         Matrix<Real>(num_candidates, d));
  std::vector<double> main_partial(workers, 0.0);
  const Real inv_batch = Real(1) / static_cast<Real>(batch_size);
  ParallelChunks(batch_size, threads, [&](std::size_t begin, std::size_t end,
                                          std::size_t w) {
    std::vector<Real> logits(num_candidates);
    std::vector<std::size_t> arg(num_candidates);
    for (std::size_t i = begin; i < end; ++i) {
      const auto& user = users[i];
      const std::span<const Real> ug(user.general);
      for (std::size_t j = 0; j < num_candidates; ++j) {
        const auto v = candidate_emb.row(j);
        Real best = -INFINITY;
        for (std::size_t l = 0; l < m; ++l) {
          const Real s = Dot(user.interests.row(l), v) / epsilon;
          if (s > best) {
            best = s;
            arg[j] = l;
          }
        }
        logits[j] = best + (general ? Dot(ug, v) : Real(0));
      }
      const Real lse = LogSumExp<Real>(logits);
      main_partial[w] += static_cast<double>(lse - logits[i]);
      for (std::size_t j = 0; j < num_candidates; ++j) {
        const Real coef =
            (std::exp(logits[j] - lse) - (j == i ? Real(1) : Real(0))) *
            inv_batch;
        const auto v = candidate_emb.row(j);
        Axpy(coef / epsilon, v, d_interests[i].row(arg[j]));
        Axpy(coef / epsilon, user.interests.row(arg[j]),
             d_candidates[w].row(j));
        if (general) {
          Axpy(coef, v, std::span<Real>(d_general[i]));
          Axpy(coef, ug, d_candidates[w].row(j));
        }
      }
    }
  });
  double main = 0.0;
  for (double v : main_partial) main += v;
  main /= static_cast<double>(batch_size);

  // Contrastive loss: row r = view * |B| m + i * m + k, unit-normalized.
  const std::size_t per_view = batch_size * m;
  const std::size_t total_rows = 2 * per_view;
  Matrix<Real> z_hat(total_rows, d);
  std::vector<Real> z_norm(total_rows);
  for (int v = 0; v < 2; ++v) {
    for (std::size_t i = 0; i < batch_size; ++i) {
      for (std::size_t k = 0; k < m; ++k) {
        const std::size_t r = v * per_view + i * m + k;
        const auto src = views[v][i].row(k);
        z_norm[r] = Norm(src);
        if (z_norm[r] == Real(0)) {
          throw NumericError("zero-norm interest vector in contrastive loss");
        }
        for (std::size_t c = 0; c < d; ++c) z_hat(r, c) = src[c] / z_norm[r];
      }
    }
  }
  const std::size_t row_workers = WorkerCount(total_rows, threads);
  std::vector<Matrix<Real>> d_z_hat(row_workers, Matrix<Real>(total_rows, d));
  std::vector<double> cl_partial(row_workers, 0.0);
  const Real cl_scale = lambda_cl / static_cast<Real>(per_view) / tau;
  ParallelChunks(total_rows, threads, [&](std::size_t begin, std::size_t end,
                                          std::size_t w) {
    std::vector<Real> logits(total_rows);
    for (std::size_t r = begin; r < end; ++r) {
      const std::size_t partner = (r + per_view) % total_rows;
      for (std::size_t s = 0; s < total_rows; ++s) {
        logits[s] = s == r ? -INFINITY : Dot(z_hat.row(r), z_hat.row(s)) / tau;
      }
      const Real lse = LogSumExp<Real>(logits);
      cl_partial[w] += static_cast<double>(lse - logits[partner]);
      if (lambda_cl == Real(0)) continue;
      for (std::size_t s = 0; s < total_rows; ++s) {
        if (s == r) continue;
        const Real coef =
            (std::exp(logits[s] - lse) - (s == partner ? Real(1) : Real(0))) *
            cl_scale;
        Axpy(coef, z_hat.row(s), d_z_hat[w].row(r));
        Axpy(coef, z_hat.row(r), d_z_hat[w].row(s));
      }
    }
  });
  double contrastive = 0.0;
  for (double v : cl_partial) contrastive += v;
  contrastive /= static_cast<double>(per_view);

  std::vector<Matrix<Real>> d_views[2] = {
      std::vector<Matrix<Real>>(batch_size, Matrix<Real>(m, d)),
      std::vector<Matrix<Real>>(batch_size, Matrix<Real>(m, d))};
  if (lambda_cl != Real(0)) {
    for (std::size_t w = 1; w < row_workers; ++w) {
      Axpy(Real(1), std::as_const(d_z_hat[w]).flat(), d_z_hat[0].flat());
    }
    for (std::size_t r = 0; r < total_rows; ++r) {
      const auto zr = z_hat.row(r);
      const auto dz = std::as_const(d_z_hat[0]).row(r);
      const Real radial = Dot(zr, dz);
      auto dst = d_views[r / per_view][(r % per_view) / m].row(r % m);
      for (std::size_t c = 0; c < d; ++c) {
        dst[c] = (dz[c] - zr[c] * radial) / z_norm[r];
      }
    }
  }

  // Orthogonality.
  const Real orthogonality = OrthogonalityLoss(params.category_matrix);
  grads.category = Matrix<Real>(m, d);
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = 0; b < m; ++b) {
      if (a == b) continue;
      const Real dot =
          Dot(params.category_matrix.row(a), params.category_matrix.row(b));
      Axpy(Real(4) * lambda_orth * dot, params.category_matrix.row(b),
           grads.category.row(a));
    }
  }

  // Backward through the encoders.
  const std::size_t touched = grads.item_rows.size();
  std::vector<Matrix<Real>> d_items(workers, Matrix<Real>(touched, d));
  std::vector<Matrix<Real>> d_categories(workers, Matrix<Real>(m, d));
  std::vector<GruParameters<Real>> d_gru(workers,
                                         GruParameters<Real>::Zeros(d));
  ParallelChunks(batch_size, threads, [&](std::size_t begin, std::size_t end,
                                          std::size_t w) {
    auto backward_sequence = [&](std::span<const ItemId> items,
                                 const Matrix<Real>& d_interest,
                                 const std::vector<Real>* d_gen) {
      const auto seq = GatherRows(params.item_embeddings, items);
      Matrix<Real> d_seq(seq.rows(), d);
      BackwardInterests(seq, params.category_matrix, epsilon, d_interest, d_seq,
                        d_categories[w]);
      if (d_gen != nullptr) {
        BackwardGeneral(seq, params.gru, std::span<const Real>(*d_gen), d_seq,
                        d_gru[w]);
      }
      for (std::size_t k = 0; k < items.size(); ++k) {
        Axpy(Real(1), std::as_const(d_seq).row(k),
             d_items[w].row(local_row(items[k])));
      }
    };
    for (std::size_t i = begin; i < end; ++i) {
      backward_sequence(batch[i].history.items, d_interests[i],
                        general ? &d_general[i] : nullptr);
      if (lambda_cl != Real(0)) {
        backward_sequence(draws.views[i].first.items, d_views[0][i], nullptr);
        backward_sequence(draws.views[i].second.items, d_views[1][i], nullptr);
      }
    }
  });

  grads.item_grads = std::move(d_items[0]);
  grads.gru = std::move(d_gru[0]);
  Axpy(Real(1), std::as_const(d_categories[0]).flat(), grads.category.flat());
  for (std::size_t w = 1; w < workers; ++w) {
    Axpy(Real(1), std::as_const(d_items[w]).flat(), grads.item_grads.flat());
    Axpy(Real(1), std::as_const(d_categories[w]).flat(),
         grads.category.flat());
    AddInto(grads.gru, d_gru[w]);
  }
  for (std::size_t w = 1; w < workers; ++w) {
    Axpy(Real(1), std::as_const(d_candidates[w]).flat(),
         d_candidates[0].flat());
  }
  for (std::size_t j = 0; j < num_candidates; ++j) {
    Axpy(Real(1), std::as_const(d_candidates[0]).row(j),
         grads.item_grads.row(local_row(candidates.items[j])));
  }

  auto report = TotalLoss(main, contrastive, orthogonality, hyper.lambda_cl,
                          hyper.lambda_orth);
  report.batch_size = batch_size;
  report.negatives_per_positive = candidates.negatives_per_positive();

  bool finite = AllFinite(std::as_const(grads.item_grads).flat()) &&
                AllFinite(std::as_const(grads.category).flat());
  for (auto array : std::as_const(grads.gru).Arrays()) {
    finite = finite && AllFinite(array);
  }
  if (!finite) throw NumericError("non-finite gradient");
  return {report, std::move(grads)};
}

template std::pair<BatchLossReport, GradientSet<float>> ComputeGradients<float>(
    std::span<const TrainingInstance>, const Parameters<float>&,
    const Hyperparams&, const BatchDraws&, std::size_t);
template std::pair<BatchLossReport, GradientSet<double>>
ComputeGradients<double>(std::span<const TrainingInstance>,
                         const Parameters<double>&, const Hyperparams&,
                         const BatchDraws&, std::size_t);

}  // namespace cmi
