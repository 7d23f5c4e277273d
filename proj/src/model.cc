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

#include "cmi/model.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "cmi/error.h"

namespace cmi {

void Hyperparams::Validate() const {
  if (num_interests < 1) throw ConfigError("m must be >= 1");
  if (dim < 1) throw ConfigError("d must be >= 1");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  if (!(sample_ratio > 0.0 && sample_ratio <= 1.0)) {
    throw ConfigError("sample ratio mu must be in (0, 1]");
  }
  if (max_length < 1) throw ConfigError("max_length f must be >= 1");
  if (!(lambda_cl >= 0.0) || !(lambda_orth >= 0.0)) {
    throw ConfigError("loss weights must be >= 0");
  }
  if (num_negatives < 1) throw ConfigError("num_negatives n must be >= 1");
  if (top_k < 1) throw ConfigError("top_k must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must be in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon must be > 0");
  if (patience < 1) throw ConfigError("patience must be >= 1");
}

template <typename Real>
GruParameters<Real> GruParameters<Real>::Zeros(std::size_t dim) {
  const std::vector<Real> bias(dim, Real(0));
  return {Matrix<Real>(dim, dim), Matrix<Real>(dim, dim), bias,
          Matrix<Real>(dim, dim), Matrix<Real>(dim, dim), bias,
          Matrix<Real>(dim, dim), Matrix<Real>(dim, dim), bias};
}

template <typename Real>
std::vector<std::span<Real>> GruParameters<Real>::Arrays() {
  return {w_z.flat(), u_z.flat(), b_z, w_r.flat(), u_r.flat(),
          b_r,        w_h.flat(), u_h.flat(), b_h};
}

template <typename Real>
std::vector<std::span<const Real>> GruParameters<Real>::Arrays() const {
  return {w_z.flat(), u_z.flat(), b_z, w_r.flat(), u_r.flat(),
          b_r,        w_h.flat(), u_h.flat(), b_h};
}

template <typename Real>
void NormalizeRow(std::span<Real> row) {
  double sq = 0.0;
  for (Real x : row) sq += static_cast<double>(x) * static_cast<double>(x);
  const double norm = std::sqrt(sq);
  if (norm == 0.0) throw NumericError("cannot normalize a zero row");
  for (Real& x : row) x = static_cast<Real>(static_cast<double>(x) / norm);
}

template <typename Real>
void NormalizeRows(Matrix<Real>& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) NormalizeRow(m.row(r));
}

template <typename Real>
Parameters<Real> InitParameters(const ModelDims& dims, std::uint64_t seed) {
  if (dims.dim < 1 || dims.num_interests < 1 || dims.num_items < 1) {
    throw ConfigError("model dimensions must all be >= 1");
  }
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(dims.dim));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  auto fill = [&](std::span<Real> values) {
    for (Real& x : values) x = static_cast<Real>(uniform(rng));
  };

  Parameters<Real> params{Matrix<Real>(dims.num_items, dims.dim),
                          Matrix<Real>(dims.num_interests, dims.dim),
                          GruParameters<Real>::Zeros(dims.dim)};
  fill(params.item_embeddings.flat());
  fill(params.category_matrix.flat());
  for (auto array : params.gru.Arrays()) fill(array);
  NormalizeRows(params.item_embeddings);
  NormalizeRows(params.category_matrix);
  return params;
}

template <typename Real>
AssignmentMatrix<Real> CategoryAssignment(const Matrix<Real>& seq_embeddings,
                                          const Matrix<Real>& categories,
                                          Real epsilon) {
  const std::size_t len = seq_embeddings.rows();
  const std::size_t m = categories.rows();
  std::vector<Real> category_norms(m);
  for (std::size_t l = 0; l < m; ++l) {
    category_norms[l] = Norm(categories.row(l));
    if (category_norms[l] == Real(0)) {
      throw NumericError("zero-norm category embedding " + std::to_string(l));
    }
  }
  AssignmentMatrix<Real> out{Matrix<Real>(len, m), Matrix<Real>(len, m)};
  for (std::size_t k = 0; k < len; ++k) {
    const Real item_norm = Norm(seq_embeddings.row(k));
    if (item_norm == Real(0)) {
      throw NumericError("zero-norm item embedding at position " +
                         std::to_string(k));
    }
    Real max_logit = -INFINITY;
    for (std::size_t l = 0; l < m; ++l) {
      const Real w = Dot(categories.row(l), seq_embeddings.row(k)) /
                     (category_norms[l] * item_norm);
      out.scores(k, l) = w;
      max_logit = std::max(max_logit, w / epsilon);
    }
    Real sum = 0;
    for (std::size_t l = 0; l < m; ++l) {
      const Real e = std::exp(out.scores(k, l) / epsilon - max_logit);
      out.probs(k, l) = e;
      sum += e;
    }
    for (std::size_t l = 0; l < m; ++l) out.probs(k, l) /= sum;
  }
  return out;
}

template <typename Real>
Matrix<Real> EncodeInterests(const Matrix<Real>& seq_embeddings,
                             const Matrix<Real>& probs) {
  if (probs.rows() != seq_embeddings.rows()) {
    throw ConfigError("probability rows must match sequence length");
  }
  Matrix<Real> interests(probs.cols(), seq_embeddings.cols());
  for (std::size_t k = 0; k < seq_embeddings.rows(); ++k) {
    for (std::size_t l = 0; l < probs.cols(); ++l) {
      Axpy(probs(k, l), seq_embeddings.row(k), interests.row(l));
    }
  }
  return interests;
}

namespace {

template <typename Real>
Real Sigmoid(Real x) {
  return Real(1) / (Real(1) + std::exp(-x));
}

}  // namespace

template <typename Real>
std::vector<Real> EncodeGeneral(const Matrix<Real>& seq_embeddings,
                                const GruParameters<Real>& gru) {
  const std::size_t d = gru.b_z.size();
  if (seq_embeddings.cols() != d) {
    throw ConfigError("GRU input width must equal hidden size");
  }
  std::vector<Real> h(d, Real(0)), z(d), r(d), rh(d), cand(d), tmp(d);
  for (std::size_t t = 0; t < seq_embeddings.rows(); ++t) {
    const auto x = seq_embeddings.row(t);
    MatVec(gru.w_z, x, std::span<Real>(z));
    MatVec(gru.u_z, std::span<const Real>(h), std::span<Real>(tmp));
    for (std::size_t i = 0; i < d; ++i) z[i] = Sigmoid(z[i] + tmp[i] + gru.b_z[i]);
    MatVec(gru.w_r, x, std::span<Real>(r));
    MatVec(gru.u_r, std::span<const Real>(h), std::span<Real>(tmp));
    for (std::size_t i = 0; i < d; ++i) {
      r[i] = Sigmoid(r[i] + tmp[i] + gru.b_r[i]);
      rh[i] = r[i] * h[i];
    }
    MatVec(gru.w_h, x, std::span<Real>(cand));
    MatVec(gru.u_h, std::span<const Real>(rh), std::span<Real>(tmp));
    for (std::size_t i = 0; i < d; ++i) {
      cand[i] = std::tanh(cand[i] + tmp[i] + gru.b_h[i]);
      h[i] = (Real(1) - z[i]) * h[i] + z[i] * cand[i];
    }
  }
  return h;
}

template <typename Real>
Real ScoreInteraction(const InterestSet<Real>& interests,
                      std::span<const Real> item, Real epsilon) {
  Real best = -INFINITY;
  for (std::size_t l = 0; l < interests.interests.rows(); ++l) {
    best = std::max(best, Dot(interests.interests.row(l), item) / epsilon);
  }
  if (!interests.general.empty()) {
    best += Dot(std::span<const Real>(interests.general), item);
  }
  return best;
}

template <typename Real>
Matrix<Real> GatherRows(const Matrix<Real>& table,
                        std::span<const ItemId> ids) {
  Matrix<Real> out(ids.size(), table.cols());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] >= table.rows()) {
      throw ConfigError("item id " + std::to_string(ids[k]) +
                        " outside catalog of " + std::to_string(table.rows()));
    }
    std::copy_n(table.row(ids[k]).begin(), table.cols(), out.row(k).begin());
  }
  return out;
}

template <typename Real>
Matrix<Real> ForwardInterests(std::span<const ItemId> items,
                              const Parameters<Real>& params,
                              const Hyperparams& hyper) {
  if (items.empty()) throw ConfigError("cannot encode an empty sequence");
  const auto seq = GatherRows(params.item_embeddings, items);
  const auto assignment = CategoryAssignment(
      seq, params.category_matrix, static_cast<Real>(hyper.epsilon));
  return EncodeInterests(seq, assignment.probs);
}

template <typename Real>
InterestSet<Real> ForwardUser(std::span<const ItemId> items,
                              const Parameters<Real>& params,
                              const Hyperparams& hyper) {
  if (items.empty()) throw ConfigError("cannot encode an empty sequence");
  const auto seq = GatherRows(params.item_embeddings, items);
  const auto assignment = CategoryAssignment(
      seq, params.category_matrix, static_cast<Real>(hyper.epsilon));
  InterestSet<Real> out;
  out.interests = EncodeInterests(seq, assignment.probs);
  out.general = hyper.use_general_interest
                    ? EncodeGeneral(seq, params.gru)
                    : std::vector<Real>(params.item_embeddings.cols(), Real(0));
  return out;
}

#define CMI_INSTANTIATE_MODEL(Real)                                          \
  template struct GruParameters<Real>;                                       \
  template Parameters<Real> InitParameters<Real>(const ModelDims&,           \
                                                 std::uint64_t);             \
  template AssignmentMatrix<Real> CategoryAssignment<Real>(                  \
      const Matrix<Real>&, const Matrix<Real>&, Real);                       \
  template Matrix<Real> EncodeInterests<Real>(const Matrix<Real>&,           \
                                              const Matrix<Real>&);          \
  template std::vector<Real> EncodeGeneral<Real>(const Matrix<Real>&,        \
                                                 const GruParameters<Real>&); \
  template Real ScoreInteraction<Real>(const InterestSet<Real>&,             \
                                       std::span<const Real>, Real);         \
  template Matrix<Real> GatherRows<Real>(const Matrix<Real>&,                \
                                         std::span<const ItemId>);           \
  template InterestSet<Real> ForwardUser<Real>(                              \
      std::span<const ItemId>, const Parameters<Real>&, const Hyperparams&); \
  template Matrix<Real> ForwardInterests<Real>(                              \
      std::span<const ItemId>, const Parameters<Real>&, const Hyperparams&); \
  template void NormalizeRows<Real>(Matrix<Real>&);                          \
  template void NormalizeRow<Real>(std::span<Real>);

CMI_INSTANTIATE_MODEL(float)
CMI_INSTANTIATE_MODEL(double)

#undef CMI_INSTANTIATE_MODEL

}  // namespace cmi
