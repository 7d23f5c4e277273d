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

#ifndef CMI_MODEL_H_
#define CMI_MODEL_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cmi/data.h"
#include "cmi/tensor.h"

namespace cmi {

struct ModelDims {
  std::size_t num_items = 0;
  std::size_t dim = 0;
  std::size_t num_interests = 0;

  bool operator==(const ModelDims&) const = default;
};

// Standard GRU cell, hidden size == input size == d:
//   z = sigmoid(W_z x + U_z h + b_z)
//   r = sigmoid(W_r x + U_r h + b_r)
//   c = tanh(W_h x + U_h (r * h) + b_h)
//   h' = (1 - z) * h + z * c
template <typename Real>
struct GruParameters {
  Matrix<Real> w_z, u_z;
  std::vector<Real> b_z;
  Matrix<Real> w_r, u_r;
  std::vector<Real> b_r;
  Matrix<Real> w_h, u_h;
  std::vector<Real> b_h;

  static GruParameters Zeros(std::size_t dim);

  // The nine arrays in checkpoint order (W_z, U_z, b_z, W_r, U_r, b_r, W_h,
  // U_h, b_h).
  std::vector<std::span<Real>> Arrays();
  std::vector<std::span<const Real>> Arrays() const;

  template <typename To>
  GruParameters<To> Cast() const {
    return {w_z.template Cast<To>(), u_z.template Cast<To>(),
            CastVector<To>(b_z),     w_r.template Cast<To>(),
            u_r.template Cast<To>(), CastVector<To>(b_r),
            w_h.template Cast<To>(), u_h.template Cast<To>(),
            CastVector<To>(b_h)};
  }

  bool operator==(const GruParameters&) const = default;
};

// The complete trainable state. Item and category rows are kept on the unit
// sphere by the optimizer; the GRU is unconstrained.
template <typename Real>
struct Parameters {
  Matrix<Real> item_embeddings;  // |V| x d
  Matrix<Real> category_matrix;  // m x d
  GruParameters<Real> gru;

  ModelDims dims() const {
    return {item_embeddings.rows(), item_embeddings.cols(),
            category_matrix.rows()};
  }

  template <typename To>
  Parameters<To> Cast() const {
    return {item_embeddings.template Cast<To>(),
            category_matrix.template Cast<To>(), gru.template Cast<To>()};
  }

  bool operator==(const Parameters&) const = default;
};

using ModelParameters = Parameters<float>;

struct Hyperparams {
  std::size_t num_interests = 8;  // m
  std::size_t dim = 64;           // d
  double epsilon = 0.1;           // category softmax / interest logit scale
  double tau = 0.1;               // contrastive temperature
  double sample_ratio = 0.5;      // augmentation ratio
  std::size_t max_length = 100;   // f
  double lambda_cl = 0.01;
  double lambda_orth = 10.0;
  std::size_t num_negatives = 1;  // n
  std::size_t top_k = 50;         // K
  std::size_t batch_size = 1024;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t patience = 5;
  // Disabling drops the GRU general interest from scoring (the "-G" variant).
  bool use_general_interest = true;

  // Throws ConfigError.
  void Validate() const;

  bool operator==(const Hyperparams&) const = default;
};

// Entries i.i.d. U(-1/sqrt(d), 1/sqrt(d)); item and category rows are then
// rescaled to unit norm. Deterministic in `seed`.
template <typename Real>
Parameters<Real> InitParameters(const ModelDims& dims, std::uint64_t seed);

template <typename Real>
struct AssignmentMatrix {
  Matrix<Real> scores;  // |s| x m cosine similarities
  Matrix<Real> probs;   // |s| x m, rows sum to one
};

// scores(k, l) = cos(g_l, v_k); probs row k = softmax(scores row k / epsilon).
// Throws NumericError on a zero-norm row.
template <typename Real>
AssignmentMatrix<Real> CategoryAssignment(const Matrix<Real>& seq_embeddings,
                                          const Matrix<Real>& categories,
                                          Real epsilon);

// Interest l = sum_k probs(k, l) * v_k.
template <typename Real>
Matrix<Real> EncodeInterests(const Matrix<Real>& seq_embeddings,
                             const Matrix<Real>& probs);

// Final GRU hidden state over the sequence, from h_0 = 0.
template <typename Real>
std::vector<Real> EncodeGeneral(const Matrix<Real>& seq_embeddings,
                                const GruParameters<Real>& gru);

template <typename Real>
struct InterestSet {
  Matrix<Real> interests;     // m x d
  std::vector<Real> general;  // d
};

// max_l (u_l . v / epsilon) + u_g . v
template <typename Real>
Real ScoreInteraction(const InterestSet<Real>& interests,
                      std::span<const Real> item, Real epsilon);

// Rows of `table` in `ids` order. Throws ConfigError on an out-of-range id.
template <typename Real>
Matrix<Real> GatherRows(const Matrix<Real>& table, std::span<const ItemId> ids);

// Embedding lookup, category assignment, interest aggregation and the GRU
// general interest (zero when hyper.use_general_interest is false).
template <typename Real>
InterestSet<Real> ForwardUser(std::span<const ItemId> items,
                              const Parameters<Real>& params,
                              const Hyperparams& hyper);

// Multi-interest half of ForwardUser only.
template <typename Real>
Matrix<Real> ForwardInterests(std::span<const ItemId> items,
                              const Parameters<Real>& params,
                              const Hyperparams& hyper);

// Rescales every row to unit L2 norm (norm computed in double).
template <typename Real>
void NormalizeRows(Matrix<Real>& m);
template <typename Real>
void NormalizeRow(std::span<Real> row);

}  // namespace cmi

#endif  // CMI_MODEL_H_
