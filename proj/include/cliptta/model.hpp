#pragma once

#include <string>
#include <vector>

#include "cliptta/numerics.hpp"

namespace cliptta {

/// Fixed unit-norm class vectors standing in for the text embeddings of each class caption.
class ClassPrototypes {
 public:
  /// Rows are validated (C >= 2, unit norm within 1e-10, pairwise distinct).
  ClassPrototypes(Matrix protos, std::vector<std::string> class_names = {});

  std::size_t num_classes() const { return protos_.rows(); }
  std::size_t dim() const { return protos_.cols(); }
  const Matrix& matrix() const { return protos_; }
  std::span<const double> row(std::size_t c) const { return protos_.row(c); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  Matrix protos_;
  std::vector<std::string> names_;
};

/// Surrogate visual encoder: per-sample standardisation, affine (gamma, beta),
/// frozen projection, l2 normalisation. gamma and beta are the only trainable entries.
class EncoderParams {
 public:
  EncoderParams(Matrix w_proj, double tau, double eps_norm = 1e-5);
  EncoderParams(Vector gamma, Vector beta, Matrix w_proj, double tau, double eps_norm = 1e-5);

  std::size_t d_in() const { return w_proj_.rows(); }
  std::size_t d_emb() const { return w_proj_.cols(); }
  const Matrix& w_proj() const { return w_proj_; }
  double tau() const { return tau_; }
  double eps_norm() const { return eps_norm_; }

  Vector gamma;
  Vector beta;

 private:
  Matrix w_proj_;
  double tau_;
  double eps_norm_;
};

/// N x d matrix of unit-norm rows.
struct EmbeddingMatrix {
  Matrix z;
  std::size_t size() const { return z.rows(); }
};

/// N x C row-stochastic class probabilities q(t_c | x_i).
struct ProbMatrix {
  Matrix q;
  std::size_t size() const { return q.rows(); }
  std::size_t num_classes() const { return q.cols(); }
};

/// Batch matching distributions. i2t(i, j) = p(t_j | x_i), rows normalised over captions;
/// t2i(i, j) = p(x_j | t_i), rows normalised over images.
struct BatchMatchMatrix {
  Matrix i2t;
  Matrix t2i;
};

/// Intermediates of a forward pass kept for the backward pass.
struct EncoderTrace {
  Matrix standardized;  // N x d_in
  Matrix projected;     // N x d_emb, before normalisation
  EmbeddingMatrix embeddings;
};

EncoderTrace encode_with_trace(const Matrix& x_raw, const EncoderParams& params);
EmbeddingMatrix encode(const Matrix& x_raw, const EncoderParams& params);

/// Temperature-scaled cosine logits z_i . z_t^c / tau.
Matrix class_logits(const EmbeddingMatrix& z, const ClassPrototypes& protos, double tau);
ProbMatrix class_probabilities(const EmbeddingMatrix& z, const ClassPrototypes& protos, double tau);

BatchMatchMatrix batch_match_probabilities(const EmbeddingMatrix& z, const Matrix& caption_rows,
                                           double tau);

/// MCM score: max_c q_ic per row.
Vector mcm_score(const ProbMatrix& q);

/// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> v);

}  // namespace cliptta
