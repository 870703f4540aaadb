#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cliptta/losses.hpp"
#include "cliptta/model.hpp"
#include "cliptta/pseudo.hpp"

namespace cliptta {

/// Coefficients of the soft-contrastive gradient and the resulting embedding gradient.
struct GradientWorkspace {
  Matrix beta;     // N x N, beta(i, j) = p(t_j|x_i) (1 + log p(t_j|x_i))
  Matrix w_class;  // N x C, w(i, k) = N_k q_ik / sum_c N_c q_ic
  Matrix grad_z;   // N x d_emb
  Vector grad_gamma;
  Vector grad_beta_shift;
  std::optional<double> grad_alpha;
};

struct ParameterError {
  std::size_t index;
  double analytic;
  double numeric;
  double abs_error;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::vector<ParameterError> per_parameter;
};

/// Batch-composition weights w_{k,i}.
Matrix class_weights(const ProbMatrix& q, const PseudoLabelSummary& ps);

/// beta(i, j) = p (1 + log p) over the image-to-text matching matrix.
Matrix beta_coefficients(const Matrix& p_i2t);

/// Gradient of the soft contrastive loss w.r.t. each embedding. The image-to-text part uses the
/// attraction/repulsion form sum_j beta_ij (-t_j + sum_k w_ki t_k) / tau; kSymmetric adds the
/// text-to-image entropies, which couple all rows of the batch.
GradientWorkspace grad_scont_wrt_z(const EmbeddingMatrix& z, const PseudoLabelSummary& ps,
                                   const ClassPrototypes& protos, const ProbMatrix& q, double tau,
                                   ScontMode mode = ScontMode::kImageToText);

/// Two-class closed form [beta_a q_b - beta_b q_a] N_a N_b / (N_a q_a + N_b q_b) (t_b - t_a) / tau.
/// `beta_row` holds beta for a caption of class a and of class b.
Vector grad_binary_closed_form(std::span<const double> q_row, std::array<double, 2> counts,
                               std::span<const double> beta_row, const ClassPrototypes& protos,
                               double tau);

/// N_a N_b / (N_a q_a + N_b q_b), the batch-composition factor of the two-class gradient.
double binary_composition_coefficient(double n_a, double n_b, double q_a, double q_b);

Matrix grad_tent_wrt_z(const ProbMatrix& q, const ClassPrototypes& protos, double tau);

Matrix grad_hard_contrastive_wrt_z(const PseudoLabelSummary& ps, const ClassPrototypes& protos,
                                   const ProbMatrix& q, double tau);

Matrix grad_reg_wrt_z(const ProbMatrix& q, const ClassPrototypes& protos, double tau);

/// Everything the soft-contrastive gradient needs for one batch.
struct BatchView {
  const EmbeddingMatrix& z;
  const PseudoLabelSummary& ps;
  const ProbMatrix& q;
};

struct CliptaGradient {
  Matrix current;
  std::optional<Matrix> memory;
};

/// Gradient of 0.5 (L_scont + L_scont^M) + lambda_reg L_reg (or L_scont + lambda_reg L_reg when
/// no memory batch is given). L_reg is taken over the current batch only.
CliptaGradient grad_cliptta_wrt_z(const BatchView& current, const BatchView* memory,
                                  const ClassPrototypes& protos, double tau, double lambda_reg,
                                  ScontMode mode = ScontMode::kImageToText);

struct EncoderGradient {
  Vector gamma;
  Vector beta_shift;
};

/// Chain rule from dL/dz back to the affine normalisation parameters.
EncoderGradient backprop_through_encoder(const Matrix& grad_z, const Matrix& x_raw,
                                         const EncoderParams& params);

struct OceGradient {
  double alpha = 0.0;
  Vector s;
};

/// Exact derivative of -(mu_id - mu_ood)^2 through w_i = sigmoid(s_i - alpha).
OceGradient grad_oce(const OodScores& scores);

/// Chains dL/ds_i for s_i = max_c q_ic into the embeddings (argmax branch at ties).
Matrix grad_mcm_wrt_z(const Vector& grad_s, const ProbMatrix& q, const ClassPrototypes& protos,
                      double tau);

using ScalarFunction = std::function<double(const Vector&)>;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
Vector finite_difference_oracle(const ScalarFunction& loss_fn, const Vector& point,
                                double h = 1e-5);

/// Max |analytic - numeric| relative to max(||analytic||_inf, 1e-8).
GradCheckResult compare_gradients(std::span<const double> analytic,
                                  std::span<const double> numeric);

}  // namespace cliptta
