#pragma once

#include <optional>

#include "cliptta/model.hpp"
#include "cliptta/pseudo.hpp"

namespace cliptta {

enum class ScontMode { kImageToText, kSymmetric };

/// Scalar objectives evaluated on one batch. Optional terms are absent when not computed.
struct LossReport {
  double l_scont = 0.0;
  std::optional<double> l_scont_mem;
  double l_reg = 0.0;
  double l_total = 0.0;
  std::optional<double> l_tent;
  std::optional<double> l_cont_hard;
  std::optional<double> l_oce;
  Vector q_bar;
};

struct OodScores {
  Vector s;  // MCM scores
  Vector w;  // sigmoid(s - alpha)
  double alpha = 0.0;
};

struct OceReport {
  double mu_id = 0.0;
  double mu_ood = 0.0;
  double loss = 0.0;
  double p_id = 0.0;
  double p_ood = 0.0;
  double sigma2_intra = 0.0;
  double sigma2_inter_weighted = 0.0;
};

struct RegularizerResult {
  double value;
  Vector q_bar;
};

/// Sum over rows of the entropy of p(t_j | x_i); kSymmetric adds the entropies of p(x_j | t_i).
double soft_contrastive_loss(const BatchMatchMatrix& pm, ScontMode mode = ScontMode::kImageToText);

/// Sum over samples of the prediction entropy H(q_i).
double tent_loss(const ProbMatrix& q);

/// Sum over samples of -log p(t_i | x_i): CLIP's image-to-text loss on pseudo-captions.
double hard_contrastive_loss(const EmbeddingMatrix& z, const PseudoLabelSummary& ps, double tau);

/// Negative marginal entropy sum_c qbar_c log qbar_c and the batch mean qbar.
RegularizerResult regularizer_loss(const ProbMatrix& q);

/// 0.5 (current + memory) + lambda_reg * l_reg, or current + lambda_reg * l_reg without memory.
double cliptta_total(double current, std::optional<double> memory, double l_reg,
                     double lambda_reg);

OodScores outlier_weights(const Vector& s, double alpha);

/// -(mu_id - mu_ood)^2 plus the variance diagnostics. Throws NumericError on a degenerate
/// partition (sum of w or of 1 - w below 1e-12).
OceReport oce_loss(const OodScores& scores);

}  // namespace cliptta
