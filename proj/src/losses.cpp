#include "cliptta/losses.hpp"

#include <cmath>
#include <utility>

namespace cliptta {

double soft_contrastive_loss(const BatchMatchMatrix& pm, ScontMode mode) {
  double total = 0.0;
  for (std::size_t i = 0; i < pm.i2t.rows(); ++i) total += entropy(pm.i2t.row(i));
  if (mode == ScontMode::kSymmetric) {
    for (std::size_t i = 0; i < pm.t2i.rows(); ++i) total += entropy(pm.t2i.row(i));
  }
  return total;
}

double tent_loss(const ProbMatrix& q) {
  double total = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) total += entropy(q.q.row(i));
  return total;
}

double hard_contrastive_loss(const EmbeddingMatrix& z, const PseudoLabelSummary& ps, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be > 0");
  Matrix sim = matmul_transposed(z.z, ps.caption_rows);
  double total = 0.0;
  std::vector<double> logits(sim.cols());
  for (std::size_t i = 0; i < sim.rows(); ++i) {
    for (std::size_t j = 0; j < sim.cols(); ++j) logits[j] = sim(i, j) / tau;
    total += log_sum_exp(logits) - logits[i];
  }
  return total;
}

RegularizerResult regularizer_loss(const ProbMatrix& q) {
  const std::size_t n = q.size();
  const std::size_t c = q.num_classes();
  Vector q_bar(c, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) q_bar[k] += q.q(i, k);
  for (double& v : q_bar) v /= static_cast<double>(n);
  return {-entropy(q_bar.span()), std::move(q_bar)};
}

double cliptta_total(double current, std::optional<double> memory, double l_reg,
                     double lambda_reg) {
  if (memory) return 0.5 * (current + *memory) + lambda_reg * l_reg;
  return current + lambda_reg * l_reg;
}

OodScores outlier_weights(const Vector& s, double alpha) {
  OodScores out{s, Vector(s.size()), alpha};
  for (std::size_t i = 0; i < s.size(); ++i) out.w[i] = sigmoid(s[i] - alpha);
  return out;
}

OceReport oce_loss(const OodScores& scores) {
  const std::size_t n = scores.s.size();
  if (n == 0) throw ShapeError("oce_loss: empty batch");
  double w_sum = 0.0, ws_sum = 0.0, v_sum = 0.0, vs_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    w_sum += scores.w[i];
    ws_sum += scores.w[i] * scores.s[i];
    v_sum += 1.0 - scores.w[i];
    vs_sum += (1.0 - scores.w[i]) * scores.s[i];
  }
  if (w_sum < 1e-12 || v_sum < 1e-12) throw NumericError("degenerate ID/OOD partition");

  OceReport r;
  r.mu_id = ws_sum / w_sum;
  r.mu_ood = vs_sum / v_sum;
  const double gap = r.mu_id - r.mu_ood;
  r.loss = -(gap * gap);
  r.p_id = w_sum / static_cast<double>(n);
  r.p_ood = 1.0 - r.p_id;
  // Condensed intra-class form, reported as printed; diagnostic only.
  r.sigma2_intra = r.p_id * r.mu_id * r.mu_id - r.p_ood * r.mu_ood * r.mu_ood;
  r.sigma2_inter_weighted = r.p_id * r.p_ood * gap * gap;
  return r;
}

}  // namespace cliptta
