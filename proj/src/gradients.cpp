#include "cliptta/gradients.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace cliptta {

namespace {

void require_tau(double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be > 0");
}

// out += coeff * v
void axpy(double coeff, std::span<const double> v, std::span<double> out) {
  for (std::size_t d = 0; d < v.size(); ++d) out[d] += coeff * v[d];
}

// sum_k coeffs[k] * protos[k]
Vector combine_prototypes(std::span<const double> coeffs, const ClassPrototypes& protos) {
  Vector out(protos.dim(), 0.0);
  for (std::size_t k = 0; k < protos.num_classes(); ++k) axpy(coeffs[k], protos.row(k), out.span());
  return out;
}

}  // namespace

Matrix class_weights(const ProbMatrix& q, const PseudoLabelSummary& ps) {
  const std::size_t c = q.num_classes();
  if (ps.counts.size() != c) throw ShapeError("class_weights: count vector length != C");
  Matrix w(q.size(), c);
  for (std::size_t i = 0; i < q.size(); ++i) {
    double denom = 0.0;
    for (std::size_t k = 0; k < c; ++k) denom += static_cast<double>(ps.counts[k]) * q.q(i, k);
    for (std::size_t k = 0; k < c; ++k) {
      w(i, k) = static_cast<double>(ps.counts[k]) * q.q(i, k) / denom;
    }
  }
  return w;
}

Matrix beta_coefficients(const Matrix& p_i2t) {
  Matrix beta(p_i2t.rows(), p_i2t.cols());
  for (std::size_t i = 0; i < p_i2t.rows(); ++i) {
    for (std::size_t j = 0; j < p_i2t.cols(); ++j) {
      const double p = p_i2t(i, j);
      beta(i, j) = p * (1.0 + safe_log(p));
    }
  }
  return beta;
}

GradientWorkspace grad_scont_wrt_z(const EmbeddingMatrix& z, const PseudoLabelSummary& ps,
                                   const ClassPrototypes& protos, const ProbMatrix& q, double tau,
                                   ScontMode mode) {
  require_tau(tau);
  const std::size_t n = z.size();
  const std::size_t dim = protos.dim();
  if (ps.size() != n || q.size() != n) throw ShapeError("grad_scont_wrt_z: batch size mismatch");

  const BatchMatchMatrix pm = batch_match_probabilities(z, ps.caption_rows, tau);
  GradientWorkspace ws{beta_coefficients(pm.i2t), class_weights(q, ps), Matrix(n, dim), {}, {}, {}};

  for (std::size_t i = 0; i < n; ++i) {
    auto g = ws.grad_z.row(i);
    double beta_sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      beta_sum += ws.beta(i, j);
      axpy(-ws.beta(i, j), ps.caption_rows.row(j), g);
    }
    const Vector repulsion = combine_prototypes(ws.w_class.row(i), protos);
    axpy(beta_sum, repulsion.span(), g);
    for (double& v : g) v /= tau;
  }

  if (mode == ScontMode::kSymmetric) {
    // H_i = entropy of p(x_. | t_i); dH_i/ds_ji = -r_ij (log r_ij + H_i), s_ji = z_j . t_i / tau.
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = pm.t2i.row(i);
      const double h = entropy(r);
      for (std::size_t j = 0; j < n; ++j) {
        const double ds = -r[j] * (safe_log(r[j]) + h);
        axpy(ds / tau, ps.caption_rows.row(i), ws.grad_z.row(j));
      }
    }
  }
  return ws;
}

double binary_composition_coefficient(double n_a, double n_b, double q_a, double q_b) {
  const double denom = n_a * q_a + n_b * q_b;
  if (!(denom > 0.0)) throw std::invalid_argument("empty two-class batch");
  return n_a * n_b / denom;
}

Vector grad_binary_closed_form(std::span<const double> q_row, std::array<double, 2> counts,
                               std::span<const double> beta_row, const ClassPrototypes& protos,
                               double tau) {
  if (protos.num_classes() != 2 || q_row.size() != 2 || beta_row.size() != 2) {
    throw ShapeError("binary closed form requires exactly two classes");
  }
  require_tau(tau);
  const double bracket = beta_row[0] * q_row[1] - beta_row[1] * q_row[0];
  const double coeff =
      bracket * binary_composition_coefficient(counts[0], counts[1], q_row[0], q_row[1]) / tau;
  Vector out(protos.dim());
  for (std::size_t d = 0; d < protos.dim(); ++d) {
    out[d] = coeff * (protos.row(1)[d] - protos.row(0)[d]);
  }
  return out;
}

Matrix grad_tent_wrt_z(const ProbMatrix& q, const ClassPrototypes& protos, double tau) {
  require_tau(tau);
  const std::size_t c = q.num_classes();
  Matrix grad(q.size(), protos.dim());
  std::vector<double> coeffs(c);
  for (std::size_t i = 0; i < q.size(); ++i) {
    const auto row = q.q.row(i);
    for (std::size_t k = 0; k < c; ++k) {
      double log_ratio_mean = 0.0;
      for (std::size_t m = 0; m < c; ++m) {
        log_ratio_mean += (safe_log(row[k]) - safe_log(row[m])) * row[m];
      }
      coeffs[k] = -log_ratio_mean * row[k] / tau;
    }
    grad.set_row(i, combine_prototypes(coeffs, protos).span());
  }
  return grad;
}

Matrix grad_hard_contrastive_wrt_z(const PseudoLabelSummary& ps, const ClassPrototypes& protos,
                                   const ProbMatrix& q, double tau) {
  require_tau(tau);
  const Matrix w = class_weights(q, ps);
  Matrix grad(q.size(), protos.dim());
  for (std::size_t i = 0; i < q.size(); ++i) {
    Vector g = combine_prototypes(w.row(i), protos);
    axpy(-1.0, ps.caption_rows.row(i), g.span());
    for (double& v : g) v /= tau;
    grad.set_row(i, g.span());
  }
  return grad;
}

Matrix grad_reg_wrt_z(const ProbMatrix& q, const ClassPrototypes& protos, double tau) {
  require_tau(tau);
  const std::size_t n = q.size();
  const std::size_t c = q.num_classes();
  const Vector q_bar = regularizer_loss(q).q_bar;
  std::vector<double> log_bar(c);
  for (std::size_t k = 0; k < c; ++k) log_bar[k] = safe_log(q_bar[k]);

  Matrix grad(n, protos.dim());
  std::vector<double> coeffs(c);
  const double scale = 1.0 / (static_cast<double>(n) * tau);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = q.q.row(i);
    for (std::size_t k = 0; k < c; ++k) {
      double bracket = 0.0;
      for (std::size_t j = 0; j < c; ++j) bracket += row[j] * (log_bar[k] - log_bar[j]);
      coeffs[k] = scale * bracket * row[k];
    }
    grad.set_row(i, combine_prototypes(coeffs, protos).span());
  }
  return grad;
}

CliptaGradient grad_cliptta_wrt_z(const BatchView& current, const BatchView* memory,
                                  const ClassPrototypes& protos, double tau, double lambda_reg,
                                  ScontMode mode) {
  CliptaGradient out;
  out.current = grad_scont_wrt_z(current.z, current.ps, protos, current.q, tau, mode).grad_z;
  if (memory != nullptr) {
    for (double& v : out.current.data()) v *= 0.5;
    out.memory = grad_scont_wrt_z(memory->z, memory->ps, protos, memory->q, tau, mode).grad_z;
    for (double& v : out.memory->data()) v *= 0.5;
  }
  if (lambda_reg != 0.0) {
    const Matrix reg = grad_reg_wrt_z(current.q, protos, tau);
    for (std::size_t k = 0; k < reg.data().size(); ++k) {
      out.current.data()[k] += lambda_reg * reg.data()[k];
    }
  }
  return out;
}

EncoderGradient backprop_through_encoder(const Matrix& grad_z, const Matrix& x_raw,
                                         const EncoderParams& params) {
  const EncoderTrace trace = encode_with_trace(x_raw, params);
  if (grad_z.rows() != x_raw.rows() || grad_z.cols() != params.d_emb()) {
    throw ShapeError("backprop_through_encoder: grad_z must be N x d_emb");
  }
  const std::size_t d_in = params.d_in();
  const std::size_t d_emb = params.d_emb();
  const Matrix& w = params.w_proj();

  EncoderGradient out{Vector(d_in, 0.0), Vector(d_in, 0.0)};
  std::vector<double> g_u(d_emb);
  for (std::size_t i = 0; i < x_raw.rows(); ++i) {
    const auto g = grad_z.row(i);
    const auto z = trace.embeddings.z.row(i);
    const double norm = l2_norm(trace.projected.row(i));
    const double radial = dot(z, g);
    // d normalize(u) / du = (I - z z^T) / ||u||
    for (std::size_t e = 0; e < d_emb; ++e) g_u[e] = (g[e] - z[e] * radial) / norm;
    for (std::size_t f = 0; f < d_in; ++f) {
      const double g_h = dot(w.row(f), g_u);
      out.gamma[f] += g_h * trace.standardized(i, f);
      out.beta_shift[f] += g_h;
    }
  }
  return out;
}

OceGradient grad_oce(const OodScores& scores) {
  const std::size_t n = scores.s.size();
  const OceReport rep = oce_loss(scores);
  double w_sum = 0.0;
  for (double w : scores.w) w_sum += w;
  const double v_sum = static_cast<double>(n) - w_sum;
  const double outer = -2.0 * (rep.mu_id - rep.mu_ood);

  OceGradient out{0.0, Vector(n, 0.0)};
  for (std::size_t i = 0; i < n; ++i) {
    const double w = scores.w[i];
    const double dw = w * (1.0 - w);
    // d(mu_id - mu_ood)/dw_i
    const double via_w = (scores.s[i] - rep.mu_id) / w_sum + (scores.s[i] - rep.mu_ood) / v_sum;
    const double direct = w / w_sum - (1.0 - w) / v_sum;
    out.s[i] = outer * (direct + dw * via_w);
    out.alpha += outer * (-dw * via_w);
  }
  return out;
}

Matrix grad_mcm_wrt_z(const Vector& grad_s, const ProbMatrix& q, const ClassPrototypes& protos,
                      double tau) {
  require_tau(tau);
  const std::size_t c = q.num_classes();
  Matrix grad(q.size(), protos.dim());
  std::vector<double> coeffs(c);
  for (std::size_t i = 0; i < q.size(); ++i) {
    const auto row = q.q.row(i);
    const std::size_t top = argmax(row);
    // ds/dlogit_m = q_top (delta_{m,top} - q_m)
    for (std::size_t m = 0; m < c; ++m) {
      coeffs[m] = grad_s[i] * row[top] * ((m == top ? 1.0 : 0.0) - row[m]) / tau;
    }
    grad.set_row(i, combine_prototypes(coeffs, protos).span());
  }
  return grad;
}

Vector finite_difference_oracle(const ScalarFunction& loss_fn, const Vector& point, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite difference step must be > 0");
  Vector x = point;
  Vector out(point.size());
  for (std::size_t k = 0; k < point.size(); ++k) {
    const double orig = x[k];
    // Step actually representable at this magnitude, so x +- step are exact.
    volatile double shifted = orig + h;
    const double step = shifted - orig;
    x[k] = orig + step;
    const double up = loss_fn(x);
    x[k] = orig - step;
    const double down = loss_fn(x);
    x[k] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("non-finite loss at coordinate " + std::to_string(k));
    }
    out[k] = (up - down) / (2.0 * step);
  }
  return out;
}

GradCheckResult compare_gradients(std::span<const double> analytic,
                                  std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw ShapeError("compare_gradients: length mismatch");
  GradCheckResult r;
  const double denom = std::max(max_abs(analytic), 1e-8);
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    const double err = std::abs(analytic[k] - numeric[k]);
    r.per_parameter.push_back({k, analytic[k], numeric[k], err});
    r.max_abs_error = std::max(r.max_abs_error, err);
  }
  r.max_rel_error = r.max_abs_error / denom;
  return r;
}

}  // namespace cliptta
