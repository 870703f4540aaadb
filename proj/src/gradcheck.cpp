#include "cliptta/gradcheck.hpp"

#include <chrono>
#include <cmath>
#include <ostream>

#include "cliptta/csv_io.hpp"
#include "cliptta/datagen.hpp"
#include "cliptta/losses.hpp"
#include "cliptta/metrics.hpp"
#include "cliptta/pseudo.hpp"

namespace cliptta {

namespace {

Vector flatten(const Matrix& m) {
  return Vector(std::vector<double>(m.data().begin(), m.data().end()));
}

Matrix unflatten(const Vector& v, std::size_t offset, std::size_t rows, std::size_t cols) {
  std::vector<double> data(v.begin() + static_cast<std::ptrdiff_t>(offset),
                           v.begin() + static_cast<std::ptrdiff_t>(offset + rows * cols));
  return Matrix(rows, cols, std::move(data));
}

ProbMatrix probs(const Matrix& z, const ClassPrototypes& protos, double tau) {
  return class_probabilities(EmbeddingMatrix{z}, protos, tau);
}

double scont_of(const Matrix& z, const PseudoLabelSummary& ps, double tau, ScontMode mode) {
  return soft_contrastive_loss(batch_match_probabilities(EmbeddingMatrix{z}, ps.caption_rows, tau),
                               mode);
}

class Recorder {
 public:
  explicit Recorder(double tol) : tol_(tol) {}

  void record(const std::string& loss, std::span<const double> analytic,
              std::span<const double> numeric, std::size_t config, std::size_t n, std::size_t c,
              double tau) {
    const GradCheckResult r = compare_gradients(analytic, numeric);
    LossCheck* entry = nullptr;
    for (auto& l : checks_)
      if (l.loss == loss) entry = &l;
    if (entry == nullptr) {
      checks_.push_back(LossCheck{loss});
      entry = &checks_.back();
    }
    ++entry->configurations;
    entry->max_abs_error = std::max(entry->max_abs_error, r.max_abs_error);
    if (r.max_rel_error > entry->max_rel_error || entry->configurations == 1) {
      entry->max_rel_error = std::max(entry->max_rel_error, r.max_rel_error);
      entry->worst_configuration = config;
      entry->worst_n = n;
      entry->worst_c = c;
      entry->worst_tau = tau;
    }
    entry->passed = entry->max_rel_error <= tol_;
  }

  std::vector<LossCheck> take() { return std::move(checks_); }

 private:
  double tol_;
  std::vector<LossCheck> checks_;
};

}  // namespace

static Vector orthogonal_anchor(const ClassPrototypes& protos, Rng& rng) {
  const std::size_t dim = protos.dim();
  std::vector<Vector> basis;
  for (std::size_t k = 0; k < protos.num_classes(); ++k) {
    Vector v(std::vector<double>(protos.row(k).begin(), protos.row(k).end()));
    for (const auto& b : basis) {
      const double p = dot(v.span(), b.span());
      for (std::size_t d = 0; d < dim; ++d) v[d] -= p * b[d];
    }
    basis.push_back(l2_normalize(v.span()));
  }
  for (;;) {
    Vector anchor = rng_standard_normal(rng, dim);
    for (const auto& b : basis) {
      const double p = dot(anchor.span(), b.span());
      for (std::size_t d = 0; d < dim; ++d) anchor[d] -= p * b[d];
    }
    if (l2_norm(anchor.span()) > 1e-3) return l2_normalize(anchor.span());
  }
}

EmbeddingMatrix random_embeddings(const ClassPrototypes& protos, std::size_t n, double tau,
                                  Rng& rng) {
  const std::size_t dim = protos.dim();
  const Vector anchor = orthogonal_anchor(protos, rng);
  Matrix z(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    Vector v = anchor;
    for (std::size_t k = 0; k < protos.num_classes(); ++k) {
      const double coeff = 3.0 * tau * rng.normal();
      for (std::size_t d = 0; d < dim; ++d) v[d] += coeff * protos.row(k)[d];
    }
    z.set_row(i, l2_normalize(v.span()).span());
  }
  return EmbeddingMatrix{std::move(z)};
}

RandomBatch random_batch(std::size_t n, std::size_t c, double tau, Rng& rng) {
  const std::size_t dim = c + 2 + rng.uniform_index(5);
  ClassPrototypes protos(sample_separated_directions(c, dim, 0.05, rng));
  // A fully collapsed batch has an identically zero hard/soft contrastive gradient, which the
  // relative check cannot resolve below the finite-difference round-off; redraw those.
  for (;;) {
    EmbeddingMatrix z = random_embeddings(protos, n, tau, rng);
    const auto labels = predicted_classes(class_probabilities(z, protos, tau));
    if (n < 2 || unique_classes(labels) >= 2) return {std::move(protos), std::move(z), tau};
  }
}

GradcheckReport run_gradcheck(const GradcheckOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  Recorder rec(opts.tolerance);
  const Rng root = Rng(opts.seed).derive("gradcheck");

  for (std::size_t cfg = 0; cfg < opts.configurations; ++cfg) {
    Rng rng = root.derive(static_cast<std::uint64_t>(cfg));
    const std::size_t n = opts.min_n + rng.uniform_index(opts.max_n - opts.min_n + 1);
    const std::size_t c = opts.min_c + rng.uniform_index(opts.max_c - opts.min_c + 1);
    const double tau = opts.taus[cfg % opts.taus.size()];
    const RandomBatch rb = random_batch(n, c, tau, rng);
    const auto& protos = rb.protos;
    const std::size_t dim = protos.dim();
    const ProbMatrix q = class_probabilities(rb.z, protos, tau);
    const PseudoLabelSummary ps = assign_pseudo_captions(q, protos);
    const Vector point = flatten(rb.z.z);
    auto as_z = [&](const Vector& v) { return unflatten(v, 0, n, dim); };
    auto check = [&](const std::string& name, const Matrix& analytic, const ScalarFunction& f) {
      const Vector numeric = finite_difference_oracle(f, point, opts.h);
      rec.record(name, analytic.data(), numeric.span(), cfg, n, c, tau);
    };

    check("tent", grad_tent_wrt_z(q, protos, tau),
          [&](const Vector& v) { return tent_loss(probs(as_z(v), protos, tau)); });
    check("hard_contrastive", grad_hard_contrastive_wrt_z(ps, protos, q, tau),
          [&](const Vector& v) { return hard_contrastive_loss(EmbeddingMatrix{as_z(v)}, ps, tau); });
    check("scont", grad_scont_wrt_z(rb.z, ps, protos, q, tau).grad_z, [&](const Vector& v) {
      return scont_of(as_z(v), ps, tau, ScontMode::kImageToText);
    });
    check("scont_symmetric",
          grad_scont_wrt_z(rb.z, ps, protos, q, tau, ScontMode::kSymmetric).grad_z,
          [&](const Vector& v) { return scont_of(as_z(v), ps, tau, ScontMode::kSymmetric); });

    Matrix reg = grad_reg_wrt_z(q, protos, tau);
    if (opts.flip_reg_sign)
      for (double& x : reg.data()) x = -x;
    check("reg", reg,
          [&](const Vector& v) { return regularizer_loss(probs(as_z(v), protos, tau)).value; });

    {
      // Combined objective with a memory batch of the same size.
      const EmbeddingMatrix mz = random_embeddings(protos, n, tau, rng);
      const Matrix& mem_z = mz.z;
      const ProbMatrix mq = class_probabilities(mz, protos, tau);
      const PseudoLabelSummary mps = assign_pseudo_captions(mq, protos);
      const double lambda = 1.0;
      const BatchView cur{rb.z, ps, q};
      const BatchView mem{mz, mps, mq};
      CliptaGradient g = grad_cliptta_wrt_z(cur, &mem, protos, tau, lambda);
      if (opts.flip_reg_sign) {
        const Matrix r = grad_reg_wrt_z(q, protos, tau);
        for (std::size_t k = 0; k < r.data().size(); ++k) g.current.data()[k] -= 2.0 * lambda * r.data()[k];
      }
      Vector joint(2 * n * dim);
      Vector analytic(2 * n * dim);
      for (std::size_t k = 0; k < n * dim; ++k) {
        joint[k] = point[k];
        joint[n * dim + k] = mem_z.data()[k];
        analytic[k] = g.current.data()[k];
        analytic[n * dim + k] = g.memory->data()[k];
      }
      const ScalarFunction f = [&](const Vector& v) {
        const Matrix zc = unflatten(v, 0, n, dim);
        const Matrix zm = unflatten(v, n * dim, n, dim);
        return cliptta_total(scont_of(zc, ps, tau, ScontMode::kImageToText),
                             scont_of(zm, mps, tau, ScontMode::kImageToText),
                             regularizer_loss(probs(zc, protos, tau)).value, lambda);
      };
      const Vector numeric = finite_difference_oracle(f, joint, opts.h);
      rec.record("cliptta", analytic.span(), numeric.span(), cfg, n, c, tau);
    }

    {
      // The gap is stationary in alpha near the middle of the scores; stay clear of points
      // where dL/dalpha sits below the finite-difference noise floor.
      Vector s(n);
      double alpha = 0.0;
      OceGradient g;
      do {
        for (double& x : s) x = rng.uniform();
        alpha = 0.2 + 0.6 * rng.uniform();
        g = grad_oce(outlier_weights(s, alpha));
      } while (std::abs(g.alpha) < 1e-6);
      const Vector ns = finite_difference_oracle(
          [&](const Vector& v) { return oce_loss(outlier_weights(v, alpha)).loss; }, s, opts.h);
      rec.record("oce_s", g.s.span(), ns.span(), cfg, n, c, tau);
      const Vector na = finite_difference_oracle(
          [&](const Vector& v) { return oce_loss(outlier_weights(s, v[0])).loss; },
          Vector{alpha}, opts.h);
      rec.record("oce_alpha", std::span<const double>(&g.alpha, 1), na.span(), cfg, n, c, tau);
    }

    {
      // Encoder chain rule against a fixed linear probe sum_ij G_ij z_ij.
      const std::size_t d_in = dim + rng.uniform_index(9);
      Matrix w = make_projection(d_in, dim, rng);
      Matrix x(n, d_in);
      for (double& v : x.data()) v = rng.normal();
      Vector gamma(d_in), beta(d_in);
      for (std::size_t f = 0; f < d_in; ++f) {
        gamma[f] = 1.0 + 0.3 * rng.normal();
        beta[f] = 0.3 * rng.normal();
      }
      Matrix probe(n, dim);
      for (double& v : probe.data()) v = rng.normal();
      const EncoderParams params(gamma, beta, w, tau);
      const EncoderGradient eg = backprop_through_encoder(probe, x, params);
      auto probe_loss = [&](const Vector& gm, const Vector& bt) {
        const EmbeddingMatrix ez = encode(x, EncoderParams(gm, bt, w, tau));
        return dot(ez.z.data(), probe.data());
      };
      const Vector ng = finite_difference_oracle(
          [&](const Vector& v) { return probe_loss(v, beta); }, gamma, opts.h);
      const Vector nb = finite_difference_oracle(
          [&](const Vector& v) { return probe_loss(gamma, v); }, beta, opts.h);
      rec.record("encoder_gamma", eg.gamma.span(), ng.span(), cfg, n, c, tau);
      rec.record("encoder_beta", eg.beta_shift.span(), nb.span(), cfg, n, c, tau);
    }
  }

  GradcheckReport report;
  report.losses = rec.take();
  for (const auto& l : report.losses) report.passed = report.passed && l.passed;
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

void write_gradcheck_csv(std::ostream& out, const GradcheckReport& report) {
  out << "loss,configurations,max_rel_error,max_abs_error,worst_configuration,worst_n,worst_c,"
         "worst_tau,passed\n";
  for (const auto& l : report.losses) {
    out << l.loss << ',' << l.configurations << ',' << format_double(l.max_rel_error) << ','
        << format_double(l.max_abs_error) << ',' << l.worst_configuration << ',' << l.worst_n
        << ',' << l.worst_c << ',' << format_double(l.worst_tau) << ','
        << (l.passed ? "true" : "false") << '\n';
  }
}

}  // namespace cliptta
