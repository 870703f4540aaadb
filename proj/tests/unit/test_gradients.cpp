#include <gtest/gtest.h>

#include <cmath>

#include "cliptta/gradcheck.hpp"
#include "cliptta/gradients.hpp"
#include "cliptta/losses.hpp"
#include "oracles.hpp"

using namespace cliptta;

namespace {

// Central differences written out independently of the library oracle.
template <typename F>
Vector fd(F f, Vector x, double h = 1e-5) {
  Vector g(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double keep = x[k];
    x[k] = keep + h;
    const double up = f(x);
    x[k] = keep - h;
    const double down = f(x);
    x[k] = keep;
    g[k] = (up - down) / (2.0 * h);
  }
  return g;
}

double rel_error(std::span<const double> analytic, std::span<const double> numeric) {
  return oracle::max_abs_diff(analytic, numeric) / std::max(max_abs(analytic), 1e-8);
}

Vector flat(const Matrix& m) { return Vector(std::vector<double>(m.data().begin(), m.data().end())); }

Matrix shaped(const Vector& v, std::size_t r, std::size_t c) {
  return Matrix(r, c, std::vector<double>(v.begin(), v.end()));
}

ClassPrototypes orthonormal(std::size_t c, std::size_t d) {
  Matrix m(c, d);
  for (std::size_t k = 0; k < c; ++k) m(k, k) = 1.0;
  return ClassPrototypes(m);
}

struct Config {
  RandomBatch rb;
  ProbMatrix q;
  PseudoLabelSummary ps;
};

Config random_config(std::uint64_t seed, double tau) {
  Rng rng(seed);
  const std::size_t n = 2 + rng.uniform_index(12), c = 2 + rng.uniform_index(6);
  RandomBatch rb = random_batch(n, c, tau, rng);
  ProbMatrix q = class_probabilities(rb.z, rb.protos, tau);
  PseudoLabelSummary ps = assign_pseudo_captions(q, rb.protos);
  return {std::move(rb), std::move(q), std::move(ps)};
}

}  // namespace

TEST(Coefficients, ClassWeightsAreDistributions) {
  for (std::uint64_t s = 0; s < 30; ++s) {
    const Config cfg = random_config(s, 0.1);
    const Matrix w = class_weights(cfg.q, cfg.ps);
    for (std::size_t i = 0; i < w.rows(); ++i) {
      double sum = 0.0;
      for (std::size_t k = 0; k < w.cols(); ++k) {
        EXPECT_GE(w(i, k), 0.0);
        sum += w(i, k);
      }
      EXPECT_NEAR(sum, 1.0, 1e-10);
    }
  }
}

TEST(Coefficients, BetaSignStructure) {
  const double e_inv = std::exp(-1.0);
  const Matrix p = Matrix::from_rows({{0.1, 0.2, 0.7}, {e_inv, 0.5, 1.0 - e_inv - 0.5}});
  const Matrix beta = beta_coefficients(p);
  for (std::size_t i = 0; i < p.rows(); ++i)
    for (std::size_t j = 0; j < p.cols(); ++j) {
      EXPECT_NEAR(beta(i, j), p(i, j) * (1.0 + std::log(p(i, j))), 1e-12);
      if (std::abs(p(i, j) - e_inv) > 1e-12) {
        EXPECT_EQ(beta(i, j) > 0.0, p(i, j) > e_inv);
      }
    }
  EXPECT_NEAR(beta(1, 0), 0.0, 1e-16);
}

TEST(ScontGradient, CollapsedBatchVanishes) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(100 + s);
    const std::size_t n = 2 + rng.uniform_index(20), c = 2 + rng.uniform_index(8);
    const RandomBatch rb = random_batch(n, c, 0.1, rng);
    const ProbMatrix q = class_probabilities(rb.z, rb.protos, 0.1);
    const PseudoLabelSummary ps = summary_from_labels(std::vector<std::size_t>(n, s % c), rb.protos);
    const GradientWorkspace ws = grad_scont_wrt_z(rb.z, ps, rb.protos, q, 0.1);
    EXPECT_LE(max_abs(ws.grad_z.data()), 1e-12);
    const Matrix hard = grad_hard_contrastive_wrt_z(ps, rb.protos, q, 0.1);
    EXPECT_LE(max_abs(hard.data()), 1e-12);
  }
}

TEST(ScontGradient, MatchesFiniteDifferences) {
  for (double tau : {0.01, 0.1, 1.0}) {
    for (std::uint64_t s = 0; s < 10; ++s) {
      const Config cfg = random_config(s, tau);
      const std::size_t n = cfg.q.size(), d = cfg.rb.protos.dim();
      for (ScontMode mode : {ScontMode::kImageToText, ScontMode::kSymmetric}) {
        const GradientWorkspace ws = grad_scont_wrt_z(cfg.rb.z, cfg.ps, cfg.rb.protos, cfg.q, tau, mode);
        const Vector num = fd([&](const Vector& v) {
          return soft_contrastive_loss(
              batch_match_probabilities(EmbeddingMatrix{shaped(v, n, d)}, cfg.ps.caption_rows, tau), mode);
        }, flat(cfg.rb.z.z));
        EXPECT_LE(rel_error(ws.grad_z.data(), num.span()), 1e-6) << "tau " << tau << " seed " << s;
      }
    }
  }
}

TEST(BinaryClosedForm, Examples) {
  const ClassPrototypes protos = orthonormal(2, 3);
  const std::vector<double> q{0.7, 0.3};
  const std::vector<double> beta{0.2, -0.1};
  const Vector zero_b = grad_binary_closed_form(q, {5.0, 0.0}, beta, protos, 0.1);
  for (double v : zero_b) EXPECT_EQ(v, 0.0);
  // beta_a q_b == beta_b q_a
  const std::vector<double> cancel{0.3 * 0.7, 0.3 * 0.3};
  const Vector zero_bracket = grad_binary_closed_form(std::vector<double>{0.7, 0.3}, {3.0, 2.0},
                                                      std::vector<double>{0.7 * 0.3, 0.3 * 0.3}, protos, 0.1);
  EXPECT_LE(max_abs(zero_bracket.span()), 1e-16);
  (void)cancel;
  const ClassPrototypes three = orthonormal(3, 3);
  EXPECT_THROW(grad_binary_closed_form(std::vector<double>{0.5, 0.3, 0.2}, {1.0, 1.0}, beta, three, 0.1),
               std::invalid_argument);
}

TEST(BinaryClosedForm, EqualsGeneralFormula) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng(500 + s);
    const std::size_t n = 2 + rng.uniform_index(20);
    const double tau = (s % 3 == 0) ? 0.01 : (s % 3 == 1 ? 0.1 : 1.0);
    const RandomBatch rb = random_batch(n, 2, tau, rng);
    const ProbMatrix q = class_probabilities(rb.z, rb.protos, tau);
    const PseudoLabelSummary ps = assign_pseudo_captions(q, rb.protos);
    const GradientWorkspace ws = grad_scont_wrt_z(rb.z, ps, rb.protos, q, tau);
    const std::array<double, 2> counts{static_cast<double>(ps.counts[0]), static_cast<double>(ps.counts[1])};
    for (std::size_t i = 0; i < n; ++i) {
      // beta for a caption of class a and of class b (any caption of that class shares it)
      std::array<double, 2> beta_row{0.0, 0.0};
      for (std::size_t j = 0; j < n; ++j) beta_row[ps.assigned[j]] = ws.beta(i, j);
      const Vector closed = grad_binary_closed_form(q.q.row(i), counts, beta_row, rb.protos, tau);
      EXPECT_LE(oracle::max_abs_diff(closed.span(), ws.grad_z.row(i)), 1e-9);
    }
  }
}

TEST(TentGradient, UniformRowsGiveZero) {
  const ClassPrototypes protos = orthonormal(4, 5);
  const Matrix g = grad_tent_wrt_z(ProbMatrix{Matrix(3, 4, 0.25)}, protos, 0.01);
  for (double v : g.data()) EXPECT_EQ(v, 0.0);
}

TEST(TentGradient, ConfidentRowReinforcesPrediction) {
  const ClassPrototypes protos = orthonormal(3, 4);
  const ProbMatrix q{Matrix::from_rows({{0.99, 0.006, 0.004}})};
  const Matrix g = grad_tent_wrt_z(q, protos, 0.1);
  // Descent direction against t_top minus the probability-weighted mean prototype.
  double inner = 0.0;
  for (std::size_t d = 0; d < 4; ++d) {
    double mean = 0.0;
    for (std::size_t k = 0; k < 3; ++k) mean += q.q(0, k) * protos.row(k)[d];
    inner += -g(0, d) * (protos.row(0)[d] - mean);
  }
  EXPECT_GT(inner, 0.0);
}

TEST(TentGradient, MatchesFiniteDifferences) {
  for (double tau : {0.01, 0.1, 1.0}) {
    for (std::uint64_t s = 0; s < 10; ++s) {
      const Config cfg = random_config(s + 20, tau);
      const std::size_t n = cfg.q.size(), d = cfg.rb.protos.dim();
      const Matrix g = grad_tent_wrt_z(cfg.q, cfg.rb.protos, tau);
      const Vector num = fd([&](const Vector& v) {
        return tent_loss(class_probabilities(EmbeddingMatrix{shaped(v, n, d)}, cfg.rb.protos, tau));
      }, flat(cfg.rb.z.z));
      EXPECT_LE(rel_error(g.data(), num.span()), 1e-6);
    }
  }
}

TEST(HardGradient, EqualCountsUseClassProbabilities) {
  const ClassPrototypes protos = orthonormal(3, 4);
  Rng rng(3);
  Matrix qm(6, 3);
  for (std::size_t i = 0; i < 6; ++i) qm.set_row(i, softmax(rng_standard_normal(rng, 3).span()).span());
  const ProbMatrix q{qm};
  const PseudoLabelSummary ps = summary_from_labels({0, 1, 2, 2, 1, 0}, protos);
  const double tau = 0.2;
  const Matrix g = grad_hard_contrastive_wrt_z(ps, protos, q, tau);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t d = 0; d < 4; ++d) {
      double mean = 0.0;
      for (std::size_t k = 0; k < 3; ++k) mean += q.q(i, k) * protos.row(k)[d];
      EXPECT_NEAR(g(i, d), (-ps.caption_rows(i, d) + mean) / tau, 1e-12);
    }
}

TEST(HardGradient, MatchesFiniteDifferences) {
  for (double tau : {0.01, 0.1, 1.0}) {
    for (std::uint64_t s = 0; s < 10; ++s) {
      const Config cfg = random_config(s + 40, tau);
      const std::size_t n = cfg.q.size(), d = cfg.rb.protos.dim();
      const Matrix g = grad_hard_contrastive_wrt_z(cfg.ps, cfg.rb.protos, cfg.q, tau);
      const Vector num = fd([&](const Vector& v) {
        return hard_contrastive_loss(EmbeddingMatrix{shaped(v, n, d)}, cfg.ps, tau);
      }, flat(cfg.rb.z.z));
      EXPECT_LE(rel_error(g.data(), num.span()), 1e-6);
    }
  }
}

TEST(RegGradient, UniformMeanGivesZero) {
  const ClassPrototypes protos = orthonormal(2, 3);
  const ProbMatrix q{Matrix::from_rows({{0.8, 0.2}, {0.2, 0.8}})};
  const Matrix g = grad_reg_wrt_z(q, protos, 0.05);
  EXPECT_LE(max_abs(g.data()), 1e-14);
}

TEST(RegGradient, PushesAwayFromOverrepresentedClass) {
  const ClassPrototypes protos = orthonormal(3, 4);
  const ProbMatrix q{Matrix::from_rows({{0.8, 0.1, 0.1}, {0.7, 0.2, 0.1}, {0.6, 0.1, 0.3}, {0.5, 0.3, 0.2}})};
  const Matrix g = grad_reg_wrt_z(q, protos, 0.1);
  for (std::size_t i = 0; i < 4; ++i) {
    // descent component along each prototype
    const double over = -dot(g.row(i), protos.row(0));
    EXPECT_LT(over, -dot(g.row(i), protos.row(1)));
    EXPECT_LT(over, -dot(g.row(i), protos.row(2)));
    EXPECT_LT(over, 0.0);
  }
}

TEST(RegGradient, MatchesFiniteDifferences) {
  for (double tau : {0.01, 0.1, 1.0}) {
    for (std::uint64_t s = 0; s < 10; ++s) {
      const Config cfg = random_config(s + 60, tau);
      const std::size_t n = cfg.q.size(), d = cfg.rb.protos.dim();
      const Matrix g = grad_reg_wrt_z(cfg.q, cfg.rb.protos, tau);
      const Vector num = fd([&](const Vector& v) {
        return regularizer_loss(class_probabilities(EmbeddingMatrix{shaped(v, n, d)}, cfg.rb.protos, tau)).value;
      }, flat(cfg.rb.z.z));
      EXPECT_LE(rel_error(g.data(), num.span()), 1e-6);
    }
  }
}

TEST(CliptaGradient, ZeroLambdaIsScontGradient) {
  const Config cfg = random_config(7, 0.1);
  const CliptaGradient g = grad_cliptta_wrt_z(BatchView{cfg.rb.z, cfg.ps, cfg.q}, nullptr, cfg.rb.protos, 0.1, 0.0);
  const GradientWorkspace ws = grad_scont_wrt_z(cfg.rb.z, cfg.ps, cfg.rb.protos, cfg.q, 0.1);
  EXPECT_EQ(g.current, ws.grad_z);
  EXPECT_FALSE(g.memory.has_value());
}

TEST(CliptaGradient, MatchesFiniteDifferencesWithMemory) {
  for (double tau : {0.01, 0.1, 1.0}) {
    for (std::uint64_t s = 0; s < 6; ++s) {
      Rng rng(800 + s);
      const std::size_t n = 2 + rng.uniform_index(10), c = 2 + rng.uniform_index(5);
      const RandomBatch rb = random_batch(n, c, tau, rng);
      const std::size_t m = 2 + rng.uniform_index(10);
      const EmbeddingMatrix mz = random_embeddings(rb.protos, m, tau, rng);
      const ProbMatrix q = class_probabilities(rb.z, rb.protos, tau);
      const ProbMatrix mq = class_probabilities(mz, rb.protos, tau);
      const PseudoLabelSummary ps = assign_pseudo_captions(q, rb.protos);
      const PseudoLabelSummary mps = assign_pseudo_captions(mq, rb.protos);
      const double lambda = 1.0;
      const BatchView mem{mz, mps, mq};
      const CliptaGradient g = grad_cliptta_wrt_z(BatchView{rb.z, ps, q}, &mem, rb.protos, tau, lambda);
      const std::size_t d = rb.protos.dim();
      auto loss = [&](const Matrix& zc, const Matrix& zm) {
        const double cur = soft_contrastive_loss(batch_match_probabilities(EmbeddingMatrix{zc}, ps.caption_rows, tau));
        const double mem_l = soft_contrastive_loss(batch_match_probabilities(EmbeddingMatrix{zm}, mps.caption_rows, tau));
        const double reg = regularizer_loss(class_probabilities(EmbeddingMatrix{zc}, rb.protos, tau)).value;
        return cliptta_total(cur, mem_l, reg, lambda);
      };
      const Vector nc = fd([&](const Vector& v) { return loss(shaped(v, n, d), mz.z); }, flat(rb.z.z));
      const Vector nm = fd([&](const Vector& v) { return loss(rb.z.z, shaped(v, m, d)); }, flat(mz.z));
      EXPECT_LE(rel_error(g.current.data(), nc.span()), 1e-6);
      EXPECT_LE(rel_error(g.memory->data(), nm.span()), 1e-6);
    }
  }
}

TEST(EncoderBackprop, ZeroUpstreamGivesZero) {
  Rng rng(1);
  const Matrix w = oracle::random_matrix(5, 3, rng);
  const Matrix x = oracle::random_matrix(4, 5, rng);
  const EncoderGradient g = backprop_through_encoder(Matrix(4, 3), x, EncoderParams(w, 0.1));
  for (double v : g.gamma) EXPECT_EQ(v, 0.0);
  for (double v : g.beta_shift) EXPECT_EQ(v, 0.0);
}

TEST(EncoderBackprop, HandUnrolledTwoDimensional) {
  const double a = 0.3, b = -1.1, eps = 1e-5;
  const double g1 = 1.2, g2 = 0.7, b1 = 0.1, b2 = -0.4;
  const double up1 = 0.5, up2 = -2.0;  // dL/dz
  const double mean = (a + b) / 2.0;
  const double sd = std::sqrt(((a - mean) * (a - mean) + (b - mean) * (b - mean)) / 2.0 + eps);
  const double xh1 = (a - mean) / sd, xh2 = (b - mean) / sd;
  const double u1 = g1 * xh1 + b1, u2 = g2 * xh2 + b2;
  const double nu = std::sqrt(u1 * u1 + u2 * u2);
  const double z1 = u1 / nu, z2 = u2 / nu;
  // dz/du = (I - z z^T) / |u|
  const double zg = z1 * up1 + z2 * up2;
  const double gu1 = (up1 - z1 * zg) / nu, gu2 = (up2 - z2 * zg) / nu;
  const EncoderParams params(Vector{g1, g2}, Vector{b1, b2}, Matrix::identity(2), 1.0, eps);
  const EncoderGradient g =
      backprop_through_encoder(Matrix::from_rows({{up1, up2}}), Matrix::from_rows({{a, b}}), params);
  EXPECT_NEAR(g.gamma[0], gu1 * xh1, 1e-14);
  EXPECT_NEAR(g.gamma[1], gu2 * xh2, 1e-14);
  EXPECT_NEAR(g.beta_shift[0], gu1, 1e-14);
  EXPECT_NEAR(g.beta_shift[1], gu2, 1e-14);
}

TEST(EncoderBackprop, EndToEndFiniteDifferences) {
  for (double tau : {0.1, 1.0}) {
    for (std::uint64_t s = 0; s < 5; ++s) {
      Rng rng(900 + s);
      const std::size_t n = 3 + rng.uniform_index(8), c = 2 + rng.uniform_index(4);
      const std::size_t d_emb = c + 2, d_in = d_emb + 3;
      const ClassPrototypes protos(oracle::random_unit_rows(c, d_emb, rng));
      const Matrix w = oracle::random_matrix(d_in, d_emb, rng);
      const Matrix x = oracle::random_matrix(n, d_in, rng);
      Vector gamma(d_in), beta(d_in);
      for (std::size_t f = 0; f < d_in; ++f) {
        gamma[f] = 1.0 + 0.2 * rng.normal();
        beta[f] = 0.2 * rng.normal();
      }
      const EncoderParams params(gamma, beta, w, tau);
      const EmbeddingMatrix z = encode(x, params);
      const ProbMatrix q = class_probabilities(z, protos, tau);
      const PseudoLabelSummary ps = assign_pseudo_captions(q, protos);
      const CliptaGradient gz = grad_cliptta_wrt_z(BatchView{z, ps, q}, nullptr, protos, tau, 1.0);
      const EncoderGradient g = backprop_through_encoder(gz.current, x, params);
      auto loss = [&](const Vector& gm, const Vector& bt) {
        const EmbeddingMatrix zz = encode(x, EncoderParams(gm, bt, w, tau));
        const double sc = soft_contrastive_loss(batch_match_probabilities(zz, ps.caption_rows, tau));
        return cliptta_total(sc, std::nullopt, regularizer_loss(class_probabilities(zz, protos, tau)).value, 1.0);
      };
      const Vector ng = fd([&](const Vector& v) { return loss(v, beta); }, gamma);
      const Vector nb = fd([&](const Vector& v) { return loss(gamma, v); }, beta);
      EXPECT_LE(rel_error(g.gamma.span(), ng.span()), 1e-6) << tau << ' ' << s;
      EXPECT_LE(rel_error(g.beta_shift.span(), nb.span()), 1e-6) << tau << ' ' << s;
    }
  }
}

TEST(OceGradient, EqualMeansGiveZero) {
  const OceGradient g = grad_oce(outlier_weights(Vector{0.4, 0.4, 0.4}, 0.2));
  EXPECT_EQ(g.alpha, 0.0);
  for (double v : g.s) EXPECT_EQ(v, 0.0);
}

TEST(OceGradient, TwoScoreExampleMatchesFiniteDifferences) {
  const Vector s{0.9, 0.1};
  const double alpha = 0.5;
  const OceGradient g = grad_oce(outlier_weights(s, alpha));
  const Vector ns = fd([&](const Vector& v) { return oce_loss(outlier_weights(v, alpha)).loss; }, s);
  const Vector na = fd([&](const Vector& v) { return oce_loss(outlier_weights(s, v[0])).loss; }, Vector{alpha});
  EXPECT_LE(rel_error(g.s.span(), ns.span()), 1e-7);
  EXPECT_LE(std::abs(g.alpha - na[0]) / std::max(std::abs(g.alpha), 1e-8), 1e-7);
}

TEST(OceGradient, SaturatedWeightsStayFinite) {
  const OceGradient g = grad_oce(outlier_weights(Vector{0.9, 0.5, 0.1}, 20.0));
  EXPECT_TRUE(std::isfinite(g.alpha));
  EXPECT_TRUE(all_finite(g.s.span()));
  EXPECT_LT(std::abs(g.alpha), 1.0);
}

TEST(McmChain, MatchesFiniteDifferences) {
  for (double tau : {0.05, 0.5}) {
    const Config cfg = random_config(77, tau);
    const std::size_t n = cfg.q.size(), d = cfg.rb.protos.dim();
    Rng rng(5);
    const Vector weights = rng_standard_normal(rng, n);
    const Matrix g = grad_mcm_wrt_z(weights, cfg.q, cfg.rb.protos, tau);
    const Vector num = fd([&](const Vector& v) {
      const Vector s = mcm_score(class_probabilities(EmbeddingMatrix{shaped(v, n, d)}, cfg.rb.protos, tau));
      return dot(s.span(), weights.span());
    }, flat(cfg.rb.z.z));
    EXPECT_LE(rel_error(g.data(), num.span()), 1e-6);
  }
}

TEST(FiniteDifferenceOracle, Examples) {
  const Vector q = finite_difference_oracle([](const Vector& v) { return v[0] * v[0] + v[1] * v[1]; }, Vector{1.0, 2.0});
  EXPECT_NEAR(q[0], 2.0, 1e-9);
  EXPECT_NEAR(q[1], 4.0, 1e-9);
  const Vector l = finite_difference_oracle([](const Vector& v) { return 3.0 * v[0]; }, Vector{5.0});
  EXPECT_NEAR(l[0], 3.0, 1e-10);
  EXPECT_THROW(finite_difference_oracle([](const Vector&) { return NAN; }, Vector{1.0}), NumericError);
}

TEST(FiniteDifferenceOracle, AgreesWithScontGradientOnOneCoordinate) {
  const Config cfg = random_config(3, 0.1);
  const std::size_t n = cfg.q.size(), d = cfg.rb.protos.dim();
  const GradientWorkspace ws = grad_scont_wrt_z(cfg.rb.z, cfg.ps, cfg.rb.protos, cfg.q, 0.1);
  const Vector point{cfg.rb.z.z(0, 0)};
  const Vector num = finite_difference_oracle([&](const Vector& v) {
    Matrix z = cfg.rb.z.z;
    z(0, 0) = v[0];
    return soft_contrastive_loss(batch_match_probabilities(EmbeddingMatrix{z}, cfg.ps.caption_rows, 0.1));
  }, point);
  EXPECT_NEAR(num[0], ws.grad_z(0, 0), 1e-6 * std::max(1.0, std::abs(ws.grad_z(0, 0))));
  (void)n;
  (void)d;
}

TEST(CompareGradients, RelativeToInfinityNorm) {
  const GradCheckResult r = compare_gradients(std::vector<double>{2.0, -4.0}, std::vector<double>{2.0, -4.004});
  EXPECT_NEAR(r.max_abs_error, 0.004, 1e-12);
  EXPECT_NEAR(r.max_rel_error, 0.001, 1e-12);
  const GradCheckResult tiny = compare_gradients(std::vector<double>{0.0}, std::vector<double>{1e-10});
  EXPECT_NEAR(tiny.max_rel_error, 1e-2, 1e-12);
}

TEST(Gradcheck, MutationIsCaught) {
  GradcheckOptions opts;
  opts.configurations = 6;
  opts.flip_reg_sign = true;
  const GradcheckReport r = run_gradcheck(opts);
  EXPECT_FALSE(r.passed);
  bool reg_failed = false;
  for (const auto& l : r.losses)
    if (l.loss == "reg") reg_failed = !l.passed;
  EXPECT_TRUE(reg_failed);
}
