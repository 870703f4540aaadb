#include "cliptta/model.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace cliptta {

namespace {

void require_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("tau must be > 0");
}

}  // namespace

ClassPrototypes::ClassPrototypes(Matrix protos, std::vector<std::string> class_names)
    : protos_(std::move(protos)), names_(std::move(class_names)) {
  if (protos_.rows() < 2) throw ShapeError("need at least two class prototypes");
  if (!all_finite(protos_.data())) throw NumericError("non-finite prototype");
  for (std::size_t c = 0; c < protos_.rows(); ++c) {
    if (std::abs(l2_norm(protos_.row(c)) - 1.0) > 1e-10) {
      throw std::invalid_argument("prototype " + std::to_string(c) + " is not unit-norm");
    }
    for (std::size_t o = 0; o < c; ++o) {
      if (std::equal(protos_.row(c).begin(), protos_.row(c).end(), protos_.row(o).begin())) {
        throw std::invalid_argument("prototypes " + std::to_string(o) + " and " +
                                    std::to_string(c) + " are identical");
      }
    }
  }
  if (names_.empty()) {
    for (std::size_t c = 0; c < protos_.rows(); ++c) names_.push_back("class" + std::to_string(c));
  }
  if (names_.size() != protos_.rows()) throw ShapeError("class name count != prototype count");
}

EncoderParams::EncoderParams(Matrix w_proj, double tau, double eps_norm)
    : EncoderParams(Vector(w_proj.rows(), 1.0), Vector(w_proj.rows(), 0.0), std::move(w_proj), tau,
                    eps_norm) {}

EncoderParams::EncoderParams(Vector gamma_, Vector beta_, Matrix w_proj, double tau,
                             double eps_norm)
    : gamma(std::move(gamma_)), beta(std::move(beta_)), w_proj_(std::move(w_proj)), tau_(tau),
      eps_norm_(eps_norm) {
  require_tau(tau_);
  if (!(eps_norm_ > 0.0)) throw std::invalid_argument("eps_norm must be > 0");
  if (gamma.size() != w_proj_.rows() || beta.size() != w_proj_.rows()) {
    throw ShapeError("gamma/beta length must equal projection rows");
  }
}

EncoderTrace encode_with_trace(const Matrix& x_raw, const EncoderParams& params) {
  const std::size_t d_in = params.d_in();
  if (x_raw.cols() != d_in) {
    throw ShapeError("encode: input has " + std::to_string(x_raw.cols()) + " features, expected " +
                     std::to_string(d_in));
  }
  if (!all_finite(x_raw.data())) throw NumericError("non-finite encoder input");

  const std::size_t n = x_raw.rows();
  EncoderTrace trace{Matrix(n, d_in), Matrix(n, params.d_emb()), {Matrix(n, params.d_emb())}};
  Matrix affine(n, d_in);
  for (std::size_t i = 0; i < n; ++i) {
    auto x = x_raw.row(i);
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(d_in);
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d_in);
    const double inv_std = 1.0 / std::sqrt(var + params.eps_norm());
    for (std::size_t f = 0; f < d_in; ++f) {
      const double s = (x[f] - mean) * inv_std;
      trace.standardized(i, f) = s;
      affine(i, f) = params.gamma[f] * s + params.beta[f];
    }
  }
  trace.projected = matmul(affine, params.w_proj());
  for (std::size_t i = 0; i < n; ++i) {
    trace.embeddings.z.set_row(i, l2_normalize(trace.projected.row(i)).span());
  }
  return trace;
}

EmbeddingMatrix encode(const Matrix& x_raw, const EncoderParams& params) {
  return std::move(encode_with_trace(x_raw, params).embeddings);
}

Matrix class_logits(const EmbeddingMatrix& z, const ClassPrototypes& protos, double tau) {
  require_tau(tau);
  Matrix logits = matmul_transposed(z.z, protos.matrix());
  for (double& v : logits.data()) v /= tau;
  return logits;
}

ProbMatrix class_probabilities(const EmbeddingMatrix& z, const ClassPrototypes& protos,
                               double tau) {
  Matrix logits = class_logits(z, protos, tau);
  ProbMatrix out{Matrix(logits.rows(), logits.cols())};
  for (std::size_t i = 0; i < logits.rows(); ++i) out.q.set_row(i, softmax(logits.row(i)).span());
  return out;
}

BatchMatchMatrix batch_match_probabilities(const EmbeddingMatrix& z, const Matrix& caption_rows,
                                           double tau) {
  require_tau(tau);
  const std::size_t n = z.size();
  if (n == 0) throw ShapeError("batch_match_probabilities: empty batch");
  if (caption_rows.rows() != n || caption_rows.cols() != z.z.cols()) {
    throw ShapeError("batch_match_probabilities: caption rows must be N x d_emb");
  }
  // sim(i, j) = z_i . t_j / tau
  Matrix sim = matmul_transposed(z.z, caption_rows);
  for (double& v : sim.data()) v /= tau;

  BatchMatchMatrix out{Matrix(n, n), Matrix(n, n)};
  std::vector<double> column(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.i2t.set_row(i, softmax(sim.row(i)).span());
    for (std::size_t l = 0; l < n; ++l) column[l] = sim(l, i);
    out.t2i.set_row(i, softmax(column).span());
  }
  return out;
}

Vector mcm_score(const ProbMatrix& q) {
  Vector s(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) s[i] = q.q(i, argmax(q.q.row(i)));
  return s;
}

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k] > v[best]) best = k;
  return best;
}

}  // namespace cliptta
