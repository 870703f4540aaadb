#include "cliptta/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace cliptta {

namespace {

constexpr std::size_t kMaxRejections = 10000;

Vector random_unit(std::size_t dim, Rng& rng) {
  for (;;) {
    Vector v = rng_standard_normal(rng, dim);
    if (l2_norm(v.span()) > 1e-12) return l2_normalize(v.span());
  }
}

// Shift parameters drawn once per world so every batch sees the same corruption.
struct ShiftModel {
  Shift shift;
  Vector plane_a, plane_b;  // rotation plane (embedding space)
  Vector bias_input;        // additive bias (input space)

  void rotate(std::span<double> e) const {
    const double pa = dot(plane_a.span(), e);
    const double pb = dot(plane_b.span(), e);
    const double c = std::cos(shift.magnitude) - 1.0;
    const double s = std::sin(shift.magnitude);
    for (std::size_t d = 0; d < e.size(); ++d) {
      e[d] += c * (pa * plane_a[d] + pb * plane_b[d]) + s * (pa * plane_b[d] - pb * plane_a[d]);
    }
  }
};

ShiftModel make_shift_model(const StreamSpec& spec, const Matrix& lift, Rng rng) {
  ShiftModel m{spec.shift, {}, {}, Vector(spec.d_in, 0.0)};
  if (spec.shift.kind == ShiftKind::kRotation) {
    m.plane_a = random_unit(spec.d_emb, rng);
    Vector b = rng_standard_normal(rng, spec.d_emb);
    const double proj = dot(b.span(), m.plane_a.span());
    for (std::size_t d = 0; d < spec.d_emb; ++d) b[d] -= proj * m.plane_a[d];
    m.plane_b = l2_normalize(b.span());
  } else if (spec.shift.kind == ShiftKind::kAdditiveBias) {
    const Vector dir = random_unit(spec.d_emb, rng);
    for (std::size_t f = 0; f < spec.d_in; ++f) {
      double v = 0.0;
      for (std::size_t e = 0; e < spec.d_emb; ++e) v += dir[e] * lift(e, f);
      m.bias_input[f] = spec.shift.magnitude * v;
    }
  }
  return m;
}

// One input row around `center` (embedding space).
void sample_row(std::span<const double> center, const StreamSpec& spec, const Matrix& lift,
                const ShiftModel& shift, Rng& rng, std::span<double> out) {
  Vector e(center.size());
  for (std::size_t d = 0; d < center.size(); ++d) e[d] = center[d] + spec.cluster_spread * rng.normal();
  if (shift.shift.kind == ShiftKind::kRotation) shift.rotate(e.span());
  for (std::size_t f = 0; f < spec.d_in; ++f) {
    double v = 0.0;
    for (std::size_t d = 0; d < spec.d_emb; ++d) v += e[d] * lift(d, f);
    out[f] = v + spec.residual_scale * rng.normal();
  }
  if (shift.shift.kind == ShiftKind::kAdditiveBias) {
    for (std::size_t f = 0; f < spec.d_in; ++f) out[f] += shift.bias_input[f];
  } else if (shift.shift.kind == ShiftKind::kNoise) {
    for (std::size_t f = 0; f < spec.d_in; ++f) out[f] += shift.shift.magnitude * rng.normal();
  }
}

LabeledBatch make_batch(std::size_t n_id, std::size_t n_ood, const StreamSpec& spec,
                        const ClassPrototypes& protos, const Matrix& ood_protos,
                        const Matrix& lift, const ShiftModel& shift, Rng& rng) {
  const std::size_t n = n_id + n_ood;
  std::vector<std::size_t> order(n);
  for (std::size_t k = 0; k < n; ++k) order[k] = k;
  for (std::size_t k = n; k > 1; --k) std::swap(order[k - 1], order[rng.uniform_index(k)]);

  LabeledBatch batch{Matrix(n, spec.d_in), std::vector<std::size_t>(n), std::vector<bool>(n)};
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t row = order[k];
    if (k < n_id) {
      const std::size_t c = rng.uniform_index(protos.num_classes());
      sample_row(protos.row(c), spec, lift, shift, rng, batch.x_raw.row(row));
      batch.true_labels[row] = c;
      batch.ood_mask[row] = false;
    } else {
      const std::size_t c = rng.uniform_index(ood_protos.rows());
      sample_row(ood_protos.row(c), spec, lift, shift, rng, batch.x_raw.row(row));
      batch.true_labels[row] = kUnknownLabel;
      batch.ood_mask[row] = true;
    }
  }
  return batch;
}

std::size_t ood_rows_per_batch(const StreamSpec& spec) {
  if (spec.ood_fraction <= 0.0) return 0;
  return static_cast<std::size_t>(std::llround(static_cast<double>(spec.samples_per_batch) *
                                               spec.ood_fraction / (1.0 - spec.ood_fraction)));
}

}  // namespace

void StreamSpec::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument(field + ": " + why);
  };
  if (n_classes < 2) fail("n_classes", "must be >= 2");
  if (d_in == 0) fail("d_in", "must be >= 1");
  if (d_emb < 2) fail("d_emb", "must be >= 2");
  if (d_in < d_emb) fail("d_in", "must be >= d_emb so the projection has full column rank");
  if (samples_per_batch == 0) fail("samples_per_batch", "must be >= 1");
  if (n_batches == 0) fail("n_batches", "must be >= 1");
  if (!(cluster_spread > 0.0) || !std::isfinite(cluster_spread)) fail("cluster_spread", "must be > 0");
  if (!std::isfinite(shift.magnitude) || shift.magnitude < 0.0) fail("shift", "magnitude must be finite and >= 0");
  if (!(ood_fraction >= 0.0 && ood_fraction < 1.0)) fail("ood_fraction", "must lie in [0, 1)");
  if (!(prototype_margin > 0.0) || prototype_margin > 2.0) fail("prototype_margin", "must lie in (0, 2]");
  if (!(residual_scale >= 0.0) || !std::isfinite(residual_scale)) fail("residual_scale", "must be finite and >= 0");
  if (eval_samples == 0) fail("eval_samples", "must be >= 1");
}

Matrix sample_separated_directions(std::size_t count, std::size_t dim, double margin, Rng& rng,
                                   const Matrix* existing) {
  std::vector<Vector> accepted;
  if (existing != nullptr) {
    for (std::size_t r = 0; r < existing->rows(); ++r) accepted.push_back(existing->row_vector(r));
  }
  const std::size_t offset = accepted.size();
  std::size_t attempts = 0;
  while (accepted.size() < offset + count) {
    Vector candidate = random_unit(dim, rng);
    bool ok = true;
    for (const auto& a : accepted) {
      if (dot(a.span(), candidate.span()) > 1.0 - margin) {
        ok = false;
        break;
      }
    }
    if (ok) {
      accepted.push_back(std::move(candidate));
    } else if (++attempts >= kMaxRejections) {
      throw std::runtime_error("prototype margin " + std::to_string(margin) +
                               " infeasible after " + std::to_string(attempts) + " attempts");
    }
  }
  Matrix out(count, dim);
  for (std::size_t k = 0; k < count; ++k) out.set_row(k, accepted[offset + k].span());
  return out;
}

ClassPrototypes make_prototypes(const StreamSpec& spec, Rng& rng) {
  return ClassPrototypes(
      sample_separated_directions(spec.n_classes, spec.d_emb, spec.prototype_margin, rng));
}

Matrix make_projection(std::size_t d_in, std::size_t d_emb, Rng& rng) {
  Matrix w(d_in, d_emb);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_in));
  for (double& v : w.data()) v = scale * rng.normal();
  for (std::size_t e = 0; e < d_emb; ++e) {
    double mean = 0.0;
    for (std::size_t f = 0; f < d_in; ++f) mean += w(f, e);
    mean /= static_cast<double>(d_in);
    for (std::size_t f = 0; f < d_in; ++f) w(f, e) -= mean;
  }
  return w;
}

std::vector<LabeledBatch> generate_stream(const StreamSpec& spec, const ClassPrototypes& protos,
                                          const Matrix& ood_protos, const Matrix& w_proj,
                                          Rng& rng) {
  spec.validate();
  const Matrix lift = pseudo_inverse(w_proj);
  const ShiftModel shift = make_shift_model(spec, lift, rng.derive("shift"));
  const std::size_t n_ood = ood_rows_per_batch(spec);
  if (n_ood > 0 && ood_protos.rows() == 0) throw std::invalid_argument("open-set stream needs outlier prototypes");

  std::vector<LabeledBatch> stream;
  stream.reserve(spec.n_batches);
  const Rng batches = rng.derive("batches");
  for (std::size_t b = 0; b < spec.n_batches; ++b) {
    Rng batch_rng = batches.derive(static_cast<std::uint64_t>(b));
    stream.push_back(make_batch(spec.samples_per_batch, n_ood, spec, protos, ood_protos, lift,
                                shift, batch_rng));
  }
  return stream;
}

SyntheticWorld make_world(const StreamSpec& spec) {
  spec.validate();
  const Rng root(spec.seed);
  Rng proto_rng = root.derive("prototypes");
  ClassPrototypes protos = make_prototypes(spec, proto_rng);
  Rng ood_rng = root.derive("ood-prototypes");
  const std::size_t n_ood_classes = std::max<std::size_t>(2, spec.n_classes / 2);
  Matrix ood = spec.ood_fraction > 0.0
                   ? sample_separated_directions(n_ood_classes, spec.d_emb, spec.prototype_margin,
                                                 ood_rng, &protos.matrix())
                   : Matrix();
  Rng proj_rng = root.derive("projection");
  Matrix w_proj = make_projection(spec.d_in, spec.d_emb, proj_rng);
  Rng stream_rng = root.derive("stream");
  auto stream = generate_stream(spec, protos, ood, w_proj, stream_rng);

  // Held-out set: same distribution (shift included), independent draws.
  const Matrix lift = pseudo_inverse(w_proj);
  const ShiftModel shift = make_shift_model(spec, lift, stream_rng.derive("shift"));
  Rng eval_rng = root.derive("eval");
  LabeledBatch eval = make_batch(spec.eval_samples,
                                 spec.ood_fraction > 0.0
                                     ? static_cast<std::size_t>(std::llround(
                                           static_cast<double>(spec.eval_samples) *
                                           spec.ood_fraction / (1.0 - spec.ood_fraction)))
                                     : 0,
                                 spec, protos, ood, lift, shift, eval_rng);
  return {std::move(protos), std::move(ood), std::move(w_proj), std::move(stream), std::move(eval)};
}

}  // namespace cliptta
