#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "cliptta/model.hpp"
#include "cliptta/numerics.hpp"

namespace cliptta {

enum class ShiftKind { kNone, kRotation, kAdditiveBias, kNoise };

/// Distribution shift applied to every generated sample. `magnitude` is the rotation angle in
/// radians, the bias norm in embedding units, or the input-noise standard deviation.
struct Shift {
  ShiftKind kind = ShiftKind::kNone;
  double magnitude = 0.0;
};

struct StreamSpec {
  std::size_t n_classes = 10;
  std::size_t d_in = 32;
  std::size_t d_emb = 16;
  std::size_t samples_per_batch = 64;
  std::size_t n_batches = 40;
  double cluster_spread = 0.25;
  Shift shift;
  double ood_fraction = 0.0;
  double prototype_margin = 0.5;
  std::uint64_t seed = 0;
  /// Input-space Gaussian residual added on top of the lifted embedding.
  double residual_scale = 0.05;
  /// Size of the held-out set used for the post-adaptation evaluation pass.
  std::size_t eval_samples = 512;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

inline constexpr std::size_t kUnknownLabel = std::numeric_limits<std::size_t>::max();

struct LabeledBatch {
  Matrix x_raw;
  std::vector<std::size_t> true_labels;  // kUnknownLabel for OOD rows
  std::vector<bool> ood_mask;

  std::size_t size() const { return x_raw.rows(); }
};

/// Everything derived from a StreamSpec: class and outlier prototypes, the frozen projection,
/// the stream itself and a held-out evaluation batch.
struct SyntheticWorld {
  ClassPrototypes protos;
  Matrix ood_protos;
  Matrix w_proj;
  std::vector<LabeledBatch> stream;
  LabeledBatch eval;
};

/// Rejection-samples `count` unit vectors (in addition to `existing`) whose pairwise cosine
/// similarity is at most 1 - margin. Throws after 10^4 rejected candidates.
Matrix sample_separated_directions(std::size_t count, std::size_t dim, double margin, Rng& rng,
                                   const Matrix* existing = nullptr);

ClassPrototypes make_prototypes(const StreamSpec& spec, Rng& rng);

/// Gaussian d_in x d_emb projection with zero column sums, so the per-sample mean removal of
/// the encoder does not change the projected vector.
Matrix make_projection(std::size_t d_in, std::size_t d_emb, Rng& rng);

std::vector<LabeledBatch> generate_stream(const StreamSpec& spec, const ClassPrototypes& protos,
                                          const Matrix& ood_protos, const Matrix& w_proj,
                                          Rng& rng);

/// Builds the full synthetic world from spec.seed with fixed purpose-tagged sub-streams.
SyntheticWorld make_world(const StreamSpec& spec);

}  // namespace cliptta
