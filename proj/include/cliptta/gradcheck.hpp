#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cliptta/gradients.hpp"

namespace cliptta {

struct GradcheckOptions {
  std::size_t configurations = 100;
  std::uint64_t seed = 0;
  std::size_t min_n = 2, max_n = 32;
  std::size_t min_c = 2, max_c = 10;
  std::vector<double> taus = {0.01, 0.1, 1.0};
  double h = 1e-5;
  double tolerance = 1e-6;
  /// Mutation hook: negate the regulariser gradient to prove the suite catches it.
  bool flip_reg_sign = false;
};

struct LossCheck {
  std::string loss;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t configurations = 0;
  std::size_t worst_configuration = 0;
  std::size_t worst_n = 0, worst_c = 0;
  double worst_tau = 0.0;
  bool passed = true;
};

struct GradcheckReport {
  std::vector<LossCheck> losses;
  bool passed = true;
  double seconds = 0.0;
};

/// Embeddings and prototypes for one random configuration. Embeddings sit close to a direction
/// orthogonal to every prototype so the logits stay O(1) whatever tau is.
struct RandomBatch {
  ClassPrototypes protos;
  EmbeddingMatrix z;
  double tau;
};

RandomBatch random_batch(std::size_t n, std::size_t c, double tau, Rng& rng);

/// n embeddings built the same way around existing prototypes (needs dim > num_classes).
EmbeddingMatrix random_embeddings(const ClassPrototypes& protos, std::size_t n, double tau,
                                  Rng& rng);

/// Analytic vs central-difference gradients for every objective over seeded random
/// configurations: tent, hard_contrastive, scont, scont_symmetric, reg, cliptta, oce_s,
/// oce_alpha, encoder_gamma, encoder_beta.
GradcheckReport run_gradcheck(const GradcheckOptions& opts);

void write_gradcheck_csv(std::ostream& out, const GradcheckReport& report);

}  // namespace cliptta
