#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cliptta/datagen.hpp"
#include "cliptta/losses.hpp"
#include "cliptta/memory.hpp"
#include "cliptta/metrics.hpp"
#include "cliptta/model.hpp"

namespace cliptta {

enum class Method { kCliptta, kTent, kHardContrastive, kZeroShot };

std::string to_string(Method m);
Method parse_method(const std::string& s);
std::string to_string(ScontMode m);
ScontMode parse_scont_mode(const std::string& s);

struct EngineConfig {
  Method method = Method::kCliptta;
  std::size_t batch_size = 64;
  std::size_t inner_iterations = 10;
  double learning_rate = 1e-4;
  double lambda_reg = 1.0;
  double lambda_oce = 1.0;
  /// false drops the OCE term altogether: open-set filtering with the plain CLIPTTA objective.
  bool oce_enabled = true;
  bool open_set = false;
  double alpha_init = 0.5;
  double tau = 0.01;
  std::uint64_t seed = 0;
  ScontMode scont_mode = ScontMode::kImageToText;
  bool memory_enabled = true;
  /// Debug only: restore the initial parameters before every batch.
  bool episodic = false;

  void validate() const;
};

struct AdamState {
  Vector m;
  Vector v;
  std::uint64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// One bias-corrected Adam update of `params` in place. Throws NumericError("gradient blow-up")
/// naming the first non-finite entry.
void adam_step(AdamState& adam, std::span<double> params, std::span<const double> grads,
               double lr);

struct AdaptationState {
  EncoderParams params;
  double alpha;
  AdamState adam;
  MemoryState memory;
  std::vector<MetricRecord> history;
  std::uint64_t batches_seen = 0;

  /// Fingerprint of gamma, beta and alpha.
  std::uint64_t parameter_hash() const;
};

/// What one adaptation call did, beyond the state mutation.
struct BatchOutcome {
  LossReport losses;              // evaluated before the first update of the batch
  std::vector<double> loss_trace; // objective value before each inner step
  std::vector<std::size_t> predictions_after;
  std::vector<bool> contributed;  // rows that entered the contrastive batch at the last step
  std::size_t memory_inserts = 0;
};

struct RunResult {
  AdaptationState state;
  std::vector<MetricRecord> history;
  MetricRecord final_eval;
};

class Engine {
 public:
  Engine(EngineConfig cfg, ClassPrototypes protos, Matrix w_proj, double eps_norm = 1e-5);

  const EngineConfig& config() const { return cfg_; }
  const ClassPrototypes& prototypes() const { return protos_; }

  AdaptationState initial_state() const;

  /// Inner adaptation loop on one unlabeled batch; the state carries over to the next call.
  BatchOutcome adapt_batch(AdaptationState& state, const Matrix& batch_raw) const;

  /// Pre-update metrics of `batch` under `params` (labels only feed the metrics).
  MetricRecord evaluate(const AdaptationState& state, const LabeledBatch& batch) const;

  RunResult run_stream(const std::vector<LabeledBatch>& stream, const LabeledBatch& eval) const;

 private:
  EngineConfig cfg_;
  ClassPrototypes protos_;
  EncoderParams initial_params_;
};

/// Engine built from a generated world.
Engine make_engine(const EngineConfig& cfg, const SyntheticWorld& world, double eps_norm = 1e-5);

}  // namespace cliptta
