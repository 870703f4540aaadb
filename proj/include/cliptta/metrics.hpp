#pragma once

#include <optional>
#include <vector>

#include "cliptta/losses.hpp"
#include "cliptta/model.hpp"

namespace cliptta {

/// One row of metrics.csv. Optional fields serialise as empty cells.
struct MetricRecord {
  std::size_t batch_index = 0;
  double accuracy = 0.0;
  /// Entropy of the batch's predicted-class histogram (collapse indicator).
  double mean_prediction_entropy = 0.0;
  /// Mean per-sample entropy of q_i.
  double mean_sample_entropy = 0.0;
  std::size_t unique_predicted_classes = 0;
  std::optional<double> improvement_ratio;
  std::optional<double> deterioration_ratio;
  std::optional<double> auroc;
  std::optional<double> fpr95;
  std::optional<double> mu_id_minus_mu_ood;
  std::optional<double> alpha;
  LossReport losses;
};

/// Metric fields only (loss diagnostics excluded), compared bitwise.
bool same_metrics(const MetricRecord& a, const MetricRecord& b);

/// Fraction of ID rows (id_mask true) where pred == truth. Throws without ID rows.
double accuracy(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& truth,
                const std::vector<bool>& id_mask);

std::vector<std::size_t> predicted_classes(const ProbMatrix& q);

/// Entropy (nats) of the histogram of predicted classes.
double prediction_entropy(const std::vector<std::size_t>& pred, std::size_t num_classes);
double prediction_entropy(const ProbMatrix& q);

std::size_t unique_classes(const std::vector<std::size_t>& pred);

struct ChangeRatios {
  std::optional<double> improvement;    // wrong before, right after / wrong before
  std::optional<double> deterioration;  // right before, wrong after / right before
};

ChangeRatios improvement_deterioration(const std::vector<std::size_t>& pred_before,
                                       const std::vector<std::size_t>& pred_after,
                                       const std::vector<std::size_t>& truth);

struct OodDetection {
  double auroc;
  double fpr95;
};

/// Higher score = more in-distribution. AUROC is the Mann-Whitney statistic with half credit
/// for ties; FPR95 thresholds at the lower-interpolated 5th percentile of the ID scores.
OodDetection auroc_fpr95(const std::vector<double>& scores_id,
                         const std::vector<double>& scores_ood);

struct SeedSummary {
  double mean;
  double half_width;  // 1.96 * sample sd / sqrt(n); 0 for a single seed
};

SeedSummary summarize_seeds(const std::vector<double>& values);

}  // namespace cliptta
