#include "cliptta/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <stdexcept>

namespace cliptta {

namespace {

bool same_bits(const std::optional<double>& a, const std::optional<double>& b) {
  if (a.has_value() != b.has_value()) return false;
  return !a || std::memcmp(&*a, &*b, sizeof(double)) == 0;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

}  // namespace

bool same_metrics(const MetricRecord& a, const MetricRecord& b) {
  return a.batch_index == b.batch_index && same_bits(a.accuracy, b.accuracy) &&
         same_bits(a.mean_prediction_entropy, b.mean_prediction_entropy) &&
         same_bits(a.mean_sample_entropy, b.mean_sample_entropy) &&
         a.unique_predicted_classes == b.unique_predicted_classes &&
         same_bits(a.improvement_ratio, b.improvement_ratio) &&
         same_bits(a.deterioration_ratio, b.deterioration_ratio) && same_bits(a.auroc, b.auroc) &&
         same_bits(a.fpr95, b.fpr95) && same_bits(a.mu_id_minus_mu_ood, b.mu_id_minus_mu_ood);
}

double accuracy(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& truth,
                const std::vector<bool>& id_mask) {
  if (pred.size() != truth.size() || pred.size() != id_mask.size()) {
    throw std::invalid_argument("accuracy: length mismatch");
  }
  std::size_t n = 0, correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!id_mask[i]) continue;
    ++n;
    if (pred[i] == truth[i]) ++correct;
  }
  if (n == 0) throw std::invalid_argument("accuracy: no ID samples");
  return static_cast<double>(correct) / static_cast<double>(n);
}

std::vector<std::size_t> predicted_classes(const ProbMatrix& q) {
  std::vector<std::size_t> pred(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) pred[i] = argmax(q.q.row(i));
  return pred;
}

double prediction_entropy(const std::vector<std::size_t>& pred, std::size_t num_classes) {
  if (pred.empty()) throw std::invalid_argument("prediction_entropy: empty batch");
  std::vector<double> hist(num_classes, 0.0);
  for (std::size_t c : pred) hist.at(c) += 1.0;
  for (double& h : hist) h /= static_cast<double>(pred.size());
  return entropy(hist);
}

double prediction_entropy(const ProbMatrix& q) {
  return prediction_entropy(predicted_classes(q), q.num_classes());
}

std::size_t unique_classes(const std::vector<std::size_t>& pred) {
  return std::set<std::size_t>(pred.begin(), pred.end()).size();
}

ChangeRatios improvement_deterioration(const std::vector<std::size_t>& pred_before,
                                       const std::vector<std::size_t>& pred_after,
                                       const std::vector<std::size_t>& truth) {
  if (pred_before.size() != pred_after.size() || pred_before.size() != truth.size()) {
    throw std::invalid_argument("improvement_deterioration: length mismatch");
  }
  std::size_t wrong_before = 0, fixed = 0, right_before = 0, broken = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool before = pred_before[i] == truth[i];
    const bool after = pred_after[i] == truth[i];
    if (before) {
      ++right_before;
      if (!after) ++broken;
    } else {
      ++wrong_before;
      if (after) ++fixed;
    }
  }
  ChangeRatios r;
  if (wrong_before > 0) r.improvement = static_cast<double>(fixed) / static_cast<double>(wrong_before);
  if (right_before > 0) r.deterioration = static_cast<double>(broken) / static_cast<double>(right_before);
  return r;
}

OodDetection auroc_fpr95(const std::vector<double>& scores_id,
                         const std::vector<double>& scores_ood) {
  if (scores_id.empty() || scores_ood.empty()) {
    throw std::invalid_argument("auroc_fpr95: empty score set");
  }
  std::vector<double> ood = scores_ood;
  std::sort(ood.begin(), ood.end());
  // Count in half-units so the statistic is an exact ratio of integers.
  std::uint64_t half_wins = 0;
  for (double s : scores_id) {
    const auto lo = std::lower_bound(ood.begin(), ood.end(), s);
    const auto hi = std::upper_bound(lo, ood.end(), s);
    half_wins += 2 * static_cast<std::uint64_t>(lo - ood.begin()) +
                 static_cast<std::uint64_t>(hi - lo);
  }
  const double pairs = static_cast<double>(scores_id.size()) * static_cast<double>(ood.size());

  std::vector<double> id = scores_id;
  std::sort(id.begin(), id.end());
  const auto k = static_cast<std::size_t>(std::floor(0.05 * static_cast<double>(id.size() - 1)));
  const double threshold = id[k];
  const auto above = ood.end() - std::lower_bound(ood.begin(), ood.end(), threshold);

  return {0.5 * static_cast<double>(half_wins) / pairs,
          static_cast<double>(above) / static_cast<double>(ood.size())};
}

SeedSummary summarize_seeds(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("summarize_seeds: no values");
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  if (values.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  return {mean, 1.96 * sd / std::sqrt(n)};
}

}  // namespace cliptta
