#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "cliptta/numerics.hpp"

namespace cliptta {

struct MemoryEntry {
  Vector x_raw;
  double confidence;
  std::uint64_t age;  // step at insertion
};

/// Class-wise confident memory. Each bucket keeps its most confident samples, sorted by
/// descending confidence (newer first among equal confidences).
class MemoryState {
 public:
  MemoryState() = default;
  MemoryState(std::size_t num_classes, std::size_t capacity_per_class,
              std::size_t total_capacity = 0);

  /// ceil(batch_size / C) per class, so the whole memory holds about one batch.
  static MemoryState for_batch(std::size_t num_classes, std::size_t batch_size);

  /// Returns true when the sample was stored. A full bucket only accepts a sample whose
  /// confidence exceeds its minimum; the minimum (older on ties) is evicted.
  bool insert(const Vector& x_raw, std::size_t pseudo_class, double confidence,
              std::uint64_t step);

  /// n raw inputs drawn uniformly without replacement, or nullopt while fewer than n are stored.
  std::optional<Matrix> batch(std::size_t n, Rng& rng) const;

  std::size_t num_classes() const { return buckets_.size(); }
  std::size_t capacity_per_class() const { return capacity_per_class_; }
  std::size_t total_capacity() const { return total_capacity_; }
  std::size_t total_stored() const;
  const std::vector<MemoryEntry>& bucket(std::size_t c) const { return buckets_.at(c); }

 private:
  // (class, position) of the entry that would be evicted first across all buckets.
  std::optional<std::pair<std::size_t, std::size_t>> global_weakest() const;

  std::vector<std::vector<MemoryEntry>> buckets_;
  std::size_t capacity_per_class_ = 0;
  std::size_t total_capacity_ = 0;
};

}  // namespace cliptta
