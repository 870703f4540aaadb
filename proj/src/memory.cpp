#include "cliptta/memory.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace cliptta {

namespace {

// Ordering inside a bucket: higher confidence first, then newer first.
bool stronger(const MemoryEntry& a, const MemoryEntry& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  return a.age > b.age;
}

}  // namespace

MemoryState::MemoryState(std::size_t num_classes, std::size_t capacity_per_class,
                         std::size_t total_capacity)
    : buckets_(num_classes),
      capacity_per_class_(capacity_per_class),
      total_capacity_(total_capacity == 0 ? num_classes * capacity_per_class : total_capacity) {
  if (num_classes == 0 || capacity_per_class == 0) {
    throw std::invalid_argument("memory needs at least one class and capacity >= 1");
  }
}

MemoryState MemoryState::for_batch(std::size_t num_classes, std::size_t batch_size) {
  const std::size_t per_class = (batch_size + num_classes - 1) / num_classes;
  return MemoryState(num_classes, std::max<std::size_t>(per_class, 1));
}

std::size_t MemoryState::total_stored() const {
  std::size_t n = 0;
  for (const auto& b : buckets_) n += b.size();
  return n;
}

std::optional<std::pair<std::size_t, std::size_t>> MemoryState::global_weakest() const {
  std::optional<std::pair<std::size_t, std::size_t>> weakest;
  for (std::size_t c = 0; c < buckets_.size(); ++c) {
    if (buckets_[c].empty()) continue;
    const std::size_t pos = buckets_[c].size() - 1;
    if (!weakest || stronger(buckets_[weakest->first][weakest->second], buckets_[c][pos])) {
      weakest = {c, pos};
    }
  }
  return weakest;
}

bool MemoryState::insert(const Vector& x_raw, std::size_t pseudo_class, double confidence,
                         std::uint64_t step) {
  if (pseudo_class >= buckets_.size()) {
    throw std::out_of_range("memory_insert: class index " + std::to_string(pseudo_class) +
                            " out of range");
  }
  if (!(confidence >= 0.0 && confidence <= 1.0)) {
    throw std::invalid_argument("memory_insert: confidence must lie in [0, 1]");
  }
  auto& bucket = buckets_[pseudo_class];
  MemoryEntry entry{x_raw, confidence, step};

  if (bucket.size() >= capacity_per_class_) {
    if (!(confidence > bucket.back().confidence)) return false;
    bucket.pop_back();
  } else if (total_stored() >= total_capacity_) {
    auto weakest = global_weakest();
    const auto& victim = buckets_[weakest->first][weakest->second];
    if (!(confidence > victim.confidence)) return false;
    buckets_[weakest->first].pop_back();
  }
  auto pos = std::lower_bound(bucket.begin(), bucket.end(), entry, stronger);
  bucket.insert(pos, std::move(entry));
  return true;
}

std::optional<Matrix> MemoryState::batch(std::size_t n, Rng& rng) const {
  if (n == 0) throw std::invalid_argument("memory_batch: n must be >= 1");
  std::vector<const MemoryEntry*> all;
  for (const auto& b : buckets_)
    for (const auto& e : b) all.push_back(&e);
  if (all.size() < n) return std::nullopt;

  if (all.size() > n) {
    // Partial Fisher-Yates: the first n slots become a uniform sample without replacement.
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t pick = k + rng.uniform_index(all.size() - k);
      std::swap(all[k], all[pick]);
    }
    all.resize(n);
  }
  Matrix out(n, all.front()->x_raw.size());
  for (std::size_t k = 0; k < n; ++k) out.set_row(k, all[k]->x_raw.span());
  return out;
}

}  // namespace cliptta
