#include "sqb/cache.hpp"

namespace sqb {

void block_cache::insert(const key& k, const value_type& v) {
  std::uint64_t weight = v->payload.size() + sizeof(entry);
  std::lock_guard lock(mutex_);
  // Data blocks only get a slot when they are a small share of the budget.
  if (!is_metadata_region(k.region) && weight > budget_ / 8) {
    return;
  }
  if (weight > budget_ || index_.contains(k)) {
    return;
  }
  evict_to(budget_ - weight);
  lru_.push_front(entry{k, v, weight});
  index_.emplace(k, lru_.begin());
  bytes_ += weight;
}

void block_cache::evict_to(std::uint64_t budget) {
  while (bytes_ > budget && !lru_.empty()) {
    auto& victim = lru_.back();
    bytes_ -= victim.weight;
    index_.erase(victim.k);
    lru_.pop_back();
    ++counters_.evictions;
  }
}

void block_cache::count_hit(cache_region r) {
  ++counters_.hits;
  if (is_metadata_region(r)) {
    ++counters_.metadata_hits;
  } else {
    ++counters_.data_hits;
  }
}

void block_cache::count_miss(cache_region r) {
  ++counters_.misses;
  ++counters_.decompressed;
  if (is_metadata_region(r)) {
    ++counters_.metadata_misses;
  } else {
    ++counters_.data_misses;
  }
}

void block_cache::clear() {
  std::lock_guard lock(mutex_);
  lru_.clear();
  index_.clear();
  bytes_ = 0;
}

void block_cache::resize(std::uint64_t budget) {
  std::lock_guard lock(mutex_);
  budget_ = budget;
  evict_to(budget_);
}

cache_stats block_cache::stats() const {
  std::lock_guard lock(mutex_);
  cache_stats s = counters_;
  s.bytes = bytes_;
  s.capacity = budget_;
  s.entries = lru_.size();
  return s;
}

void block_cache::reset_counters() {
  std::lock_guard lock(mutex_);
  counters_ = cache_stats{};
}

std::uint64_t block_cache::budget() const {
  std::lock_guard lock(mutex_);
  return budget_;
}

} // namespace sqb
