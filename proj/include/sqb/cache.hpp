#pragma once

#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <unordered_map>

#include "sqb/format.hpp"

namespace sqb {

enum class cache_region : std::uint8_t { inode, directory, fragment, data };

constexpr bool is_metadata_region(cache_region r) noexcept {
  return r == cache_region::inode || r == cache_region::directory;
}

struct cache_stats {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t metadata_hits = 0;
  std::uint64_t metadata_misses = 0;
  std::uint64_t data_hits = 0;
  std::uint64_t data_misses = 0;
  /// Blocks decompressed on behalf of callers (every miss does one).
  std::uint64_t decompressed = 0;
  std::uint64_t evictions = 0;
  std::uint64_t bytes = 0;
  std::uint64_t capacity = 0;
  std::uint64_t entries = 0;

  double metadata_hit_ratio() const noexcept {
    auto total = metadata_hits + metadata_misses;
    return total == 0 ? 0.0 : double(metadata_hits) / double(total);
  }
};

/// Byte-budgeted LRU map from (region, absolute offset) to a decompressed
/// block. Thread-safe; a budget of zero disables storage entirely.
class block_cache {
 public:
  static constexpr std::uint64_t kDefaultBudget = 64ull << 20;

  explicit block_cache(std::uint64_t budget = kDefaultBudget)
      : budget_(budget) {}

  using value_type = std::shared_ptr<const format::metadata_block>;

  /// Returns the cached block or builds it with `load` (outside the lock)
  /// and inserts it when admissible.
  template <class Load>
  value_type get_or_load(cache_region region, std::uint64_t offset,
                         Load&& load) {
    key k{region, offset};
    {
      std::lock_guard lock(mutex_);
      if (auto it = index_.find(k); it != index_.end()) {
        lru_.splice(lru_.begin(), lru_, it->second);
        count_hit(region);
        return it->second->value;
      }
      count_miss(region);
    }
    value_type v = std::make_shared<const format::metadata_block>(load());
    insert(k, v);
    return v;
  }

  void clear();
  void resize(std::uint64_t budget);
  cache_stats stats() const;
  void reset_counters();
  std::uint64_t budget() const;

 private:
  struct key {
    cache_region region;
    std::uint64_t offset;
    bool operator==(const key&) const = default;
  };
  struct key_hash {
    std::size_t operator()(const key& k) const noexcept {
      return std::hash<std::uint64_t>{}(k.offset * 8 +
                                        static_cast<std::uint64_t>(k.region));
    }
  };
  struct entry {
    key k;
    value_type value;
    std::uint64_t weight;
  };

  void insert(const key& k, const value_type& v);
  void evict_to(std::uint64_t budget);
  void count_hit(cache_region r);
  void count_miss(cache_region r);

  mutable std::mutex mutex_;
  std::uint64_t budget_;
  std::uint64_t bytes_ = 0;
  std::list<entry> lru_;
  std::unordered_map<key, std::list<entry>::iterator, key_hash> index_;
  cache_stats counters_;
};

} // namespace sqb
