#pragma once

#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <random>
#include <unordered_set>
#include <vector>

#include "selmo/core.hpp"
#include "selmo/error.hpp"
#include "selmo/rng.hpp"

namespace selmo {

struct ReplayConfig {
    int capacity = 50000;
    int max_samples = 32;

    void validate() const {
        if (capacity < 1) throw InvalidInput("ReplayConfig: capacity must be >= 1");
        if (max_samples < 1) throw InvalidInput("ReplayConfig: max_samples must be >= 1");
    }
};

/// How a full buffer makes room for a new item.
enum class Eviction {
    uniform_random,  ///< drop one uniformly chosen resident item
    fifo,            ///< drop the oldest resident item
};

/// Bounded store where every item can be handed out at most `max_samples` times.
///
/// Items hitting the cap are evicted right after the sampling call that used them up, so every
/// resident item is eligible. Batches are drawn without replacement; calls are independent.
/// All operations lock an internal mutex, so one writer and one reader may share an instance.
template <typename Item, Eviction Policy>
class CappedReplay {
public:
    struct Entry {
        Item item;
        int sample_count = 0;
    };

    explicit CappedReplay(ReplayConfig config = {}, std::uint64_t seed = 0) : config_(config), rng_(seed) {
        config_.validate();
    }

    const ReplayConfig& config() const noexcept { return config_; }

    std::size_t size() const {
        std::lock_guard lock(mutex_);
        return entries_.size();
    }

    /// Inserts one item with a zero sample count.
    void push(Item item) {
        std::lock_guard lock(mutex_);
        push_locked(std::move(item));
    }

    /// Appends items in order, evicting per policy after each insertion.
    void push(std::vector<Item> items) {
        std::lock_guard lock(mutex_);
        for (auto& item : items) push_locked(std::move(item));
    }

    /// Draws `batch_size` distinct items uniformly. Returns nullopt ("not ready") when fewer are resident.
    std::optional<std::vector<Item>> sample(int batch_size) {
        if (batch_size < 1) throw InvalidInput("sample: batch size must be positive");
        std::lock_guard lock(mutex_);
        const std::size_t n = entries_.size();
        const auto b = static_cast<std::size_t>(batch_size);
        if (n < b) return std::nullopt;

        std::vector<std::size_t> picks = distinct_indices(n, b);
        std::vector<Item> batch;
        batch.reserve(b);
        for (std::size_t idx : picks) {
            batch.push_back(entries_[idx].item);
            ++entries_[idx].sample_count;
        }
        evict_exhausted();
        return batch;
    }

    /// Calls fn(const Entry&) for every resident entry, oldest insertion first for FIFO buffers.
    template <typename Fn>
    void visit(Fn&& fn) const {
        std::lock_guard lock(mutex_);
        for (const auto& e : entries_) fn(e);
    }

    std::vector<Entry> entries() const {
        std::lock_guard lock(mutex_);
        return {entries_.begin(), entries_.end()};
    }

    std::uint64_t total_evicted() const {
        std::lock_guard lock(mutex_);
        return evicted_;
    }

private:
    void push_locked(Item item) {
        if (entries_.size() >= static_cast<std::size_t>(config_.capacity)) {
            if constexpr (Policy == Eviction::fifo) {
                entries_.pop_front();
            } else {
                std::uniform_int_distribution<std::size_t> pick(0, entries_.size() - 1);
                const std::size_t victim = pick(rng_);
                entries_[victim] = std::move(entries_.back());
                entries_.pop_back();
            }
            ++evicted_;
        }
        entries_.push_back(Entry{std::move(item), 0});
    }

    std::vector<std::size_t> distinct_indices(std::size_t n, std::size_t b) {
        std::vector<std::size_t> picks;
        picks.reserve(b);
        if (2 * b >= n) {
            // Partial Fisher-Yates over the full index range.
            std::vector<std::size_t> all(n);
            for (std::size_t i = 0; i < n; ++i) all[i] = i;
            for (std::size_t i = 0; i < b; ++i) {
                std::uniform_int_distribution<std::size_t> pick(i, n - 1);
                std::swap(all[i], all[pick(rng_)]);
                picks.push_back(all[i]);
            }
        } else {
            std::unordered_set<std::size_t> seen;
            std::uniform_int_distribution<std::size_t> pick(0, n - 1);
            while (picks.size() < b) {
                const std::size_t idx = pick(rng_);
                if (seen.insert(idx).second) picks.push_back(idx);
            }
        }
        return picks;
    }

    void evict_exhausted() {
        const int cap = config_.max_samples;
        if constexpr (Policy == Eviction::fifo) {
            for (auto it = entries_.begin(); it != entries_.end();) {
                if (it->sample_count >= cap) {
                    it = entries_.erase(it);
                    ++evicted_;
                } else {
                    ++it;
                }
            }
        } else {
            for (std::size_t i = 0; i < entries_.size();) {
                if (entries_[i].sample_count >= cap) {
                    entries_[i] = std::move(entries_.back());
                    entries_.pop_back();
                    ++evicted_;
                } else {
                    ++i;
                }
            }
        }
    }

    ReplayConfig config_;
    Rng rng_;
    std::deque<Entry> entries_;
    std::uint64_t evicted_ = 0;
    mutable std::mutex mutex_;
};

/// Raw trajectories for world-model training: uniform-random replacement when full.
using ModelReplay = CappedReplay<Trajectory, Eviction::uniform_random>;

/// Curiosity-labeled trajectories for policy training: FIFO replacement so the stalest labels leave first.
using PolicyReplay = CappedReplay<LabeledTrajectory, Eviction::fifo>;

inline void push_model(ModelReplay& buffer, Trajectory traj) { buffer.push(std::move(traj)); }

inline std::optional<std::vector<Trajectory>> sample_model_batch(ModelReplay& buffer, int batch_size) {
    return buffer.sample(batch_size);
}

inline void push_policy(PolicyReplay& buffer, std::vector<LabeledTrajectory> batch) {
    buffer.push(std::move(batch));
}

inline std::optional<std::vector<LabeledTrajectory>> sample_policy_batch(PolicyReplay& buffer, int batch_size) {
    return buffer.sample(batch_size);
}

/// Upper bound on distinct model versions a FIFO policy replay of `capacity` can hold when fed
/// in batches of `batch_size`.
constexpr std::uint64_t staleness_bound(std::uint64_t capacity, std::uint64_t batch_size) {
    return (capacity + batch_size - 1) / batch_size;
}

}  // namespace selmo
