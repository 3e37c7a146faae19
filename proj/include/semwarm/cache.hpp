#pragma once

#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "semwarm/core.hpp"
#include "semwarm/index.hpp"
#include "semwarm/simgen.hpp"

namespace semwarm {

struct CacheEntry {
    uint64_t id = 0;
    SimClip clip;
    double duration_s = 0.0;
    EmbeddingVector full_embedding;
    std::vector<IndexedVector> segment_vectors;  // pyramid, level-0 first
    EmbeddingVector prompt_embedding;            // kept for idle-time refinement
    double quality = 0.0;
    double importance = 0.0;     // decayed running sum of per-reuse S_t * D_t
    double last_update_h = 0.0;
    double admitted_h = 0.0;
    int refinement_attempts = 0;
    size_t reuse_count = 0;
    std::deque<double> recent_skips;  // chosen skip fractions, last 10 reuses
};

struct CacheConfig {
    size_t capacity = 1024;
    double decay_per_hour = 0.9;      // importance decay factor gamma
    double grace_hours = 1.0;         // brand-new entries are eviction-exempt
    double quality_floor = 0.3;       // admission gate
    double pyramid_delta = 0.25;
    uint64_t embedding_seed = 0;      // seeds segment-embedding perturbations
    int refine_regenerations = 3;
    int refine_attempt_cap = 5;
    size_t refine_window = 10;        // reuses considered by the trigger
    double refine_skip_threshold = 0.10;
};

// Regenerates an output for a prompt at full step count; returns the clip and
// its quality. Injected so the cache layer stays backend-agnostic.
using RegenerateFn =
    std::function<std::pair<SimClip, double>(const EmbeddingVector& prompt, double duration_s,
                                             uint64_t seed)>;

// Owns the entry table, the importance ledger and the ANN index. All
// mutations flow through one owner; the serving path posts events and never
// blocks on maintenance.
class CacheManager {
public:
    CacheManager(CacheConfig cfg, uint32_t index_centroids, uint32_t index_nprobe,
                 uint64_t index_seed);

    // Inserts a generated output if it clears the quality floor; returns the
    // new entry id, or nullopt when rejected. Evicts down to capacity.
    std::optional<uint64_t> admit(SimClip clip, EmbeddingVector prompt_embedding, double quality,
                                  double now_h);

    // Decays the entry's importance to now, then adds steps_skipped * duration.
    void record_reuse(uint64_t entry_id, int steps_skipped, double duration_s, double now_h,
                      double chosen_skip_fraction);

    // Removes lowest-importance entries until at or under capacity. Entries
    // younger than the grace window are exempt unless nothing else remains.
    std::vector<uint64_t> evict_if_full(double now_h);

    // Best-of-N regeneration for one entry; consumes one attempt (capped).
    // Returns true if the stored audio was replaced.
    bool refine(uint64_t entry_id, const RegenerateFn& regenerate, Rng& rng);

    // Entries whose recent reuses yielded too little skipping.
    std::vector<uint64_t> refinement_candidates() const;

    double current_importance(uint64_t entry_id, double now_h) const;
    const CacheEntry* find(uint64_t entry_id) const;
    size_t size() const { return entries_.size(); }
    size_t capacity() const { return cfg_.capacity; }
    const IvfIndex& index() const { return index_; }
    IvfIndex& index() { return index_; }
    const std::map<uint64_t, CacheEntry>& entries() const { return entries_; }

    // Ledger and index must reference the same entry-id set.
    bool check_consistent() const;

    // Directory snapshot: line-delimited manifest plus per-entry embedding
    // blob and latent payload.
    void save_snapshot(const std::string& dir) const;
    void load_snapshot(const std::string& dir);

private:
    void index_entry(const CacheEntry& entry);
    double decayed_importance(const CacheEntry& e, double now_h) const;

    CacheConfig cfg_;
    std::map<uint64_t, CacheEntry> entries_;
    IvfIndex index_;
    uint32_t index_centroids_ = 64;
    uint32_t index_nprobe_ = 8;
    uint64_t index_seed_ = 0;
    uint64_t next_id_ = 1;
};

}  // namespace semwarm
