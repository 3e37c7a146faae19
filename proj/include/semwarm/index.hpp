#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "semwarm/core.hpp"

namespace semwarm {

// Multi-scale temporal segment of a cached clip. Level 0 is the full clip;
// level l tiles the clip with 2^l equal, non-overlapping segments.
struct PyramidDescriptor {
    int level = 0;
    double start_s = 0.0;
    double length_s = 0.0;
};

struct IndexedVector {
    uint64_t entry_id = 0;
    PyramidDescriptor segment;
    EmbeddingVector embedding;
};

struct SearchHit {
    uint64_t entry_id = 0;
    PyramidDescriptor segment;
    double similarity = 0.0;
};

// Tiles [0, duration) at levels 0..floor(log2(1/delta)); segment length never
// drops below delta * duration. delta is clamped to the 1/16 hard floor.
std::vector<PyramidDescriptor> pyramid_segments(double duration_s, double delta);

// Segment embeddings in simulated mode: the full-clip embedding plus a seeded
// perturbation of norm 0.1, re-normalized. Level 0 returns the full embedding.
EmbeddingVector derive_segment_embedding(const EmbeddingVector& full, uint64_t entry_id,
                                         const PyramidDescriptor& segment, uint64_t seed_base);

// Builds pyramid vectors for one entry (level-0 descriptor first).
std::vector<IndexedVector> build_entry_vectors(uint64_t entry_id, const EmbeddingVector& full,
                                               double duration_s, double delta,
                                               uint64_t seed_base);

// IVF-flat index: spherical k-means coarse quantization, one inverted list per
// centroid, every vector in exactly the list of its nearest centroid.
class IvfIndex {
public:
    IvfIndex() = default;

    // K-means++ initialization with the given seed, then Lloyd iterations until
    // the largest centroid shift is < 1e-4 or 50 iterations. If there are fewer
    // vectors than requested centroids, C is reduced with a warning.
    static IvfIndex build(std::vector<IndexedVector> vecs, uint32_t c, uint64_t seed,
                          uint32_t nprobe = 8);

    // Places each vector into its nearest centroid's list without re-clustering.
    // A full rebuild runs automatically every rebuild_interval mutations.
    void insert(std::vector<IndexedVector> vecs);

    // Removes all of an entry's vectors; unknown ids are a warning no-op.
    void remove(uint64_t entry_id);

    // Top-k over the nprobe nearest centroids' lists, deduplicated to the best
    // segment per entry, sorted by similarity descending, ties to lower id.
    std::vector<SearchHit> search(const EmbeddingVector& query, size_t k) const;
    std::vector<SearchHit> search(const EmbeddingVector& query, size_t k, uint32_t nprobe) const;

    size_t centroid_count() const { return centroids_.size(); }
    size_t total_vectors() const;
    size_t entry_count() const { return entry_vector_counts_.size(); }
    bool contains(uint64_t entry_id) const { return entry_vector_counts_.count(entry_id) > 0; }
    uint32_t nprobe() const { return nprobe_; }
    void set_nprobe(uint32_t n) { nprobe_ = n; }
    void set_rebuild_interval(uint64_t n) { rebuild_interval_ = n; }

    // Every vector in exactly one list, list totals matching the per-entry
    // ledger, and each vector actually nearest to its list's centroid set.
    bool check_consistent() const;

    // Snapshot: "SWIX", u32 C, u32 nprobe, u32 D, centroid block, then
    // per-list records. Loading reproduces identical search results.
    void save(const std::string& path) const;
    static IvfIndex load(const std::string& path);

private:
    void rebuild();
    size_t nearest_centroid(const EmbeddingVector& v) const;

    std::vector<EmbeddingVector> centroids_;
    std::vector<std::vector<IndexedVector>> lists_;
    std::map<uint64_t, size_t> entry_vector_counts_;
    uint32_t target_centroids_ = 1;
    uint32_t nprobe_ = 8;
    uint64_t seed_ = 0;
    uint64_t mutations_since_rebuild_ = 0;
    uint64_t rebuild_interval_ = 1024;
    uint64_t rebuild_count_ = 0;
};

}  // namespace semwarm
