#include "semwarm/index.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_map>

namespace semwarm {

static constexpr double kHardFloorDelta = 1.0 / 16.0;

std::vector<PyramidDescriptor> pyramid_segments(double duration_s, double delta) {
    if (!(delta > 0.0) || delta > 1.0) {
        throw std::invalid_argument("pyramid delta must be in (0, 1]");
    }
    if (!(duration_s > 0.0)) {
        throw std::invalid_argument("pyramid duration must be positive");
    }
    if (delta < kHardFloorDelta) delta = kHardFloorDelta;
    int max_level = static_cast<int>(std::floor(std::log2(1.0 / delta) + 1e-9));

    std::vector<PyramidDescriptor> out;
    for (int level = 0; level <= max_level; ++level) {
        int tiles = 1 << level;
        double len = duration_s / tiles;
        for (int i = 0; i < tiles; ++i) {
            out.push_back(PyramidDescriptor{level, i * len, len});
        }
    }
    return out;
}

EmbeddingVector derive_segment_embedding(const EmbeddingVector& full, uint64_t entry_id,
                                         const PyramidDescriptor& segment, uint64_t seed_base) {
    if (segment.level == 0) return full;
    uint64_t tile = segment.length_s > 0.0
                        ? static_cast<uint64_t>(std::llround(segment.start_s / segment.length_s))
                        : 0;
    Rng rng(derive_seed(seed_base, entry_id, static_cast<uint64_t>(segment.level), tile));
    EmbeddingVector dir = random_unit_vector(full.dim(), rng);
    std::vector<float> v(full.dim());
    for (size_t i = 0; i < full.dim(); ++i) {
        v[i] = static_cast<float>(full.values[i] + 0.1 * dir.values[i]);
    }
    return normalize(v);
}

std::vector<IndexedVector> build_entry_vectors(uint64_t entry_id, const EmbeddingVector& full,
                                               double duration_s, double delta,
                                               uint64_t seed_base) {
    std::vector<IndexedVector> out;
    for (const auto& seg : pyramid_segments(duration_s, delta)) {
        out.push_back(IndexedVector{entry_id, seg,
                                    derive_segment_embedding(full, entry_id, seg, seed_base)});
    }
    return out;
}

static std::vector<EmbeddingVector> kmeans(const std::vector<IndexedVector>& vecs, uint32_t c,
                                           uint64_t seed) {
    Rng rng(seed);
    const size_t n = vecs.size();
    const size_t dim = vecs[0].embedding.dim();

    // contiguous copy for tight inner loops
    std::vector<float> data(n * dim);
    for (size_t i = 0; i < n; ++i) {
        std::copy(vecs[i].embedding.values.begin(), vecs[i].embedding.values.end(),
                  data.begin() + i * dim);
    }
    auto row = [&](size_t i) { return data.data() + i * dim; };
    auto dot_rows = [&](const float* a, const float* b) {
        double s = 0.0;
        for (size_t d = 0; d < dim; ++d) s += static_cast<double>(a[d]) * b[d];
        return s;
    };

    std::vector<float> cent(static_cast<size_t>(c) * dim);
    auto crow = [&](size_t j) { return cent.data() + j * dim; };

    // k-means++ seeding with a running minimum distance
    size_t first = rng.uniform_int(n);
    std::copy(row(first), row(first) + dim, crow(0));
    std::vector<double> d2(n);
    for (size_t i = 0; i < n; ++i) d2[i] = 2.0 - 2.0 * dot_rows(row(i), crow(0));
    for (uint32_t k = 1; k < c; ++k) {
        double total = 0.0;
        for (size_t i = 0; i < n; ++i) total += std::max(0.0, d2[i]);
        size_t pick;
        if (total > 0.0) {
            double target = rng.uniform() * total;
            double acc = 0.0;
            pick = n - 1;
            for (size_t i = 0; i < n; ++i) {
                acc += std::max(0.0, d2[i]);
                if (acc >= target) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.uniform_int(n);
        }
        std::copy(row(pick), row(pick) + dim, crow(k));
        for (size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], 2.0 - 2.0 * dot_rows(row(i), crow(k)));
        }
    }

    // Lloyd iterations on the sphere: assign by max dot, centroid = normalized mean
    std::vector<size_t> assign(n, 0);
    std::vector<double> sums(static_cast<size_t>(c) * dim);
    std::vector<size_t> counts(c);
    for (int iter = 0; iter < 50; ++iter) {
        for (size_t i = 0; i < n; ++i) {
            const float* x = row(i);
            double best = dot_rows(x, crow(0));
            size_t arg = 0;
            for (size_t j = 1; j < c; ++j) {
                double s = dot_rows(x, crow(j));
                if (s > best) {
                    best = s;
                    arg = j;
                }
            }
            assign[i] = arg;
        }

        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (size_t i = 0; i < n; ++i) {
            counts[assign[i]]++;
            const float* x = row(i);
            double* s = sums.data() + assign[i] * dim;
            for (size_t d = 0; d < dim; ++d) s[d] += x[d];
        }

        double max_shift = 0.0;
        for (size_t j = 0; j < c; ++j) {
            std::vector<float> next(dim);
            if (counts[j] == 0) {
                // re-seed an empty cluster with the point farthest from its centroid
                double worst = -2.0;
                size_t pick = 0;
                for (size_t i = 0; i < n; ++i) {
                    double d = 2.0 - 2.0 * dot_rows(row(i), crow(assign[i]));
                    if (d > worst) {
                        worst = d;
                        pick = i;
                    }
                }
                std::copy(row(pick), row(pick) + dim, next.begin());
            } else {
                double nrm = 0.0;
                const double* s = sums.data() + j * dim;
                for (size_t d = 0; d < dim; ++d) nrm += s[d] * s[d];
                nrm = std::sqrt(nrm);
                if (nrm < 1e-12) {
                    size_t pick = rng.uniform_int(n);
                    std::copy(row(pick), row(pick) + dim, next.begin());
                } else {
                    for (size_t d = 0; d < dim; ++d) {
                        next[d] = static_cast<float>(s[d] / nrm);
                    }
                }
            }
            double shift2 = 0.0;
            for (size_t d = 0; d < dim; ++d) {
                double diff = static_cast<double>(next[d]) - crow(j)[d];
                shift2 += diff * diff;
            }
            max_shift = std::max(max_shift, std::sqrt(shift2));
            std::copy(next.begin(), next.end(), crow(j));
        }
        if (max_shift < 1e-4) break;
    }

    std::vector<EmbeddingVector> out;
    out.reserve(c);
    for (size_t j = 0; j < c; ++j) {
        out.emplace_back(std::vector<float>(crow(j), crow(j) + dim));
    }
    return out;
}

IvfIndex IvfIndex::build(std::vector<IndexedVector> vecs, uint32_t c, uint64_t seed,
                         uint32_t nprobe) {
    IvfIndex idx;
    idx.seed_ = seed;
    idx.nprobe_ = nprobe;
    if (c < 1) throw std::invalid_argument("centroid count must be >= 1");
    idx.target_centroids_ = c;
    if (vecs.empty()) {
        idx.centroids_.clear();
        idx.lists_.clear();
        return idx;
    }
    if (vecs.size() < c) {
        warn("fewer vectors (" + std::to_string(vecs.size()) + ") than centroids (" +
             std::to_string(c) + "); reducing C");
        c = static_cast<uint32_t>(vecs.size());
    }

    idx.centroids_ = kmeans(vecs, c, seed);
    idx.lists_.assign(idx.centroids_.size(), {});
    for (auto& v : vecs) {
        idx.entry_vector_counts_[v.entry_id]++;
        idx.lists_[idx.nearest_centroid(v.embedding)].push_back(std::move(v));
    }
    return idx;
}

size_t IvfIndex::nearest_centroid(const EmbeddingVector& v) const {
    double best = dot(v, centroids_[0]);
    size_t arg = 0;
    for (size_t j = 1; j < centroids_.size(); ++j) {
        double s = dot(v, centroids_[j]);
        if (s > best) {
            best = s;
            arg = j;
        }
    }
    return arg;
}

void IvfIndex::insert(std::vector<IndexedVector> vecs) {
    if (vecs.empty()) return;
    if (centroids_.empty()) {
        // first insertion into an empty index: seed a single centroid
        centroids_.push_back(vecs[0].embedding);
        lists_.assign(1, {});
    }
    mutations_since_rebuild_ += vecs.size();
    for (auto& v : vecs) {
        entry_vector_counts_[v.entry_id]++;
        lists_[nearest_centroid(v.embedding)].push_back(std::move(v));
    }
    if (mutations_since_rebuild_ >= rebuild_interval_) rebuild();
}

void IvfIndex::remove(uint64_t entry_id) {
    auto it = entry_vector_counts_.find(entry_id);
    if (it == entry_vector_counts_.end()) {
        warn("remove of unknown entry id " + std::to_string(entry_id));
        return;
    }
    mutations_since_rebuild_ += it->second;
    entry_vector_counts_.erase(it);
    for (auto& list : lists_) {
        list.erase(std::remove_if(list.begin(), list.end(),
                                  [&](const IndexedVector& v) { return v.entry_id == entry_id; }),
                   list.end());
    }
    if (mutations_since_rebuild_ >= rebuild_interval_) rebuild();
}

void IvfIndex::rebuild() {
    mutations_since_rebuild_ = 0;
    rebuild_count_++;
    std::vector<IndexedVector> all;
    all.reserve(total_vectors());
    for (auto& list : lists_) {
        for (auto& v : list) all.push_back(std::move(v));
    }
    if (all.empty()) {
        centroids_.clear();
        lists_.clear();
        return;
    }
    // deterministic input order regardless of list history
    std::sort(all.begin(), all.end(), [](const IndexedVector& a, const IndexedVector& b) {
        if (a.entry_id != b.entry_id) return a.entry_id < b.entry_id;
        if (a.segment.level != b.segment.level) return a.segment.level < b.segment.level;
        return a.segment.start_s < b.segment.start_s;
    });
    uint32_t c = static_cast<uint32_t>(
        std::min<size_t>(all.size(), std::max<uint32_t>(target_centroids_, 1)));
    centroids_ = kmeans(all, c, derive_seed(seed_, rebuild_count_));
    lists_.assign(centroids_.size(), {});
    for (auto& v : all) {
        lists_[nearest_centroid(v.embedding)].push_back(std::move(v));
    }
}

std::vector<SearchHit> IvfIndex::search(const EmbeddingVector& query, size_t k) const {
    return search(query, k, nprobe_);
}

std::vector<SearchHit> IvfIndex::search(const EmbeddingVector& query, size_t k,
                                        uint32_t nprobe) const {
    if (k < 1) throw std::invalid_argument("search k must be >= 1");
    if (centroids_.empty()) return {};
    nprobe = std::min<uint32_t>(nprobe, static_cast<uint32_t>(centroids_.size()));

    std::vector<std::pair<double, size_t>> ranked(centroids_.size());
    for (size_t j = 0; j < centroids_.size(); ++j) {
        ranked[j] = {dot(query, centroids_[j]), j};
    }
    std::partial_sort(ranked.begin(), ranked.begin() + nprobe, ranked.end(),
                      [](const auto& a, const auto& b) {
                          if (a.first != b.first) return a.first > b.first;
                          return a.second < b.second;
                      });

    // best segment per entry among probed lists
    std::unordered_map<uint64_t, SearchHit> best;
    for (uint32_t pi = 0; pi < nprobe; ++pi) {
        for (const auto& v : lists_[ranked[pi].second]) {
            double sim = cosine_similarity(query, v.embedding);
            auto it = best.find(v.entry_id);
            if (it == best.end() || sim > it->second.similarity) {
                best[v.entry_id] = SearchHit{v.entry_id, v.segment, sim};
            }
        }
    }

    std::vector<SearchHit> hits;
    hits.reserve(best.size());
    for (auto& [id, hit] : best) hits.push_back(hit);
    std::sort(hits.begin(), hits.end(), [](const SearchHit& a, const SearchHit& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        return a.entry_id < b.entry_id;
    });
    if (hits.size() > k) hits.resize(k);
    return hits;
}

size_t IvfIndex::total_vectors() const {
    size_t n = 0;
    for (const auto& list : lists_) n += list.size();
    return n;
}

bool IvfIndex::check_consistent() const {
    std::map<uint64_t, size_t> counts;
    for (size_t j = 0; j < lists_.size(); ++j) {
        for (const auto& v : lists_[j]) {
            counts[v.entry_id]++;
            if (nearest_centroid(v.embedding) != j) return false;
        }
    }
    return counts == entry_vector_counts_;
}

static constexpr char kIndexMagic[4] = {'S', 'W', 'I', 'X'};

void IvfIndex::save(const std::string& path) const {
    std::string out;
    out.append(kIndexMagic, 4);
    uint32_t dim = centroids_.empty() ? 0 : static_cast<uint32_t>(centroids_[0].dim());
    binio::write_u32(out, static_cast<uint32_t>(centroids_.size()));
    binio::write_u32(out, nprobe_);
    binio::write_u32(out, dim);
    for (const auto& c : centroids_) {
        for (float f : c.values) binio::write_f32(out, f);
    }
    for (const auto& list : lists_) {
        binio::write_u64(out, list.size());
        for (const auto& v : list) {
            binio::write_u64(out, v.entry_id);
            binio::write_u8(out, static_cast<uint8_t>(v.segment.level));
            binio::write_f32(out, static_cast<float>(v.segment.start_s));
            binio::write_f32(out, static_cast<float>(v.segment.length_s));
            for (float f : v.embedding.values) binio::write_f32(out, f);
        }
    }
    binio::write_file(path, out);
}

IvfIndex IvfIndex::load(const std::string& path) {
    std::string bytes = binio::read_file(path);
    binio::Reader r{reinterpret_cast<const uint8_t*>(bytes.data()),
                    reinterpret_cast<const uint8_t*>(bytes.data()) + bytes.size()};
    r.need(4);
    if (std::memcmp(r.p, kIndexMagic, 4) != 0) {
        throw std::runtime_error("not an index snapshot (bad magic): " + path);
    }
    r.p += 4;
    uint32_t c = r.read_u32();
    IvfIndex idx;
    idx.target_centroids_ = std::max<uint32_t>(1, c);
    idx.nprobe_ = r.read_u32();
    uint32_t dim = r.read_u32();
    idx.centroids_.reserve(c);
    for (uint32_t j = 0; j < c; ++j) {
        std::vector<float> v(dim);
        for (uint32_t d = 0; d < dim; ++d) v[d] = r.read_f32();
        idx.centroids_.emplace_back(std::move(v));
    }
    idx.lists_.resize(c);
    for (uint32_t j = 0; j < c; ++j) {
        uint64_t count = r.read_u64();
        idx.lists_[j].reserve(count);
        for (uint64_t i = 0; i < count; ++i) {
            IndexedVector v;
            v.entry_id = r.read_u64();
            v.segment.level = r.read_u8();
            v.segment.start_s = r.read_f32();
            v.segment.length_s = r.read_f32();
            std::vector<float> e(dim);
            for (uint32_t d = 0; d < dim; ++d) e[d] = r.read_f32();
            v.embedding = EmbeddingVector(std::move(e));
            idx.entry_vector_counts_[v.entry_id]++;
            idx.lists_[j].push_back(std::move(v));
        }
    }
    return idx;
}

}  // namespace semwarm
