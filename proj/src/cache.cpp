#include "semwarm/cache.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace semwarm {

CacheManager::CacheManager(CacheConfig cfg, uint32_t index_centroids, uint32_t index_nprobe,
                           uint64_t index_seed)
    : cfg_(std::move(cfg)), index_centroids_(index_centroids), index_nprobe_(index_nprobe),
      index_seed_(index_seed) {
    if (cfg_.capacity < 1) throw std::invalid_argument("cache capacity must be >= 1");
    index_ = IvfIndex::build({}, index_centroids, index_seed, index_nprobe);
}

void CacheManager::index_entry(const CacheEntry& entry) {
    index_.insert(entry.segment_vectors);
}

double CacheManager::decayed_importance(const CacheEntry& e, double now_h) const {
    double dt = now_h - e.last_update_h;
    if (dt <= 0.0) return e.importance;
    return e.importance * std::pow(cfg_.decay_per_hour, dt);
}

std::optional<uint64_t> CacheManager::admit(SimClip clip, EmbeddingVector prompt_embedding,
                                            double quality, double now_h) {
    if (quality < cfg_.quality_floor) return std::nullopt;

    CacheEntry entry;
    entry.id = next_id_++;
    entry.duration_s = clip.duration_s;
    entry.full_embedding = clip.embedding;
    entry.prompt_embedding = std::move(prompt_embedding);
    entry.quality = quality;
    entry.importance = 0.0;
    entry.last_update_h = now_h;
    entry.admitted_h = now_h;
    entry.segment_vectors = build_entry_vectors(entry.id, entry.full_embedding, entry.duration_s,
                                                cfg_.pyramid_delta, cfg_.embedding_seed);
    entry.clip = std::move(clip);

    uint64_t id = entry.id;
    index_entry(entry);
    entries_.emplace(id, std::move(entry));
    evict_if_full(now_h);
    return id;
}

void CacheManager::record_reuse(uint64_t entry_id, int steps_skipped, double duration_s,
                                double now_h, double chosen_skip_fraction) {
    auto it = entries_.find(entry_id);
    if (it == entries_.end()) {
        warn("record_reuse for unknown entry id " + std::to_string(entry_id));
        return;
    }
    CacheEntry& e = it->second;
    e.importance = decayed_importance(e, now_h);
    e.importance += static_cast<double>(steps_skipped) * duration_s;
    e.last_update_h = now_h;
    e.reuse_count++;
    e.recent_skips.push_back(chosen_skip_fraction);
    while (e.recent_skips.size() > cfg_.refine_window) e.recent_skips.pop_front();
}

std::vector<uint64_t> CacheManager::evict_if_full(double now_h) {
    std::vector<uint64_t> evicted;
    while (entries_.size() > cfg_.capacity) {
        const CacheEntry* victim = nullptr;
        double victim_imp = 0.0;
        bool victim_graced = true;
        for (const auto& [id, e] : entries_) {
            bool graced = now_h - e.admitted_h < cfg_.grace_hours;
            double imp = decayed_importance(e, now_h);
            // non-graced entries always beat graced ones; then lowest
            // importance, oldest last_update, lowest id
            bool better;
            if (victim == nullptr) {
                better = true;
            } else if (graced != victim_graced) {
                better = !graced;
            } else if (imp != victim_imp) {
                better = imp < victim_imp;
            } else if (e.last_update_h != victim->last_update_h) {
                better = e.last_update_h < victim->last_update_h;
            } else {
                better = e.id < victim->id;
            }
            if (better) {
                victim = &e;
                victim_imp = imp;
                victim_graced = graced;
            }
        }
        uint64_t id = victim->id;
        index_.remove(id);
        entries_.erase(id);
        evicted.push_back(id);
    }
    return evicted;
}

bool CacheManager::refine(uint64_t entry_id, const RegenerateFn& regenerate, Rng& rng) {
    auto it = entries_.find(entry_id);
    if (it == entries_.end()) {
        warn("refine for unknown entry id " + std::to_string(entry_id));
        return false;
    }
    CacheEntry& e = it->second;
    if (e.refinement_attempts >= cfg_.refine_attempt_cap) {
        warn("refine attempts exhausted for entry " + std::to_string(entry_id));
        return false;
    }
    e.refinement_attempts++;

    SimClip best_clip;
    double best_quality = -1.0;
    for (int i = 0; i < cfg_.refine_regenerations; ++i) {
        auto [clip, quality] = regenerate(e.prompt_embedding, e.duration_s, rng.next_u64());
        if (quality > best_quality) {
            best_quality = quality;
            best_clip = std::move(clip);
        }
    }
    if (best_quality <= e.quality) return false;

    e.clip = std::move(best_clip);
    e.full_embedding = e.clip.embedding;
    e.quality = best_quality;
    e.segment_vectors = build_entry_vectors(e.id, e.full_embedding, e.duration_s,
                                            cfg_.pyramid_delta, cfg_.embedding_seed);
    index_.remove(e.id);
    index_entry(e);
    e.recent_skips.clear();
    return true;
}

std::vector<uint64_t> CacheManager::refinement_candidates() const {
    std::vector<uint64_t> out;
    for (const auto& [id, e] : entries_) {
        if (e.refinement_attempts >= cfg_.refine_attempt_cap) continue;
        if (e.reuse_count < cfg_.refine_window) continue;
        if (e.recent_skips.size() < cfg_.refine_window) continue;
        double mean = 0.0;
        for (double s : e.recent_skips) mean += s;
        mean /= static_cast<double>(e.recent_skips.size());
        if (mean < cfg_.refine_skip_threshold) out.push_back(id);
    }
    return out;
}

double CacheManager::current_importance(uint64_t entry_id, double now_h) const {
    auto it = entries_.find(entry_id);
    if (it == entries_.end()) throw std::invalid_argument("unknown entry id");
    return decayed_importance(it->second, now_h);
}

const CacheEntry* CacheManager::find(uint64_t entry_id) const {
    auto it = entries_.find(entry_id);
    return it == entries_.end() ? nullptr : &it->second;
}

bool CacheManager::check_consistent() const {
    if (entries_.size() != index_.entry_count()) return false;
    for (const auto& [id, e] : entries_) {
        if (!index_.contains(id)) return false;
    }
    return index_.check_consistent();
}

// ---- snapshot ----

static constexpr char kClipMagic[4] = {'S', 'W', 'S', 'C'};

static void save_clip(const std::string& path, const SimClip& clip) {
    std::string out;
    out.append(kClipMagic, 4);
    binio::write_f64(out, clip.duration_s);
    binio::write_u32(out, static_cast<uint32_t>(clip.latent_rate));
    binio::write_u64(out, clip.seed);
    binio::write_f32(out, static_cast<float>(clip.skip_fraction_used));
    binio::write_u32(out, static_cast<uint32_t>(clip.latent.size()));
    for (float v : clip.latent) binio::write_f32(out, v);
    binio::write_file(path, out);
}

static SimClip load_clip(const std::string& path) {
    std::string bytes = binio::read_file(path);
    binio::Reader r{reinterpret_cast<const uint8_t*>(bytes.data()),
                    reinterpret_cast<const uint8_t*>(bytes.data()) + bytes.size()};
    r.need(4);
    if (std::memcmp(r.p, kClipMagic, 4) != 0) {
        throw std::runtime_error("not a clip payload (bad magic): " + path);
    }
    r.p += 4;
    SimClip clip;
    clip.duration_s = r.read_f64();
    clip.latent_rate = static_cast<int>(r.read_u32());
    clip.seed = r.read_u64();
    clip.skip_fraction_used = r.read_f32();
    uint32_t n = r.read_u32();
    clip.latent.resize(n);
    for (uint32_t i = 0; i < n; ++i) clip.latent[i] = r.read_f32();
    return clip;
}

void CacheManager::save_snapshot(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir + "/manifest.jsonl", std::ios::trunc);
    if (!manifest) throw std::runtime_error("cannot write cache manifest in " + dir);
    for (const auto& [id, e] : entries_) {
        nlohmann::json j;
        j["id"] = e.id;
        j["duration_s"] = e.duration_s;
        j["importance"] = e.importance;
        j["last_update_h"] = e.last_update_h;
        j["admitted_h"] = e.admitted_h;
        j["attempts"] = e.refinement_attempts;
        j["quality"] = e.quality;
        j["reuse_count"] = e.reuse_count;
        j["recent_skips"] = std::vector<double>(e.recent_skips.begin(), e.recent_skips.end());
        j["prompt_embedding"] = embedding_to_base64(e.prompt_embedding);
        nlohmann::json segs = nlohmann::json::array();
        for (const auto& v : e.segment_vectors) {
            segs.push_back({{"level", v.segment.level},
                            {"start_s", v.segment.start_s},
                            {"length_s", v.segment.length_s}});
        }
        j["segments"] = segs;
        manifest << j.dump() << "\n";

        std::vector<EmbeddingVector> blobs;
        blobs.push_back(e.full_embedding);
        for (const auto& v : e.segment_vectors) blobs.push_back(v.embedding);
        blobs.push_back(e.clip.embedding);
        save_embeddings(dir + "/" + std::to_string(e.id) + ".emb", blobs);
        save_clip(dir + "/" + std::to_string(e.id) + ".clip", e.clip);
    }
}

void CacheManager::load_snapshot(const std::string& dir) {
    std::ifstream manifest(dir + "/manifest.jsonl");
    if (!manifest) throw std::runtime_error("cannot open cache manifest in " + dir);
    entries_.clear();
    index_ = IvfIndex::build({}, index_centroids_, index_seed_, index_nprobe_);

    std::string line;
    uint64_t max_id = 0;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        CacheEntry e;
        e.id = j.at("id").get<uint64_t>();
        e.duration_s = j.at("duration_s").get<double>();
        e.importance = j.at("importance").get<double>();
        e.last_update_h = j.at("last_update_h").get<double>();
        e.admitted_h = j.at("admitted_h").get<double>();
        e.refinement_attempts = j.at("attempts").get<int>();
        e.quality = j.at("quality").get<double>();
        e.reuse_count = j.at("reuse_count").get<size_t>();
        for (double s : j.at("recent_skips").get<std::vector<double>>()) {
            e.recent_skips.push_back(s);
        }
        e.prompt_embedding = embedding_from_base64(j.at("prompt_embedding").get<std::string>());

        auto blobs = load_embeddings(dir + "/" + std::to_string(e.id) + ".emb");
        const auto& segs = j.at("segments");
        if (blobs.size() != segs.size() + 2) {
            throw std::runtime_error("embedding blob count mismatch for entry " +
                                     std::to_string(e.id));
        }
        e.full_embedding = blobs.front();
        for (size_t i = 0; i < segs.size(); ++i) {
            IndexedVector v;
            v.entry_id = e.id;
            v.segment.level = segs[i].at("level").get<int>();
            v.segment.start_s = segs[i].at("start_s").get<double>();
            v.segment.length_s = segs[i].at("length_s").get<double>();
            v.embedding = blobs[1 + i];
            e.segment_vectors.push_back(std::move(v));
        }
        e.clip = load_clip(dir + "/" + std::to_string(e.id) + ".clip");
        e.clip.embedding = blobs.back();

        max_id = std::max(max_id, e.id);
        entries_.emplace(e.id, std::move(e));
    }
    next_id_ = max_id + 1;
    // rebuild the index deterministically in ascending id order
    for (const auto& [id, e] : entries_) index_entry(e);
}

}  // namespace semwarm
