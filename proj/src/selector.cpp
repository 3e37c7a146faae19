#include "semwarm/selector.hpp"

#include <algorithm>
#include <cmath>

namespace semwarm {

void SelectorConfig::validate() const {
    if (top_k < 1) throw std::invalid_argument("selector top_k must be >= 1");
    if (!(temperature > 0.0)) throw std::invalid_argument("selector temperature must be > 0");
    if (quality_threshold < 0.0 || quality_threshold > 1.0) {
        throw std::invalid_argument("selector quality threshold must be in [0, 1]");
    }
}

EmbeddingVector make_negative_embedding(size_t dim) {
    // fixed seeded direction standing in for the "low quality" reference
    Rng rng(derive_seed(0x4e454741ULL, dim));
    return random_unit_vector(dim, rng);
}

static double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

std::vector<CandidateScore> score_candidates(const std::vector<CandidateInput>& candidates,
                                             const EmbeddingVector& prompt,
                                             double requested_duration_s,
                                             const SelectorConfig& cfg) {
    if (candidates.empty()) throw std::invalid_argument("score_candidates: empty candidate list");
    if (!(requested_duration_s > 0.0)) {
        throw std::invalid_argument("requested duration must be positive");
    }
    (void)prompt;  // s_pos arrives precomputed from index search against the same prompt

    std::vector<CandidateScore> scored(candidates.size());
    double max_pos = 0.0;
    double max_neg_dis = 0.0;
    for (size_t i = 0; i < candidates.size(); ++i) {
        auto& s = scored[i];
        s.entry_id = candidates[i].entry_id;
        s.segment = candidates[i].segment;
        s.duration_s = candidates[i].duration_s;
        s.s_pos = clamp01(candidates[i].prompt_similarity);
        s.s_neg = clamp01(cosine_similarity(candidates[i].audio_embedding,
                                            cfg.negative_embedding));
        max_pos = std::max(max_pos, s.s_pos);
        max_neg_dis = std::max(max_neg_dis, 1.0 - s.s_neg);
    }

    const double lo = 0.5 * requested_duration_s;
    const double hi = 1.5 * requested_duration_s;
    for (auto& s : scored) {
        s.a = max_pos > 0.0 ? s.s_pos / max_pos : 0.0;
        s.b = max_neg_dis > 0.0 ? (1.0 - s.s_neg) / max_neg_dis : 0.0;
        bool duration_ok = s.duration_s >= lo && s.duration_s <= hi;
        s.q = duration_ok ? std::min(s.a, s.b) : 0.0;
    }
    return scored;
}

std::optional<size_t> select(const std::vector<CandidateScore>& scored,
                             const SelectorConfig& cfg, Rng& rng) {
    cfg.validate();
    std::vector<size_t> survivors;
    for (size_t i = 0; i < scored.size(); ++i) {
        if (scored[i].q >= cfg.quality_threshold) survivors.push_back(i);
    }
    if (survivors.empty()) return std::nullopt;

    // stable softmax over s_pos
    double max_s = scored[survivors[0]].s_pos;
    for (size_t i : survivors) max_s = std::max(max_s, scored[i].s_pos);
    std::vector<double> weights(survivors.size());
    double total = 0.0;
    for (size_t j = 0; j < survivors.size(); ++j) {
        weights[j] = std::exp((scored[survivors[j]].s_pos - max_s) / cfg.temperature);
        total += weights[j];
    }
    double target = rng.uniform() * total;
    double acc = 0.0;
    for (size_t j = 0; j < survivors.size(); ++j) {
        acc += weights[j];
        if (acc >= target) return survivors[j];
    }
    return survivors.back();
}

}  // namespace semwarm
