#pragma once

#include <optional>
#include <vector>

#include "semwarm/core.hpp"
#include "semwarm/index.hpp"

namespace semwarm {

// One scored retrieval candidate. a/b are similarity scores normalized by the
// candidate-set maxima; the gate value q is min(a, b) inside the duration
// window [0.5L, 1.5L] and 0 outside it.
struct CandidateScore {
    uint64_t entry_id = 0;
    PyramidDescriptor segment;
    double s_pos = 0.0;   // similarity of the matched audio embedding to the prompt, clamped to [0,1]
    double s_neg = 0.0;   // similarity to the fixed negative embedding, clamped to [0,1]
    double a = 0.0;       // s_pos / max_j s_pos
    double b = 0.0;       // (1 - s_neg) / max_j (1 - s_neg)
    double q = 0.0;       // gate score
    double duration_s = 0.0;
};

struct SelectorConfig {
    size_t top_k = 8;
    double temperature = 0.05;      // softmax temperature over s_pos
    double quality_threshold = 0.6; // gate admits q >= threshold
    EmbeddingVector negative_embedding;

    void validate() const;
};

// Fixed negative-reference embedding used for s_neg in simulated mode.
EmbeddingVector make_negative_embedding(size_t dim);

// Raw similarity inputs for one candidate, as produced by index search plus a
// lookup of the matched segment's embedding and duration.
struct CandidateInput {
    uint64_t entry_id = 0;
    PyramidDescriptor segment;
    double prompt_similarity = 0.0;       // from index search
    EmbeddingVector audio_embedding;      // matched segment embedding (for s_neg)
    double duration_s = 0.0;              // matched segment duration
};

// Normalized gate scores for the candidate set. Similarities are clamped to
// [0,1] before normalization. If every positive score is zero, all gates are
// zero (the cache-miss path); an empty candidate list is an error.
std::vector<CandidateScore> score_candidates(const std::vector<CandidateInput>& candidates,
                                             const EmbeddingVector& prompt,
                                             double requested_duration_s,
                                             const SelectorConfig& cfg);

// Filters to q >= threshold and samples one survivor with probability
// proportional to exp(s_pos / temperature). No survivor means no warm start.
std::optional<size_t> select(const std::vector<CandidateScore>& scored,
                             const SelectorConfig& cfg, Rng& rng);

}  // namespace semwarm
