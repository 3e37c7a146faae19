#pragma once

#include <optional>
#include <string>
#include <vector>

#include "semwarm/core.hpp"

namespace semwarm {

// Simulated generation payload: a deterministic waveform-like latent signal at
// a low sample rate, plus the semantic embedding and provenance of the clip.
struct SimClip {
    std::vector<float> latent;
    int latent_rate = 200;
    double duration_s = 0.0;
    EmbeddingVector embedding;
    double skip_fraction_used = 0.0;
    uint64_t seed = 0;
};

// Links skip fraction and semantic similarity to output quality: skipping is
// free up to 0.75 * sigma, then quality falls off quadratically. The constants
// define the simulation's ground truth; they are not measured values.
struct QualityModel {
    double q_max = 0.95;
    double penalty_slope = 2.0;
    double noise_scale = 0.02;
    double skip_headroom = 0.75;

    // noise-free quality surface
    double expected_quality(double skip_fraction, double sigma) const;
};

struct SimGenConfig {
    QualityModel quality;
    int latent_rate = 200;
    double step_time_s_per_10s = 0.004;  // simulated seconds per step per 10 s of audio

    double step_time_s(double duration_s) const {
        return step_time_s_per_10s * (duration_s / 10.0);
    }
    double nfe_time_s(int steps, double duration_s) const {
        return steps * step_time_s(duration_s);
    }
};

struct GenerationResult {
    SimClip clip;
    double quality = 0.0;
    double nfe_cost_s = 0.0;
    int steps_executed = 0;
};

// Deterministic latent signal derived from an embedding: a small bank of
// sinusoids whose frequencies, phases and amplitudes come from the vector.
std::vector<float> synth_latent(const EmbeddingVector& emb, double duration_s, int latent_rate);

// Simulated denoising run. With a reference, sigma is the cosine between the
// prompt and the reference clip's embedding; skipping without a reference is
// treated as sigma = 0. The reference duration must already equal the
// requested duration (time alignment happens before generation). The output
// clip's embedding is normalize((1-w) * prompt + w * reference) with
// w = 0.2 * skip_fraction.
GenerationResult generate(const EmbeddingVector& prompt, double duration_s, int total_steps,
                          double skip_fraction, const std::optional<SimClip>& reference,
                          uint64_t seed, const SimGenConfig& cfg);

// Crops a clip to [start, start + length) and reassigns its embedding to the
// matched segment's embedding.
SimClip slice_clip(const SimClip& clip, double start_s, double length_s,
                   const EmbeddingVector& segment_embedding);

// Arm maximizing alpha * s + (1 - alpha) * expected_quality(s, sigma) over the
// full arm grid with noise expectation zero; ties go to the larger skip.
int oracle_optimal_arm(double sigma, const SimGenConfig& cfg, double alpha = 0.47);

// Counterfactual training record: quality observed at every arm for one
// (prompt, cache reference) context, with seeded per-arm noise.
struct TrainingRecord;  // gater.hpp
TrainingRecord counterfactual_record(uint64_t prompt_id, const EmbeddingVector& prompt,
                                     const EmbeddingVector& e_cache, int total_steps,
                                     uint64_t seed, const SimGenConfig& cfg);

// ---- synthetic workload ----

struct WorkloadConfig {
    size_t n_prompts = 1000;
    size_t cluster_count = 16;
    double near_duplicate_rate = 0.9;
    size_t dim = 64;
    double cluster_perturbation = 0.5;    // in-cluster spread (pairwise cos ~ 0.8)
    double duplicate_perturbation = 0.16; // near-duplicate spread (cos >= ~0.95)
    double duration_lo_s = 4.0;
    double duration_hi_s = 12.0;
    double arrival_rate_hz = 1.2;         // Poisson arrivals
    int total_steps = 200;
};

// Prompts drawn from seeded cluster centers (round-robin) with perturbations;
// a near_duplicate_rate fraction instead perturbs an earlier prompt. Durations
// are uniform, arrivals Poisson, everything deterministic per seed.
std::vector<GenerationRequest> synth_workload(const WorkloadConfig& cfg, uint64_t seed);

// ---- trace files: one JSON object per line ----

void save_trace(const std::string& path, const std::vector<GenerationRequest>& trace);

// Rows carry either an inline "prompt_embedding" or a "cluster_ref" into a
// preceding {"clusters": [...]} header line. Malformed rows abort with the
// offending line number.
std::vector<GenerationRequest> load_trace(const std::string& path);

}  // namespace semwarm
