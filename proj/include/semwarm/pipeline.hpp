#pragma once

#include <memory>
#include <shared_mutex>
#include <string>
#include <vector>

#include "semwarm/cache.hpp"
#include "semwarm/core.hpp"
#include "semwarm/gater.hpp"
#include "semwarm/selector.hpp"
#include "semwarm/simgen.hpp"
#include "semwarm/vocoder.hpp"

namespace semwarm {

// How the skip fraction is chosen on a cache hit.
enum class SkipPolicy {
    kModelExploit,  // trained bandit, argmax value
    kModelExplore,  // trained bandit, optimism bonus
    kRuleBased,     // fixed skip when similarity clears a threshold
    kFixedArm,      // constant arm on every request, hit or miss
};

struct PipelineConfig {
    size_t dim = 64;
    uint64_t seed = 1;

    SelectorConfig selector;  // negative embedding derived from dim at init
    CacheConfig cache;
    uint32_t index_centroids = 64;
    uint32_t index_nprobe = 8;
    uint64_t index_rebuild_interval = 1024;

    SimGenConfig sim;
    StftConfig stft{128, 32};  // latent-rate time stretching

    BanditModel gater;
    SkipPolicy skip_policy = SkipPolicy::kModelExploit;
    double rule_similarity_threshold = 0.35;
    double rule_skip_fraction = 0.55;
    int fixed_arm = 0;

    bool caching_enabled = true;
    bool plain_nn_retrieval = false;  // full-clip nearest neighbor, no gate/sampling
    bool refinement_enabled = true;
    int default_total_steps = 200;

    // every listed default is overridable through key=value config
    static PipelineConfig from_config(const ConfigMap& cfg);
};

struct RunReport {
    std::vector<ServeOutcome> outcomes;
    double total_nfe_s = 0.0;
    double baseline_nfe_s = 0.0;  // every request generated cold
    double speedup = 1.0;         // baseline_nfe_s / total_nfe_s
    double mean_quality = 0.0;
    double mean_reward = 0.0;     // efficiency/quality reward aggregate
    double hit_rate = 0.0;
    double mean_latency_s = 0.0;
    double median_latency_s = 0.0;
    double p95_latency_s = 0.0;
    size_t refinements = 0;

    // Line-delimited per-request records plus one summary record. Contains
    // simulated quantities only, so identical runs serialize identically.
    std::string to_json_lines() const;
};

// Request execution flow: index search -> candidate scoring -> stochastic
// selection -> duration alignment -> skip gating -> warm-started generation,
// with reuse accounting and admission behind the request path. Any stage
// failure degrades to cold generation.
class Pipeline {
public:
    explicit Pipeline(PipelineConfig cfg);

    ServeOutcome handle_request(const GenerationRequest& req);

    // Idle-time maintenance: runs pending refinements. Replay calls this
    // between requests; socket mode calls it from an idle timer.
    size_t run_maintenance();

    // Processes requests in arrival order against a simulated clock.
    RunReport replay(const std::vector<GenerationRequest>& trace);

    const CacheManager& cache() const { return *cache_; }
    CacheManager& cache() { return *cache_; }
    const PipelineConfig& config() const { return cfg_; }

    // Observes (prompt, matched cache embedding, T) on every hit; used to
    // collect contexts for offline gater training.
    using RecordSink = std::function<void(const EmbeddingVector& prompt,
                                          const EmbeddingVector& e_cache, int total_steps)>;
    void set_record_sink(RecordSink sink) { record_sink_ = std::move(sink); }

    double mean_selector_overhead_ms() const;
    double mean_gater_overhead_ms() const;

private:
    struct StagePlan {
        bool hit = false;
        uint64_t entry_id = 0;
        double similarity = 0.0;
        std::optional<SimClip> reference;  // sliced + stretched to L
        std::vector<double> features;
        double selector_ms = 0.0;
    };

    StagePlan plan_request(const GenerationRequest& req, Rng& selector_rng);
    int pick_arm(const StagePlan& plan, int total_steps, double& gater_ms) const;

    PipelineConfig cfg_;
    std::unique_ptr<CacheManager> cache_;
    RecordSink record_sink_;
    Rng maintenance_rng_;
    mutable std::shared_mutex mutex_;
    double selector_ms_total_ = 0.0;
    double gater_ms_total_ = 0.0;
    size_t timed_requests_ = 0;
    size_t refinements_total_ = 0;
};

// Writes a report file; separate from RunReport so callers can stream.
void save_report(const std::string& path, const RunReport& report);

// Ablation harness: runs the named variants over one trace and returns their
// reports keyed by variant name. Known variants: full, no-cache, no-rs,
// rule-skip (alias no-sg).
std::vector<std::pair<std::string, RunReport>> run_ablation(
    const std::vector<GenerationRequest>& trace, const PipelineConfig& base,
    const std::vector<std::string>& variants);

// Formats the ablation comparison table.
std::string ablation_table(const std::vector<std::pair<std::string, RunReport>>& results);

}  // namespace semwarm
