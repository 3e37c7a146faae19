#include "semwarm/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>

#include "json.hpp"

namespace semwarm {

PipelineConfig PipelineConfig::from_config(const ConfigMap& cfg) {
    PipelineConfig pc;
    pc.dim = static_cast<size_t>(cfg.get_int("dim", 64));
    pc.seed = static_cast<uint64_t>(cfg.get_int("seed", 1));

    pc.selector.top_k = static_cast<size_t>(cfg.get_int("selector.top_k", 8));
    pc.selector.temperature = cfg.get_double("selector.temperature", 0.05);
    pc.selector.quality_threshold = cfg.get_double("selector.quality_threshold", 0.6);

    pc.cache.capacity = static_cast<size_t>(cfg.get_int("cache.capacity", 1024));
    pc.cache.decay_per_hour = cfg.get_double("cache.decay_per_hour", 0.9);
    pc.cache.grace_hours = cfg.get_double("cache.grace_hours", 1.0);
    pc.cache.quality_floor = cfg.get_double("cache.quality_floor", 0.3);
    pc.cache.pyramid_delta = cfg.get_double("index.delta", 0.25);

    pc.index_centroids = static_cast<uint32_t>(cfg.get_int("index.centroids", 64));
    pc.index_nprobe = static_cast<uint32_t>(cfg.get_int("index.nprobe", 8));
    pc.index_rebuild_interval =
        static_cast<uint64_t>(cfg.get_int("index.rebuild_interval", 1024));

    pc.sim.quality.q_max = cfg.get_double("sim.q_max", 0.95);
    pc.sim.quality.penalty_slope = cfg.get_double("sim.penalty_slope", 2.0);
    pc.sim.quality.noise_scale = cfg.get_double("sim.noise_scale", 0.02);
    pc.sim.quality.skip_headroom = cfg.get_double("sim.skip_headroom", 0.75);
    pc.sim.latent_rate = static_cast<int>(cfg.get_int("sim.latent_rate", 200));
    pc.sim.step_time_s_per_10s = cfg.get_double("sim.step_time_s_per_10s", 0.004);

    pc.stft.window_size = static_cast<int>(cfg.get_int("stft.window", 128));
    pc.stft.analysis_hop = static_cast<int>(cfg.get_int("stft.hop", 32));

    std::string policy = cfg.get_string("gater.policy", "exploit");
    if (policy == "exploit") pc.skip_policy = SkipPolicy::kModelExploit;
    else if (policy == "explore") pc.skip_policy = SkipPolicy::kModelExplore;
    else if (policy == "rule") pc.skip_policy = SkipPolicy::kRuleBased;
    else if (policy == "fixed") pc.skip_policy = SkipPolicy::kFixedArm;
    else throw std::runtime_error("unknown gater.policy: " + policy);

    std::string model_path = cfg.get_string("gater.model", "");
    if (!model_path.empty()) pc.gater = BanditModel::load(model_path);
    else pc.gater = BanditModel::zeros();
    pc.gater.beta = cfg.get_double("gater.beta", 1.0);
    pc.gater.alpha = cfg.get_double("gater.alpha", 0.47);
    pc.gater.lambda = cfg.get_double("gater.lambda", 0.1);
    pc.gater.learning_rate = cfg.get_double("gater.learning_rate", 0.01);

    pc.rule_similarity_threshold = cfg.get_double("rule.similarity_threshold", 0.35);
    pc.rule_skip_fraction = cfg.get_double("rule.skip_fraction", 0.55);
    pc.fixed_arm = static_cast<int>(cfg.get_int("fixed.arm", 0));

    pc.caching_enabled = cfg.get_bool("caching_enabled", true);
    pc.plain_nn_retrieval = cfg.get_bool("plain_nn_retrieval", false);
    pc.refinement_enabled = cfg.get_bool("refinement_enabled", true);
    pc.default_total_steps = static_cast<int>(cfg.get_int("total_steps", 200));
    return pc;
}

Pipeline::Pipeline(PipelineConfig cfg)
    : cfg_(std::move(cfg)), maintenance_rng_(derive_seed(cfg_.seed, 0x4d41494eULL)) {
    cfg_.selector.validate();
    cfg_.stft.validate();
    if (cfg_.selector.negative_embedding.dim() != cfg_.dim) {
        cfg_.selector.negative_embedding = make_negative_embedding(cfg_.dim);
    }
    if (cfg_.cache.embedding_seed == 0) {
        cfg_.cache.embedding_seed = derive_seed(cfg_.seed, 0x5345474dULL);
    }
    cache_ = std::make_unique<CacheManager>(cfg_.cache, cfg_.index_centroids, cfg_.index_nprobe,
                                            derive_seed(cfg_.seed, 0x494458ULL));
    cache_->index().set_rebuild_interval(cfg_.index_rebuild_interval);
}

static double ms_since(std::chrono::steady_clock::time_point t0) {
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

// Search, gate, sample and duration-align one candidate. Runs under the read
// lock; everything the generation step needs is copied out.
Pipeline::StagePlan Pipeline::plan_request(const GenerationRequest& req, Rng& selector_rng) {
    StagePlan plan;
    auto t0 = std::chrono::steady_clock::now();

    auto hits = cache_->index().search(req.prompt_embedding, cfg_.selector.top_k);
    if (hits.empty()) {
        plan.selector_ms = ms_since(t0);
        return plan;
    }

    std::optional<SearchHit> chosen;
    if (cfg_.plain_nn_retrieval) {
        // ablation: plain full-clip nearest neighbor, no gate, no sampling
        for (const auto& h : hits) {
            if (h.segment.level != 0) continue;
            if (!chosen || h.similarity > chosen->similarity) chosen = h;
        }
        if (chosen) {
            double ratio = req.duration_s / chosen->segment.length_s;
            if (ratio < 0.4 || ratio > 2.5) chosen.reset();  // vocoder hard bounds
        }
    } else {
        std::vector<CandidateInput> inputs;
        inputs.reserve(hits.size());
        for (const auto& h : hits) {
            const CacheEntry* e = cache_->find(h.entry_id);
            if (e == nullptr) continue;
            CandidateInput in;
            in.entry_id = h.entry_id;
            in.segment = h.segment;
            in.prompt_similarity = h.similarity;
            in.duration_s = h.segment.length_s;
            for (const auto& v : e->segment_vectors) {
                if (v.segment.level == h.segment.level &&
                    std::fabs(v.segment.start_s - h.segment.start_s) < 1e-9) {
                    in.audio_embedding = v.embedding;
                    break;
                }
            }
            if (in.audio_embedding.dim() == 0) continue;
            inputs.push_back(std::move(in));
        }
        if (!inputs.empty()) {
            auto scored = score_candidates(inputs, req.prompt_embedding, req.duration_s,
                                           cfg_.selector);
            auto pick = select(scored, cfg_.selector, selector_rng);
            if (pick) {
                chosen = SearchHit{scored[*pick].entry_id, scored[*pick].segment,
                                   scored[*pick].s_pos};
            }
        }
    }
    plan.selector_ms = ms_since(t0);
    if (!chosen) return plan;

    const CacheEntry* entry = cache_->find(chosen->entry_id);
    if (entry == nullptr) return plan;

    // matched segment -> crop -> phase-vocoder stretch to the requested length
    EmbeddingVector seg_emb = entry->full_embedding;
    for (const auto& v : entry->segment_vectors) {
        if (v.segment.level == chosen->segment.level &&
            std::fabs(v.segment.start_s - chosen->segment.start_s) < 1e-9) {
            seg_emb = v.embedding;
            break;
        }
    }
    SimClip ref = chosen->segment.level == 0
                      ? entry->clip
                      : slice_clip(entry->clip, chosen->segment.start_s,
                                   chosen->segment.length_s, seg_emb);
    ref.embedding = seg_emb;

    AudioClip view;
    view.samples = std::move(ref.latent);
    view.sample_rate = ref.latent_rate;
    AudioClip stretched = time_stretch(view, req.duration_s, cfg_.stft);
    ref.latent = std::move(stretched.samples);
    ref.duration_s = req.duration_s;

    plan.hit = true;
    plan.entry_id = chosen->entry_id;
    plan.similarity = cosine_similarity(req.prompt_embedding, seg_emb);
    plan.features = context_features(
        BanditContext{req.prompt_embedding, seg_emb, req.total_steps});
    plan.reference = std::move(ref);
    return plan;
}

int Pipeline::pick_arm(const StagePlan& plan, int total_steps, double& gater_ms) const {
    (void)total_steps;
    auto t0 = std::chrono::steady_clock::now();
    int arm = 0;
    switch (cfg_.skip_policy) {
        case SkipPolicy::kModelExploit:
            arm = choose_arm(cfg_.gater, plan.features, GaterMode::kExploit);
            break;
        case SkipPolicy::kModelExplore:
            arm = choose_arm(cfg_.gater, plan.features, GaterMode::kExplore);
            break;
        case SkipPolicy::kRuleBased:
            arm = plan.similarity >= cfg_.rule_similarity_threshold
                      ? static_cast<int>(std::llround(cfg_.rule_skip_fraction / 0.05))
                      : 0;
            break;
        case SkipPolicy::kFixedArm:
            arm = cfg_.fixed_arm;
            break;
    }
    gater_ms = ms_since(t0);
    return arm;
}

ServeOutcome Pipeline::handle_request(const GenerationRequest& req) {
    if (!(req.duration_s > 0.0)) throw std::invalid_argument("request duration must be positive");
    if (req.total_steps < 1) throw std::invalid_argument("request step budget must be >= 1");

    ServeOutcome outcome;
    outcome.request_id = req.id;

    Rng selector_rng(derive_seed(cfg_.seed, req.id, 2));
    StagePlan plan;
    double gater_ms = 0.0;
    if (cfg_.caching_enabled) {
        try {
            std::shared_lock lock(mutex_);
            plan = plan_request(req, selector_rng);
        } catch (const std::exception& e) {
            warn("retrieval stage failed (" + std::string(e.what()) +
                 "); falling back to cold generation");
            plan = StagePlan{};
            outcome.fallback = true;
        }
    }

    if (plan.hit && record_sink_) {
        record_sink_(req.prompt_embedding, plan.reference->embedding, req.total_steps);
    }

    int arm = 0;
    if (plan.hit) {
        arm = pick_arm(plan, req.total_steps, gater_ms);
    } else if (cfg_.skip_policy == SkipPolicy::kFixedArm) {
        arm = cfg_.fixed_arm;  // latency held constant even on a miss
    }
    double skip = arm_skip_fraction(arm);

    GenerationResult result;
    uint64_t gen_seed = derive_seed(cfg_.seed, req.id, 3);
    try {
        result = generate(req.prompt_embedding, req.duration_s, req.total_steps, skip,
                          plan.hit ? plan.reference : std::nullopt, gen_seed, cfg_.sim);
    } catch (const std::exception& e) {
        warn("generation with warm start failed (" + std::string(e.what()) +
             "); falling back to cold generation");
        outcome.fallback = true;
        plan.hit = false;
        arm = 0;
        skip = 0.0;
        result = generate(req.prompt_embedding, req.duration_s, req.total_steps, 0.0,
                          std::nullopt, gen_seed, cfg_.sim);
    }

    outcome.cache_hit = plan.hit;
    if (plan.hit) outcome.entry_id = plan.entry_id;
    outcome.arm_index = arm;
    outcome.skip_fraction = skip;
    outcome.steps_skipped = req.total_steps - result.steps_executed;
    outcome.quality = result.quality;
    outcome.nfe_cost_s = result.nfe_cost_s;
    outcome.reference_similarity = plan.similarity;

    if (cfg_.caching_enabled) {
        std::unique_lock lock(mutex_);
        double now_h = req.arrival_time_s / 3600.0;
        if (plan.hit) {
            cache_->record_reuse(plan.entry_id, outcome.steps_skipped, req.duration_s, now_h,
                                 skip);
        }
        outcome.admitted_entry_id =
            cache_->admit(std::move(result.clip), req.prompt_embedding, result.quality, now_h);
    }

    selector_ms_total_ += plan.selector_ms;
    gater_ms_total_ += gater_ms;
    timed_requests_++;
    return outcome;
}

size_t Pipeline::run_maintenance() {
    if (!cfg_.refinement_enabled || !cfg_.caching_enabled) return 0;
    std::unique_lock lock(mutex_);
    auto candidates = cache_->refinement_candidates();
    size_t refined = 0;
    for (uint64_t id : candidates) {
        RegenerateFn regen = [&](const EmbeddingVector& prompt, double duration_s,
                                 uint64_t seed) {
            auto res = generate(prompt, duration_s, cfg_.default_total_steps, 0.0, std::nullopt,
                                seed, cfg_.sim);
            return std::make_pair(std::move(res.clip), res.quality);
        };
        cache_->refine(id, regen, maintenance_rng_);
        refined++;
    }
    refinements_total_ += refined;
    return refined;
}

RunReport Pipeline::replay(const std::vector<GenerationRequest>& trace) {
    RunReport report;
    report.outcomes.reserve(trace.size());

    double prev_arrival = 0.0;
    double busy_until = 0.0;
    for (const auto& req : trace) {
        if (req.arrival_time_s < prev_arrival) {
            throw std::runtime_error("trace arrival times must be monotone non-decreasing");
        }
        prev_arrival = req.arrival_time_s;

        ServeOutcome outcome = handle_request(req);
        double start = std::max(req.arrival_time_s, busy_until);
        double finish = start + outcome.nfe_cost_s;
        busy_until = finish;
        outcome.sim_latency_s = finish - req.arrival_time_s;

        report.total_nfe_s += outcome.nfe_cost_s;
        report.baseline_nfe_s += cfg_.sim.nfe_time_s(req.total_steps, req.duration_s);
        report.outcomes.push_back(std::move(outcome));

        run_maintenance();
    }
    report.refinements = refinements_total_;

    if (!report.outcomes.empty()) {
        std::vector<double> latencies;
        latencies.reserve(report.outcomes.size());
        double q_sum = 0.0, r_sum = 0.0, hits = 0.0;
        for (const auto& o : report.outcomes) {
            latencies.push_back(o.sim_latency_s);
            q_sum += o.quality;
            r_sum += reward(o.arm_index, o.quality, cfg_.gater.alpha);
            hits += o.cache_hit ? 1.0 : 0.0;
        }
        std::sort(latencies.begin(), latencies.end());
        auto pct = [&](double p) {
            size_t idx = static_cast<size_t>(std::ceil(p * latencies.size()));
            return latencies[std::min(latencies.size() - 1, idx > 0 ? idx - 1 : 0)];
        };
        double n = static_cast<double>(report.outcomes.size());
        report.mean_quality = q_sum / n;
        report.mean_reward = r_sum / n;
        report.hit_rate = hits / n;
        double lat_sum = 0.0;
        for (double l : latencies) lat_sum += l;
        report.mean_latency_s = lat_sum / n;
        report.median_latency_s = pct(0.5);
        report.p95_latency_s = pct(0.95);
    }
    report.speedup = report.total_nfe_s > 0.0 ? report.baseline_nfe_s / report.total_nfe_s : 1.0;
    return report;
}

double Pipeline::mean_selector_overhead_ms() const {
    return timed_requests_ > 0 ? selector_ms_total_ / timed_requests_ : 0.0;
}

double Pipeline::mean_gater_overhead_ms() const {
    return timed_requests_ > 0 ? gater_ms_total_ / timed_requests_ : 0.0;
}

std::string RunReport::to_json_lines() const {
    std::string out;
    for (const auto& o : outcomes) {
        nlohmann::json j;
        j["id"] = o.request_id;
        j["cache_hit"] = o.cache_hit;
        if (o.entry_id) j["entry_id"] = *o.entry_id;
        j["arm_index"] = o.arm_index;
        j["steps_skipped"] = o.steps_skipped;
        j["skip_fraction"] = o.skip_fraction;
        j["quality"] = o.quality;
        j["nfe_cost_s"] = o.nfe_cost_s;
        j["sim_latency_s"] = o.sim_latency_s;
        j["similarity"] = o.reference_similarity;
        j["fallback"] = o.fallback;
        if (o.admitted_entry_id) j["admitted_entry_id"] = *o.admitted_entry_id;
        out += j.dump();
        out += "\n";
    }
    nlohmann::json s;
    s["summary"] = true;
    s["requests"] = outcomes.size();
    s["total_nfe_s"] = total_nfe_s;
    s["baseline_nfe_s"] = baseline_nfe_s;
    s["speedup"] = speedup;
    s["mean_quality"] = mean_quality;
    s["mean_reward"] = mean_reward;
    s["hit_rate"] = hit_rate;
    s["mean_latency_s"] = mean_latency_s;
    s["median_latency_s"] = median_latency_s;
    s["p95_latency_s"] = p95_latency_s;
    s["refinements"] = refinements;
    out += s.dump();
    out += "\n";
    return out;
}

void save_report(const std::string& path, const RunReport& report) {
    binio::write_file(path, report.to_json_lines());
}

std::vector<std::pair<std::string, RunReport>> run_ablation(
    const std::vector<GenerationRequest>& trace, const PipelineConfig& base,
    const std::vector<std::string>& variants) {
    std::vector<std::pair<std::string, RunReport>> results;
    for (const auto& name : variants) {
        PipelineConfig cfg = base;
        if (name == "full") {
            // unchanged
        } else if (name == "no-cache") {
            cfg.caching_enabled = false;
        } else if (name == "no-rs") {
            cfg.plain_nn_retrieval = true;
        } else if (name == "rule-skip" || name == "no-sg") {
            cfg.skip_policy = SkipPolicy::kRuleBased;
        } else {
            throw std::runtime_error("unknown ablation variant: " + name);
        }
        Pipeline pipeline(cfg);
        results.emplace_back(name, pipeline.replay(trace));
    }
    return results;
}

std::string ablation_table(const std::vector<std::pair<std::string, RunReport>>& results) {
    char buf[256];
    std::string out;
    snprintf(buf, sizeof(buf), "%-10s %9s %9s %9s %9s %9s\n", "variant", "speedup", "quality",
             "reward", "hit_rate", "p95_lat");
    out += buf;
    for (const auto& [name, r] : results) {
        snprintf(buf, sizeof(buf), "%-10s %9.3f %9.4f %9.4f %9.3f %9.3f\n", name.c_str(),
                 r.speedup, r.mean_quality, r.mean_reward, r.hit_rate, r.p95_latency_s);
        out += buf;
    }
    return out;
}

}  // namespace semwarm
