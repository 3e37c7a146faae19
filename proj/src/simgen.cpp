#include "semwarm/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "semwarm/gater.hpp"

namespace semwarm {

double QualityModel::expected_quality(double skip_fraction, double sigma) const {
    double sigma_pos = std::max(0.0, sigma);
    double excess = std::max(0.0, skip_fraction - skip_headroom * sigma_pos);
    double q = q_max - penalty_slope * excess * excess;
    return std::min(1.0, std::max(0.0, q));
}

std::vector<float> synth_latent(const EmbeddingVector& emb, double duration_s, int latent_rate) {
    if (!(duration_s > 0.0)) throw std::invalid_argument("latent duration must be positive");
    const size_t dim = emb.dim();
    if (dim == 0) throw std::invalid_argument("latent synthesis needs a non-empty embedding");

    // 8 sinusoids parameterized by embedding components
    struct Tone {
        double freq, phase, amp;
    };
    std::vector<Tone> tones(8);
    double amp_sum = 0.0;
    for (size_t k = 0; k < 8; ++k) {
        double a = emb.values[(2 * k) % dim];
        double b = emb.values[(2 * k + 1) % dim];
        double u = std::min(1.0, std::fabs(a) * 4.0);
        tones[k].freq = 10.0 + 70.0 * u;  // well below the latent Nyquist
        tones[k].phase = M_PI * b * 4.0;
        tones[k].amp = 0.25 + std::min(1.0, std::fabs(b) * 4.0);
        amp_sum += tones[k].amp;
    }

    size_t count = static_cast<size_t>(std::llround(duration_s * latent_rate));
    std::vector<float> out(count);
    double scale = amp_sum > 0.0 ? 0.8 / amp_sum : 0.0;
    for (size_t n = 0; n < count; ++n) {
        double t = static_cast<double>(n) / latent_rate;
        double v = 0.0;
        for (const auto& tone : tones) {
            v += tone.amp * std::sin(2.0 * M_PI * tone.freq * t + tone.phase);
        }
        out[n] = static_cast<float>(v * scale);
    }
    return out;
}

GenerationResult generate(const EmbeddingVector& prompt, double duration_s, int total_steps,
                          double skip_fraction, const std::optional<SimClip>& reference,
                          uint64_t seed, const SimGenConfig& cfg) {
    if (!(duration_s > 0.0)) throw std::invalid_argument("generate: duration must be positive");
    if (total_steps < 1) throw std::invalid_argument("generate: total_steps must be >= 1");
    if (skip_fraction < 0.0 || skip_fraction > kMaxSkipFraction + 1e-9) {
        throw std::invalid_argument("generate: skip fraction outside the arm range");
    }
    if (reference) {
        double tol = 0.5 / std::max(1, reference->latent_rate);
        if (std::fabs(reference->duration_s - duration_s) > tol) {
            throw std::invalid_argument(
                "generate: warm-start clip duration does not match the request (pipeline bug)");
        }
    }

    int skipped = static_cast<int>(std::llround(skip_fraction * total_steps));
    int steps = total_steps - skipped;

    Rng rng(derive_seed(seed, 0x51554cULL));  // quality noise stream
    double noise = cfg.quality.noise_scale * rng.normal();

    double quality;
    double sigma = 0.0;
    if (skip_fraction == 0.0) {
        // cold generation: near-maximal quality minus one-sided noise
        quality = std::min(1.0, std::max(0.0, cfg.quality.q_max - std::fabs(noise)));
    } else {
        if (reference) sigma = cosine_similarity(prompt, reference->embedding);
        quality = cfg.quality.expected_quality(skip_fraction, sigma) + noise;
        quality = std::min(1.0, std::max(0.0, quality));
    }

    double w = 0.2 * skip_fraction;
    EmbeddingVector out_emb;
    if (reference && w > 0.0) {
        std::vector<float> mix(prompt.dim());
        for (size_t i = 0; i < prompt.dim(); ++i) {
            mix[i] = static_cast<float>((1.0 - w) * prompt.values[i] +
                                        w * reference->embedding.values[i]);
        }
        out_emb = normalize(mix);
    } else {
        out_emb = normalize(prompt);
    }

    GenerationResult res;
    res.clip.latent = synth_latent(out_emb, duration_s, cfg.latent_rate);
    res.clip.latent_rate = cfg.latent_rate;
    res.clip.duration_s = duration_s;
    res.clip.embedding = std::move(out_emb);
    res.clip.skip_fraction_used = skip_fraction;
    res.clip.seed = seed;
    res.quality = quality;
    res.steps_executed = steps;
    res.nfe_cost_s = cfg.nfe_time_s(steps, duration_s);
    return res;
}

SimClip slice_clip(const SimClip& clip, double start_s, double length_s,
                   const EmbeddingVector& segment_embedding) {
    if (!(length_s > 0.0)) throw std::invalid_argument("slice length must be positive");
    size_t lo = static_cast<size_t>(std::llround(start_s * clip.latent_rate));
    size_t hi = static_cast<size_t>(std::llround((start_s + length_s) * clip.latent_rate));
    lo = std::min(lo, clip.latent.size());
    hi = std::min(hi, clip.latent.size());
    SimClip out;
    out.latent.assign(clip.latent.begin() + lo, clip.latent.begin() + hi);
    out.latent_rate = clip.latent_rate;
    out.duration_s = length_s;
    out.embedding = segment_embedding;
    out.skip_fraction_used = clip.skip_fraction_used;
    out.seed = clip.seed;
    return out;
}

int oracle_optimal_arm(double sigma, const SimGenConfig& cfg, double alpha) {
    int best = 0;
    double best_score = -1.0;
    for (int a = 0; a < kNumArms; ++a) {
        double s = arm_skip_fraction(a);
        double score = alpha * s + (1.0 - alpha) * cfg.quality.expected_quality(s, sigma);
        if (score >= best_score) {
            best_score = score;
            best = a;
        }
    }
    return best;
}

TrainingRecord counterfactual_record(uint64_t prompt_id, const EmbeddingVector& prompt,
                                     const EmbeddingVector& e_cache, int total_steps,
                                     uint64_t seed, const SimGenConfig& cfg) {
    TrainingRecord rec;
    rec.prompt_id = prompt_id;
    rec.context = BanditContext{prompt, e_cache, total_steps};
    double sigma = cosine_similarity(prompt, e_cache);
    for (int a = 0; a < kNumArms; ++a) {
        double s = arm_skip_fraction(a);
        Rng rng(derive_seed(seed, static_cast<uint64_t>(a)));
        double noise = cfg.quality.noise_scale * rng.normal();
        double q = s == 0.0 ? cfg.quality.q_max - std::fabs(noise)
                            : cfg.quality.expected_quality(s, sigma) + noise;
        rec.arm_qualities.emplace_back(a, std::min(1.0, std::max(0.0, q)));
    }
    return rec;
}

std::vector<GenerationRequest> synth_workload(const WorkloadConfig& cfg, uint64_t seed) {
    if (cfg.near_duplicate_rate < 0.0 || cfg.near_duplicate_rate > 1.0) {
        throw std::invalid_argument("near_duplicate_rate must be in [0, 1]");
    }
    if (cfg.cluster_count < 1) throw std::invalid_argument("cluster_count must be >= 1");

    Rng rng(seed);
    std::vector<EmbeddingVector> centers(cfg.cluster_count);
    for (auto& c : centers) c = random_unit_vector(cfg.dim, rng);

    std::vector<GenerationRequest> trace;
    trace.reserve(cfg.n_prompts);
    double clock = 0.0;
    for (size_t i = 0; i < cfg.n_prompts; ++i) {
        GenerationRequest req;
        req.id = i + 1;
        bool dup = i > 0 && rng.uniform() < cfg.near_duplicate_rate;
        if (dup) {
            size_t j = rng.uniform_int(i);
            req.prompt_embedding =
                perturb(trace[j].prompt_embedding, cfg.duplicate_perturbation, rng);
        } else {
            const auto& center = centers[i % cfg.cluster_count];
            req.prompt_embedding = perturb(center, cfg.cluster_perturbation, rng);
        }
        req.duration_s = rng.uniform(cfg.duration_lo_s, cfg.duration_hi_s);
        clock += rng.exponential(cfg.arrival_rate_hz);
        req.arrival_time_s = clock;
        req.total_steps = cfg.total_steps;
        trace.push_back(std::move(req));
    }
    return trace;
}

void save_trace(const std::string& path, const std::vector<GenerationRequest>& trace) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open trace file for writing: " + path);
    for (const auto& req : trace) {
        nlohmann::json j;
        j["id"] = req.id;
        j["arrival_time_s"] = req.arrival_time_s;
        j["duration_s"] = req.duration_s;
        j["total_steps"] = req.total_steps;
        j["prompt_embedding"] = embedding_to_base64(req.prompt_embedding);
        out << j.dump() << "\n";
    }
}

std::vector<GenerationRequest> load_trace(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open trace file: " + path);
    std::vector<GenerationRequest> trace;
    std::vector<EmbeddingVector> clusters;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error("trace " + path + " line " + std::to_string(lineno) + ": " +
                                     e.what());
        }
        try {
            if (j.contains("clusters")) {
                clusters.clear();
                for (const auto& c : j.at("clusters")) {
                    clusters.push_back(embedding_from_base64(c.get<std::string>()));
                }
                continue;
            }
            GenerationRequest req;
            req.id = j.at("id").get<uint64_t>();
            req.arrival_time_s = j.at("arrival_time_s").get<double>();
            req.duration_s = j.at("duration_s").get<double>();
            req.total_steps = j.at("total_steps").get<int>();
            if (j.contains("prompt_embedding")) {
                req.prompt_embedding =
                    embedding_from_base64(j.at("prompt_embedding").get<std::string>());
            } else if (j.contains("cluster_ref")) {
                size_t ref = j.at("cluster_ref").get<size_t>();
                if (ref >= clusters.size()) {
                    throw std::runtime_error("cluster_ref out of range");
                }
                req.prompt_embedding = clusters[ref];
            } else {
                throw std::runtime_error("row has neither prompt_embedding nor cluster_ref");
            }
            if (!(req.duration_s > 0.0) || req.total_steps < 1) {
                throw std::runtime_error("invalid duration or step budget");
            }
            trace.push_back(std::move(req));
        } catch (const std::exception& e) {
            throw std::runtime_error("trace " + path + " line " + std::to_string(lineno) + ": " +
                                     e.what());
        }
    }
    return trace;
}

}  // namespace semwarm
