#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace semwarm {

// Unit-norm real vector standing in for a contrastive text/audio embedding.
// All vectors in one deployment share the same dimension.
struct EmbeddingVector {
    std::vector<float> values;

    EmbeddingVector() = default;
    explicit EmbeddingVector(std::vector<float> v) : values(std::move(v)) {}

    size_t dim() const { return values.size(); }
    double norm() const;
    bool is_unit(double tol = 1e-6) const;
};

// Dot product accumulated in double. Throws on dimension mismatch.
double dot(const EmbeddingVector& a, const EmbeddingVector& b);

// Equals the dot product for unit vectors; result clamped to [-1, 1].
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

// Unit-normalize a raw vector. Throws on (near-)zero input.
EmbeddingVector normalize(const std::vector<float>& raw);
EmbeddingVector normalize(const EmbeddingVector& v);

struct AudioClip {
    std::vector<float> samples;  // in [-1, 1]
    int sample_rate = 16000;

    double duration() const {
        return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
    }
};

struct GenerationRequest {
    uint64_t id = 0;
    EmbeddingVector prompt_embedding;
    double duration_s = 0.0;   // requested duration L, seconds
    int total_steps = 200;     // denoising step budget T
    double arrival_time_s = 0.0;
};

// Per-request serving record; the unit of all pipeline metrics.
struct ServeOutcome {
    uint64_t request_id = 0;
    bool cache_hit = false;
    std::optional<uint64_t> entry_id;
    int arm_index = 0;
    int steps_skipped = 0;         // round(skip_fraction * T), in [0, T)
    double quality = 0.0;          // in [0, 1]
    double nfe_cost_s = 0.0;       // simulated denoising time, seconds
    double sim_latency_s = 0.0;    // queueing + service in the simulated clock
    double skip_fraction = 0.0;
    double reference_similarity = 0.0;
    bool fallback = false;         // a stage failed and we degraded to cold generation
    std::optional<uint64_t> admitted_entry_id;
};

uint64_t splitmix64(uint64_t x);

// Stable seed derivation for per-request / per-segment substreams.
uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0, uint64_t c = 0);

// Deterministic RNG. Distribution helpers are hand-rolled on top of the
// mt19937_64 bit stream so results do not depend on the C++ library's
// distribution implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }
    // uniform in [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // uniform integer in [0, n)
    uint64_t uniform_int(uint64_t n);
    // standard normal via Box-Muller
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }
    // exponential with given rate (inter-arrival gaps of a Poisson process)
    double exponential(double rate);

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Random unit vector, components drawn i.i.d. normal then normalized.
EmbeddingVector random_unit_vector(size_t dim, Rng& rng);

// normalize(v + scale * g) for a random unit direction g.
EmbeddingVector perturb(const EmbeddingVector& v, double scale, Rng& rng);

// ---- line-oriented key=value configuration ----

class ConfigMap {
public:
    ConfigMap() = default;
    static ConfigMap parse_file(const std::string& path);
    static ConfigMap parse_string(const std::string& text);

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }
    bool has(const std::string& key) const { return kv_.count(key) > 0; }
    std::string get_string(const std::string& key, const std::string& dflt) const;
    double get_double(const std::string& key, double dflt) const;
    int64_t get_int(const std::string& key, int64_t dflt) const;
    bool get_bool(const std::string& key, bool dflt) const;
    const std::map<std::string, std::string>& entries() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;
};

// ---- embedding files: "SWEM", u32 count, u32 dim, count*dim f32 LE ----

void save_embeddings(const std::string& path, const std::vector<EmbeddingVector>& vecs);
std::vector<EmbeddingVector> load_embeddings(const std::string& path);

// ---- base64 (for embeddings carried in trace/record lines) ----

std::string base64_encode(const uint8_t* data, size_t len);
std::vector<uint8_t> base64_decode(const std::string& text);
std::string embedding_to_base64(const EmbeddingVector& v);
EmbeddingVector embedding_from_base64(const std::string& text);

// Warnings go to stderr; never fatal.
void warn(const std::string& msg);

// ---- little-endian binary stream helpers ----

namespace binio {
void write_u8(std::string& out, uint8_t v);
void write_u32(std::string& out, uint32_t v);
void write_u64(std::string& out, uint64_t v);
void write_f32(std::string& out, float v);
void write_f64(std::string& out, double v);

struct Reader {
    const uint8_t* p;
    const uint8_t* end;
    uint8_t read_u8();
    uint32_t read_u32();
    uint64_t read_u64();
    float read_f32();
    double read_f64();
    void need(size_t n) const;
};

void write_file(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);
}  // namespace binio

}  // namespace semwarm
