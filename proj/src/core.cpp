#include "semwarm/core.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

namespace semwarm {

double EmbeddingVector::norm() const {
    double s = 0.0;
    for (float v : values) s += static_cast<double>(v) * v;
    return std::sqrt(s);
}

bool EmbeddingVector::is_unit(double tol) const {
    return !values.empty() && std::fabs(norm() - 1.0) <= tol;
}

double dot(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim()) {
        throw std::invalid_argument("embedding dimension mismatch: " + std::to_string(a.dim()) +
                                    " vs " + std::to_string(b.dim()));
    }
    double s = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) {
        s += static_cast<double>(a.values[i]) * static_cast<double>(b.values[i]);
    }
    return s;
}

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
    double s = dot(a, b);
    if (s > 1.0) s = 1.0;
    if (s < -1.0) s = -1.0;
    return s;
}

EmbeddingVector normalize(const std::vector<float>& raw) {
    double s = 0.0;
    for (float v : raw) s += static_cast<double>(v) * v;
    double n = std::sqrt(s);
    if (!(n > 1e-12)) {
        throw std::invalid_argument("cannot normalize a zero vector");
    }
    std::vector<float> out(raw.size());
    for (size_t i = 0; i < raw.size(); ++i) {
        out[i] = static_cast<float>(raw[i] / n);
    }
    return EmbeddingVector(std::move(out));
}

EmbeddingVector normalize(const EmbeddingVector& v) {
    return normalize(v.values);
}

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b, uint64_t c) {
    uint64_t s = splitmix64(base ^ 0x53454d5741524dULL);  // "SEMWARM"
    s = splitmix64(s ^ a);
    s = splitmix64(s ^ b);
    s = splitmix64(s ^ c);
    return s;
}

uint64_t Rng::uniform_int(uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_int(0)");
    // rejection sampling to avoid modulo bias
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
        x = gen_();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1, u2;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
}

double Rng::exponential(double rate) {
    if (!(rate > 0.0)) throw std::invalid_argument("exponential rate must be positive");
    double u;
    do {
        u = uniform();
    } while (u <= 0.0);
    return -std::log(u) / rate;
}

EmbeddingVector random_unit_vector(size_t dim, Rng& rng) {
    std::vector<float> v(dim);
    for (size_t i = 0; i < dim; ++i) v[i] = static_cast<float>(rng.normal());
    return normalize(v);
}

EmbeddingVector perturb(const EmbeddingVector& v, double scale, Rng& rng) {
    if (scale == 0.0) return normalize(v);
    EmbeddingVector g = random_unit_vector(v.dim(), rng);
    std::vector<float> out(v.dim());
    for (size_t i = 0; i < v.dim(); ++i) {
        out[i] = static_cast<float>(v.values[i] + scale * g.values[i]);
    }
    return normalize(out);
}

ConfigMap ConfigMap::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_string(ss.str());
}

static std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

ConfigMap ConfigMap::parse_string(const std::string& text) {
    ConfigMap cfg;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("malformed config line (expected key=value): " + line);
        }
        cfg.kv_[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
    return cfg;
}

std::string ConfigMap::get_string(const std::string& key, const std::string& dflt) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : it->second;
}

double ConfigMap::get_double(const std::string& key, double dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    return std::stod(it->second);
}

int64_t ConfigMap::get_int(const std::string& key, int64_t dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    return std::stoll(it->second);
}

bool ConfigMap::get_bool(const std::string& key, bool dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw std::runtime_error("bad boolean config value for " + key + ": " + v);
}

// ---- SWEM embedding files ----

static constexpr char kEmbedMagic[4] = {'S', 'W', 'E', 'M'};

void save_embeddings(const std::string& path, const std::vector<EmbeddingVector>& vecs) {
    std::string out;
    out.append(kEmbedMagic, 4);
    uint32_t count = static_cast<uint32_t>(vecs.size());
    uint32_t dim = vecs.empty() ? 0 : static_cast<uint32_t>(vecs[0].dim());
    binio::write_u32(out, count);
    binio::write_u32(out, dim);
    for (const auto& v : vecs) {
        if (v.dim() != dim) throw std::invalid_argument("ragged embedding dimensions");
        for (float f : v.values) binio::write_f32(out, f);
    }
    binio::write_file(path, out);
}

std::vector<EmbeddingVector> load_embeddings(const std::string& path) {
    std::string bytes = binio::read_file(path);
    binio::Reader r{reinterpret_cast<const uint8_t*>(bytes.data()),
                    reinterpret_cast<const uint8_t*>(bytes.data()) + bytes.size()};
    r.need(4);
    if (std::memcmp(r.p, kEmbedMagic, 4) != 0) {
        throw std::runtime_error("not an embedding file (bad magic): " + path);
    }
    r.p += 4;
    uint32_t count = r.read_u32();
    uint32_t dim = r.read_u32();
    std::vector<EmbeddingVector> out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        std::vector<float> v(dim);
        for (uint32_t j = 0; j < dim; ++j) v[j] = r.read_f32();
        out.emplace_back(std::move(v));
    }
    return out;
}

// ---- base64 ----

static const char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const uint8_t* data, size_t len) {
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    for (size_t i = 0; i < len; i += 3) {
        uint32_t v = data[i] << 16;
        if (i + 1 < len) v |= data[i + 1] << 8;
        if (i + 2 < len) v |= data[i + 2];
        out.push_back(kB64[(v >> 18) & 63]);
        out.push_back(kB64[(v >> 12) & 63]);
        out.push_back(i + 1 < len ? kB64[(v >> 6) & 63] : '=');
        out.push_back(i + 2 < len ? kB64[v & 63] : '=');
    }
    return out;
}

std::vector<uint8_t> base64_decode(const std::string& text) {
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::vector<uint8_t> out;
    uint32_t buf = 0;
    int bits = 0;
    for (char c : text) {
        if (c == '=' || c == '\n' || c == '\r') continue;
        int v = val(c);
        if (v < 0) throw std::runtime_error("invalid base64 character");
        buf = (buf << 6) | static_cast<uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<uint8_t>((buf >> bits) & 0xff));
        }
    }
    return out;
}

std::string embedding_to_base64(const EmbeddingVector& v) {
    std::string bytes;
    for (float f : v.values) binio::write_f32(bytes, f);
    return base64_encode(reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size());
}

EmbeddingVector embedding_from_base64(const std::string& text) {
    std::vector<uint8_t> bytes = base64_decode(text);
    if (bytes.size() % 4 != 0) throw std::runtime_error("embedding blob not a multiple of 4 bytes");
    std::vector<float> v(bytes.size() / 4);
    std::memcpy(v.data(), bytes.data(), bytes.size());
    return EmbeddingVector(std::move(v));
}

void warn(const std::string& msg) {
    std::cerr << "[semwarm] warning: " << msg << "\n";
}

// ---- binio ----

namespace binio {

void write_u8(std::string& out, uint8_t v) { out.push_back(static_cast<char>(v)); }

void write_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void write_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void write_f32(std::string& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(out, bits);
}

void write_f64(std::string& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(out, bits);
}

void Reader::need(size_t n) const {
    if (static_cast<size_t>(end - p) < n) throw std::runtime_error("truncated binary stream");
}

uint8_t Reader::read_u8() {
    need(1);
    return *p++;
}

uint32_t Reader::read_u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
    p += 4;
    return v;
}

uint64_t Reader::read_u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    p += 8;
    return v;
}

float Reader::read_f32() {
    uint32_t bits = read_u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

double Reader::read_f64() {
    uint64_t bits = read_u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace binio

}  // namespace semwarm
