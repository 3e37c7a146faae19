#include "semwarm/gater.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace semwarm {

std::vector<double> context_features(const BanditContext& ctx) {
    const size_t dim = ctx.e_prompt.dim();
    if (ctx.e_cache.dim() != dim) throw std::invalid_argument("context embedding dim mismatch");
    std::vector<double> phi(kFeatureDim, 0.0);
    phi[0] = cosine_similarity(ctx.e_prompt, ctx.e_cache);
    for (size_t j = 0; j < 8; ++j) {
        size_t lo = j * dim / 8;
        size_t hi = (j + 1) * dim / 8;
        double s = 0.0;
        for (size_t i = lo; i < hi; ++i) {
            s += static_cast<double>(ctx.e_prompt.values[i]) * ctx.e_cache.values[i];
        }
        phi[1 + j] = s;
    }
    phi[9] = static_cast<double>(ctx.total_steps) / 200.0;
    phi[10] = 1.0;
    return phi;
}

static double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

static double sigmoid(double x) {
    if (x > 30.0) return 1.0;
    if (x < -30.0) return std::exp(x);
    return 1.0 / (1.0 + std::exp(-x));
}

BanditModel BanditModel::zeros(size_t feature_dim) {
    BanditModel m;
    m.feature_dim = feature_dim;
    m.theta.assign(kNumArms * feature_dim, 0.0f);
    m.psi.assign(kNumArms * feature_dim, 0.0f);
    return m;
}

static double head_dot(const std::vector<float>& mat, size_t feature_dim, int arm,
                       const std::vector<double>& phi) {
    double s = 0.0;
    const float* row = mat.data() + static_cast<size_t>(arm) * feature_dim;
    for (size_t i = 0; i < feature_dim; ++i) s += static_cast<double>(row[i]) * phi[i];
    return s;
}

double BanditModel::value(const std::vector<double>& phi, int arm) const {
    if (phi.size() != feature_dim) throw std::invalid_argument("feature dim mismatch");
    return head_dot(theta, feature_dim, arm, phi);
}

double BanditModel::uncertainty(const std::vector<double>& phi, int arm) const {
    if (phi.size() != feature_dim) throw std::invalid_argument("feature dim mismatch");
    return softplus(head_dot(psi, feature_dim, arm, phi));
}

int choose_arm(const BanditModel& model, const std::vector<double>& phi, GaterMode mode) {
    for (double v : phi) {
        if (!std::isfinite(v)) {
            warn("non-finite bandit features; falling back to arm 0 (no skip)");
            return 0;
        }
    }
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < kNumArms; ++a) {
        double score = model.value(phi, a);
        if (mode == GaterMode::kExplore) score += model.beta * model.uncertainty(phi, a);
        if (score >= best_score) {  // ties to the larger skip fraction
            best_score = score;
            best = a;
        }
    }
    return best;
}

int choose_arm(const BanditModel& model, const BanditContext& ctx, GaterMode mode) {
    return choose_arm(model, context_features(ctx), mode);
}

double reward(int arm, double quality, double alpha) {
    if (quality < -1e-9 || quality > 1.0 + 1e-9) {
        throw std::invalid_argument("quality must be in [0, 1]");
    }
    quality = std::min(1.0, std::max(0.0, quality));
    return alpha * arm_skip_fraction(arm) + (1.0 - alpha) * quality;
}

std::vector<double> rank_normalize(const std::vector<double>& qualities) {
    const size_t n = qualities.size();
    if (n < 2) return std::vector<double>(n, 0.5);

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return qualities[a] < qualities[b]; });

    std::vector<double> ranks(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && qualities[order[j + 1]] == qualities[order[i]]) ++j;
        double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j));
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }

    std::vector<double> out(n);
    for (size_t k = 0; k < n; ++k) out[k] = ranks[k] / static_cast<double>(n - 1);
    return out;
}

TrainingBatch prepare_batch(const std::vector<TrainingRecord>& records, double alpha) {
    if (records.empty()) throw std::invalid_argument("prepare_batch: no records");

    TrainingBatch batch;
    batch.samples.resize(records.size());
    std::vector<double> variances(records.size());
    double var_sum = 0.0;

    for (size_t p = 0; p < records.size(); ++p) {
        const auto& rec = records[p];
        if (rec.arm_qualities.empty()) {
            throw std::invalid_argument("training record without arm observations");
        }
        auto& sample = batch.samples[p];
        sample.features = context_features(rec.context);

        std::vector<double> qualities(rec.arm_qualities.size());
        for (size_t i = 0; i < rec.arm_qualities.size(); ++i) {
            qualities[i] = rec.arm_qualities[i].second;
        }
        std::vector<double> ranked = rank_normalize(qualities);
        sample.arm_rewards.resize(rec.arm_qualities.size());
        for (size_t i = 0; i < rec.arm_qualities.size(); ++i) {
            int arm = rec.arm_qualities[i].first;
            sample.arm_rewards[i] = {arm, reward(arm, ranked[i], alpha)};
        }

        double mean = std::accumulate(qualities.begin(), qualities.end(), 0.0) / qualities.size();
        double var = 0.0;
        for (double q : qualities) var += (q - mean) * (q - mean);
        var /= static_cast<double>(qualities.size());
        variances[p] = var;
        var_sum += var;
    }

    double mean_var = var_sum / static_cast<double>(records.size());
    if (mean_var == 0.0) {
        warn("all prompt variances are zero; using uniform training weights");
        batch.uniform_weight_fallback = true;
        for (auto& s : batch.samples) s.weight = 1.0;
    } else {
        for (size_t p = 0; p < records.size(); ++p) {
            batch.samples[p].weight = variances[p] / (mean_var + 1e-8);
        }
    }
    return batch;
}

LossGrad batch_loss_and_gradients(const std::vector<double>& theta,
                                  const std::vector<double>& psi, size_t feature_dim,
                                  const TrainingBatch& batch, double lambda) {
    LossGrad out;
    out.d_theta.assign(theta.size(), 0.0);
    out.d_psi.assign(psi.size(), 0.0);

    size_t pairs = 0;
    for (const auto& sample : batch.samples) {
        for (const auto& [arm, r] : sample.arm_rewards) {
            const size_t off = static_cast<size_t>(arm) * feature_dim;
            double zq = 0.0, zu = 0.0;
            for (size_t i = 0; i < feature_dim; ++i) {
                zq += theta[off + i] * sample.features[i];
                zu += psi[off + i] * sample.features[i];
            }
            double delta = zq - r;
            double u = softplus(zu);
            double gap = u - std::fabs(delta);
            out.loss += sample.weight * (delta * delta + lambda * gap * gap);

            double sgn = delta > 0.0 ? 1.0 : (delta < 0.0 ? -1.0 : 0.0);
            double dtheta_coeff = sample.weight * (2.0 * delta - 2.0 * lambda * gap * sgn);
            double dpsi_coeff = sample.weight * 2.0 * lambda * gap * sigmoid(zu);
            for (size_t i = 0; i < feature_dim; ++i) {
                out.d_theta[off + i] += dtheta_coeff * sample.features[i];
                out.d_psi[off + i] += dpsi_coeff * sample.features[i];
            }
            ++pairs;
        }
    }
    if (pairs > 0) {
        double inv = 1.0 / static_cast<double>(pairs);
        out.loss *= inv;
        for (auto& g : out.d_theta) g *= inv;
        for (auto& g : out.d_psi) g *= inv;
    }
    return out;
}

TrainStats train_offline(BanditModel& model, const std::vector<TrainingRecord>& records,
                         int epochs, Rng& rng) {
    if (records.empty()) throw std::invalid_argument("train_offline: no records");
    if (epochs < 1) throw std::invalid_argument("train_offline: epochs must be >= 1");

    TrainingBatch batch = prepare_batch(records, model.alpha);

    std::vector<double> theta(model.theta.begin(), model.theta.end());
    std::vector<double> psi(model.psi.begin(), model.psi.end());
    const size_t fd = model.feature_dim;

    TrainStats stats;
    stats.uniform_weight_fallback = batch.uniform_weight_fallback;
    stats.initial_loss = batch_loss_and_gradients(theta, psi, fd, batch, model.lambda).loss;

    std::vector<std::pair<size_t, size_t>> order;  // (sample index, arm slot)
    for (size_t p = 0; p < batch.samples.size(); ++p) {
        for (size_t i = 0; i < batch.samples[p].arm_rewards.size(); ++i) {
            order.emplace_back(p, i);
        }
    }

    const double lr = model.learning_rate;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        for (size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.uniform_int(i)]);
        }
        double loss_sum = 0.0;
        for (const auto& [p, slot] : order) {
            const auto& sample = batch.samples[p];
            const auto& [arm, r] = sample.arm_rewards[slot];
            const size_t off = static_cast<size_t>(arm) * fd;
            double zq = 0.0, zu = 0.0;
            for (size_t i = 0; i < fd; ++i) {
                zq += theta[off + i] * sample.features[i];
                zu += psi[off + i] * sample.features[i];
            }
            double delta = zq - r;
            double u = softplus(zu);
            double gap = u - std::fabs(delta);
            loss_sum += sample.weight * (delta * delta + model.lambda * gap * gap);

            double sgn = delta > 0.0 ? 1.0 : (delta < 0.0 ? -1.0 : 0.0);
            double dtheta_coeff = sample.weight * (2.0 * delta - 2.0 * model.lambda * gap * sgn);
            double dpsi_coeff = sample.weight * 2.0 * model.lambda * gap * sigmoid(zu);
            for (size_t i = 0; i < fd; ++i) {
                theta[off + i] -= lr * dtheta_coeff * sample.features[i];
                psi[off + i] -= lr * dpsi_coeff * sample.features[i];
            }
        }
        stats.epoch_mean_loss.push_back(loss_sum / static_cast<double>(order.size()));
    }

    for (size_t i = 0; i < theta.size(); ++i) model.theta[i] = static_cast<float>(theta[i]);
    for (size_t i = 0; i < psi.size(); ++i) model.psi[i] = static_cast<float>(psi[i]);
    stats.final_loss = batch_loss_and_gradients(theta, psi, fd, batch, model.lambda).loss;
    return stats;
}

// ---- snapshot ----

static constexpr char kModelMagic[4] = {'S', 'W', 'M', 'B'};

void BanditModel::save(const std::string& path) const {
    std::string out;
    out.append(kModelMagic, 4);
    binio::write_u32(out, static_cast<uint32_t>(feature_dim));
    binio::write_u32(out, kNumArms);
    for (float v : theta) binio::write_f32(out, v);
    for (float v : psi) binio::write_f32(out, v);
    binio::write_file(path, out);
}

BanditModel BanditModel::load(const std::string& path) {
    std::string bytes = binio::read_file(path);
    binio::Reader r{reinterpret_cast<const uint8_t*>(bytes.data()),
                    reinterpret_cast<const uint8_t*>(bytes.data()) + bytes.size()};
    r.need(4);
    if (std::memcmp(r.p, kModelMagic, 4) != 0) {
        throw std::runtime_error("not a bandit model snapshot (bad magic): " + path);
    }
    r.p += 4;
    uint32_t fd = r.read_u32();
    uint32_t arms = r.read_u32();
    if (arms != kNumArms) {
        throw std::runtime_error("model snapshot arm count " + std::to_string(arms) +
                                 " does not match build (" + std::to_string(kNumArms) + ")");
    }
    BanditModel m = BanditModel::zeros(fd);
    for (auto& v : m.theta) v = r.read_f32();
    for (auto& v : m.psi) v = r.read_f32();
    return m;
}

// ---- records I/O ----

void save_records(const std::string& path, const std::vector<TrainingRecord>& records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open records file for writing: " + path);
    for (const auto& rec : records) {
        nlohmann::json j;
        j["prompt_id"] = rec.prompt_id;
        j["e_prompt"] = embedding_to_base64(rec.context.e_prompt);
        j["e_cache"] = embedding_to_base64(rec.context.e_cache);
        j["total_steps"] = rec.context.total_steps;
        std::vector<int> arms;
        std::vector<double> qualities;
        for (const auto& [arm, q] : rec.arm_qualities) {
            arms.push_back(arm);
            qualities.push_back(q);
        }
        j["arms"] = arms;
        j["qualities"] = qualities;
        out << j.dump() << "\n";
    }
}

std::vector<TrainingRecord> load_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open records file: " + path);
    std::vector<TrainingRecord> records;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error("records file " + path + " line " + std::to_string(lineno) +
                                     ": " + e.what());
        }
        TrainingRecord rec;
        rec.prompt_id = j.at("prompt_id").get<uint64_t>();
        rec.context.e_prompt = embedding_from_base64(j.at("e_prompt").get<std::string>());
        rec.context.e_cache = embedding_from_base64(j.at("e_cache").get<std::string>());
        rec.context.total_steps = j.at("total_steps").get<int>();
        auto arms = j.at("arms").get<std::vector<int>>();
        auto qualities = j.at("qualities").get<std::vector<double>>();
        if (arms.size() != qualities.size()) {
            throw std::runtime_error("records file " + path + " line " + std::to_string(lineno) +
                                     ": arms/qualities length mismatch");
        }
        for (size_t i = 0; i < arms.size(); ++i) {
            rec.arm_qualities.emplace_back(arms[i], qualities[i]);
        }
        records.push_back(std::move(rec));
    }
    return records;
}

}  // namespace semwarm
