#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "semwarm/core.hpp"

namespace semwarm {

// Skip-fraction arm set {0.00, 0.05, ..., 0.65}: arm 0 never skips.
constexpr int kNumArms = 14;
constexpr double kMaxSkipFraction = 0.65;

inline double arm_skip_fraction(int arm) {
    if (arm < 0 || arm >= kNumArms) throw std::invalid_argument("arm index out of range");
    return 0.05 * arm;
}

struct BanditContext {
    EmbeddingVector e_prompt;
    EmbeddingVector e_cache;
    int total_steps = 200;
};

// Feature vector: [cos(e_prompt, e_cache), elementwise product pooled to 8
// block sums, T/200, bias].
constexpr size_t kFeatureDim = 11;
std::vector<double> context_features(const BanditContext& ctx);

enum class GaterMode { kExploit, kExplore };

// Per-arm linear value head and linear-softplus uncertainty head.
struct BanditModel {
    size_t feature_dim = kFeatureDim;
    std::vector<float> theta;  // value heads, kNumArms x feature_dim row-major
    std::vector<float> psi;    // uncertainty heads, same shape
    double beta = 1.0;         // exploration coefficient
    double learning_rate = 0.01;
    double lambda = 0.1;       // uncertainty-loss weight
    double alpha = 0.47;       // efficiency/quality trade-off in the reward

    static BanditModel zeros(size_t feature_dim = kFeatureDim);

    double value(const std::vector<double>& phi, int arm) const;
    double uncertainty(const std::vector<double>& phi, int arm) const;

    // Snapshot: "SWMB", u32 feature dim, u32 arm count, theta then psi as f32.
    void save(const std::string& path) const;
    static BanditModel load(const std::string& path);
};

// Exploit: argmax value. Explore: argmax value + beta * uncertainty. Ties go
// to the larger skip fraction. Non-finite features fall back to arm 0.
int choose_arm(const BanditModel& model, const BanditContext& ctx, GaterMode mode);
int choose_arm(const BanditModel& model, const std::vector<double>& phi, GaterMode mode);

// r = alpha * skip_fraction(arm) + (1 - alpha) * quality.
double reward(int arm, double quality, double alpha = 0.47);

// Rank-based score in [0,1]: rank/(N-1) with tied values receiving the
// average of their rank positions. Fewer than two values map to 0.5.
std::vector<double> rank_normalize(const std::vector<double>& qualities);

// One prompt's counterfactual observations: quality per evaluated arm.
struct TrainingRecord {
    uint64_t prompt_id = 0;
    BanditContext context;
    std::vector<std::pair<int, double>> arm_qualities;
};

// Featurized view of a record with its variance weight and per-arm rewards.
struct TrainingSample {
    std::vector<double> features;
    double weight = 1.0;
    std::vector<std::pair<int, double>> arm_rewards;
};

struct TrainingBatch {
    std::vector<TrainingSample> samples;
    bool uniform_weight_fallback = false;
};

// Rank-normalizes qualities into rewards and attaches variance weights
// w_p = var_p / (mean var + 1e-8); all-zero variances fall back to w_p = 1.
TrainingBatch prepare_batch(const std::vector<TrainingRecord>& records, double alpha = 0.47);

struct LossGrad {
    double loss = 0.0;
    std::vector<double> d_theta;
    std::vector<double> d_psi;
};

// Mean weighted squared TD-error plus lambda times the uncertainty-head
// regression term, with analytic gradients (checkable by finite differences).
LossGrad batch_loss_and_gradients(const std::vector<double>& theta,
                                  const std::vector<double>& psi, size_t feature_dim,
                                  const TrainingBatch& batch, double lambda);

struct TrainStats {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::vector<double> epoch_mean_loss;
    bool uniform_weight_fallback = false;
};

// Seeded SGD over shuffled (record, arm) pairs.
TrainStats train_offline(BanditModel& model, const std::vector<TrainingRecord>& records,
                         int epochs, Rng& rng);

// Line-delimited JSON records for the offline trainer.
void save_records(const std::string& path, const std::vector<TrainingRecord>& records);
std::vector<TrainingRecord> load_records(const std::string& path);

}  // namespace semwarm
