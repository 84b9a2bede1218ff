#pragma once

// Desk-scale group-relative policy optimization of a parametric two-head
// judge on a synthetic preference world. The initial-verdict head plays the
// role of the fast decision; the final-verdict head conditions on the
// features plus a signed prefix feature and is the only head receiving RL
// credit. Training with counterfactual prefix augmentation should drive the
// prefix weight toward zero and the feature weights toward the labels,
// which is exactly self-correction.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "camel/core.hpp"

namespace camel::toy {

struct SyntheticInstance {
    std::string id;
    double latent_margin = 0.0; // sign encodes the label, magnitude the easiness
    std::vector<double> features;
    Label label = Label::a;
};

struct World {
    std::vector<SyntheticInstance> instances;
    int feature_dim = 0;
    std::uint64_t seed = 0;
    double feature_noise = 0.0;
};

// Fixed projection used when mapping latent margins to features. Any head
// aligned with it separates a noiseless world perfectly.
std::span<const double> feature_coefficients();

// Deterministic per (seed, instance index). Labels follow the margin sign;
// features are coefficients * margin plus feature_noise * gaussian.
World generate_world(std::uint64_t seed, int n, double feature_noise);

struct PolicyParams {
    std::vector<double> w_initial;  // initial-verdict head, logit of A from features
    std::vector<double> w_final;    // final-verdict head, feature part
    double prefix_weight = 0.0;     // rho, applied to the signed prefix (+1 for A, -1 for B)
};

struct RolloutSample {
    Verdict v0 = Verdict::A;
    Verdict v1 = Verdict::A;
    double logprob_v1 = 0.0;
    int reward = 0;
};

struct RolloutGroup {
    std::string instance_id;
    std::optional<Verdict> forced_v0;
    std::vector<RolloutSample> samples;
};

// A_i = (r_i - mean(r)) / (std(r) + epsilon), population std.
std::vector<double> group_advantages(std::span<const double> rewards, double epsilon);
std::vector<double> group_advantages(std::span<const int> rewards, double epsilon);

double initial_logit_a(const PolicyParams& params, const SyntheticInstance& instance);
double final_logit_a(const PolicyParams& params, const SyntheticInstance& instance, Verdict v0);

// G samples of v1 from the final head. When forced_v0 is absent, v0 is
// sampled from the initial head per sample.
RolloutGroup rollout(const PolicyParams& params, const SyntheticInstance& instance,
                     std::optional<Verdict> forced_v0, int group_size, std::uint64_t rng_seed);

struct ToyTrainConfig {
    int group_size = 8;
    int batch_size = 8;
    double learning_rate = 0.2;
    double beta = 0.01;   // KL regularization strength
    int steps = 500;
    double epsilon = 1e-8;
    bool augmented = true;
    std::uint64_t seed = 0;
    // Scale of the pre-set initial head (the fast-decision stand-in). The
    // head itself never receives RL credit.
    double initial_head_scale = 0.75;
    // Starting value of the prefix weight. Positive by default: a model
    // continuing its own forced verdict starts biased toward repeating it,
    // which is exactly the echo risk augmentation exists to counteract.
    double initial_prefix_weight = 2.0;
    // Supervised warm-up of the initial head before RL, off by default.
    bool warmup_initial_head = false;
    int warmup_steps = 200;
    double warmup_learning_rate = 0.5;
};

struct TrainStepLog {
    int step = 0;
    double expected_reward = 0.0;
    double kl = 0.0;
    double flip_rate_when_wrong = 0.0;
    double echo_rate_when_right = 0.0;
};

struct TrainResult {
    PolicyParams params;
    PolicyParams reference; // snapshot at step 0
    std::vector<TrainStepLog> log;
};

TrainResult train(const World& world, const ToyTrainConfig& config);

struct SelfCorrectionMetrics {
    double flip_rate_when_wrong = 0.0;  // P(v1 != v0 | forced v0 wrong)
    double echo_rate_when_right = 0.0;  // P(v1 == v0 | forced v0 correct)
    double final_accuracy = 0.0;        // under the forced-prefix mixture
    double initial_accuracy = 0.0;      // expected accuracy of the initial head
};

// Closed-form evaluation on forced prefixes; forced_wrong_fraction sets the
// mixture weight of wrong prefixes in final_accuracy.
SelfCorrectionMetrics self_correction_metrics(const PolicyParams& params, const World& world,
                                              double forced_wrong_fraction);

// CSV: step,expected_reward,kl,flip_rate_when_wrong,echo_rate_when_right
void write_training_log_csv(const std::vector<TrainStepLog>& log,
                            const std::filesystem::path& path);

} // namespace camel::toy
