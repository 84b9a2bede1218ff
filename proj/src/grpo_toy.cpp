#include "camel/grpo_toy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "camel/errors.hpp"
#include "camel/format.hpp"

namespace camel::toy {

namespace {

// splitmix64; deterministic across platforms, unlike the standard
// distributions.
struct Rng {
    std::uint64_t state;
    explicit Rng(std::uint64_t seed) : state(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    bool bernoulli(double p) { return uniform() < p; }
    double gaussian() {
        // Box-Muller on two fresh uniforms; the second output is discarded
        // to keep the stream position independent of call patterns.
        double u1 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793 * u2);
    }
};

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
    return seed * 0x100000001b3ULL + salt * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL;
}

constexpr std::array<double, 4> kCoefficients = {0.9, -0.6, 0.35, 1.2};

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double log_sigmoid(double x) {
    if (x >= 0.0) return -std::log1p(std::exp(-x));
    return x - std::log1p(std::exp(x));
}

double dot(std::span<const double> w, std::span<const double> x) {
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * x[i];
    return s;
}

double signed_prefix(Verdict v0) { return v0 == Verdict::A ? 1.0 : -1.0; }

double clamp_prob(double p) { return std::clamp(p, 1e-12, 1.0 - 1e-12); }

double bernoulli_kl(double p, double q) {
    p = clamp_prob(p);
    q = clamp_prob(q);
    return p * std::log(p / q) + (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
}

// P(final verdict correct | forced prefix) under the final head.
double p_correct_given_prefix(const PolicyParams& params, const SyntheticInstance& inst,
                              Verdict v0) {
    const double p_a = sigmoid(final_logit_a(params, inst, v0));
    return inst.label == Label::a ? p_a : 1.0 - p_a;
}

Verdict correct_verdict(const SyntheticInstance& inst) {
    return inst.label == Label::a ? Verdict::A : Verdict::B;
}

// Probability that the sampled initial verdict matches the label.
double p_initial_correct(const PolicyParams& params, const SyntheticInstance& inst) {
    const double p_a = sigmoid(initial_logit_a(params, inst));
    return inst.label == Label::a ? p_a : 1.0 - p_a;
}

// Closed-form step diagnostics. The prefix regime matches the run: forced
// 50/50 when augmenting, sampled from the initial head otherwise.
struct WorldStats {
    double expected_reward = 0.0;
    double kl = 0.0;
    double flip_rate_when_wrong = 0.0;
    double echo_rate_when_right = 0.0;
};

WorldStats world_stats(const PolicyParams& params, const PolicyParams& reference,
                       const World& world, bool augmented_regime) {
    WorldStats stats;
    for (const SyntheticInstance& inst : world.instances) {
        const double p_v0_a =
            augmented_regime ? 0.5 : sigmoid(initial_logit_a(params, inst));
        double p_correct = 0.0;
        double kl = 0.0;
        for (const Verdict v0 : {Verdict::A, Verdict::B}) {
            const double w = v0 == Verdict::A ? p_v0_a : 1.0 - p_v0_a;
            p_correct += w * p_correct_given_prefix(params, inst, v0);
            kl += w * bernoulli_kl(sigmoid(final_logit_a(params, inst, v0)),
                                   sigmoid(final_logit_a(reference, inst, v0)));
        }
        stats.expected_reward += 2.0 * p_correct - 1.0;
        stats.kl += kl;
        const Verdict right = correct_verdict(inst);
        stats.flip_rate_when_wrong += p_correct_given_prefix(params, inst, flip(right));
        stats.echo_rate_when_right += p_correct_given_prefix(params, inst, right);
    }
    const double n = static_cast<double>(world.instances.size());
    stats.expected_reward /= n;
    stats.kl /= n;
    stats.flip_rate_when_wrong /= n;
    stats.echo_rate_when_right /= n;
    return stats;
}

RolloutGroup rollout_with_rng(const PolicyParams& params, const SyntheticInstance& instance,
                              std::optional<Verdict> forced_v0, int group_size, Rng& rng) {
    RolloutGroup group;
    group.instance_id = instance.id;
    group.forced_v0 = forced_v0;
    group.samples.reserve(group_size);
    const double p_v0_a = sigmoid(initial_logit_a(params, instance));
    for (int g = 0; g < group_size; ++g) {
        RolloutSample s;
        s.v0 = forced_v0 ? *forced_v0 : (rng.bernoulli(p_v0_a) ? Verdict::A : Verdict::B);
        const double logit = final_logit_a(params, instance, s.v0);
        const double p_a = sigmoid(logit);
        s.v1 = rng.bernoulli(p_a) ? Verdict::A : Verdict::B;
        s.logprob_v1 = s.v1 == Verdict::A ? log_sigmoid(logit) : log_sigmoid(-logit);
        s.reward = reward(s.v1, instance.label);
        group.samples.push_back(s);
    }
    return group;
}

void check_finite(const PolicyParams& params, int step) {
    auto finite = [](double v) { return std::isfinite(v); };
    for (double v : params.w_final)
        if (!finite(v)) throw DivergenceError("training diverged at step " + std::to_string(step));
    if (!finite(params.prefix_weight))
        throw DivergenceError("training diverged at step " + std::to_string(step));
}

void validate_config(const ToyTrainConfig& c) {
    if (c.group_size < 2) throw Error("train: group_size must be >= 2");
    if (c.batch_size < 1) throw Error("train: batch_size must be >= 1");
    if (c.steps < 0) throw Error("train: steps must be >= 0");
    if (!(c.beta >= 0.0)) throw Error("train: beta must be >= 0");
    if (!std::isfinite(c.learning_rate) || c.learning_rate < 0.0)
        throw Error("train: learning_rate must be finite and >= 0");
    if (!(c.epsilon >= 0.0)) throw Error("train: epsilon must be >= 0");
}

} // namespace

std::span<const double> feature_coefficients() {
    return {kCoefficients.data(), kCoefficients.size()};
}

World generate_world(std::uint64_t seed, int n, double feature_noise) {
    if (n < 1) throw Error("generate_world: n must be >= 1");
    World world;
    world.feature_dim = static_cast<int>(kCoefficients.size());
    world.seed = seed;
    world.feature_noise = feature_noise;
    world.instances.reserve(n);
    for (int i = 0; i < n; ++i) {
        Rng rng(mix(seed, static_cast<std::uint64_t>(i)));
        SyntheticInstance inst;
        inst.id = std::to_string(i);
        const double magnitude = 0.25 + 2.75 * rng.uniform();
        const double sign = rng.uniform() < 0.5 ? 1.0 : -1.0;
        inst.latent_margin = sign * magnitude;
        inst.label = inst.latent_margin > 0.0 ? Label::a : Label::b;
        inst.features.reserve(kCoefficients.size());
        for (const double coeff : kCoefficients)
            inst.features.push_back(coeff * inst.latent_margin + feature_noise * rng.gaussian());
        world.instances.push_back(std::move(inst));
    }
    return world;
}

std::vector<double> group_advantages(std::span<const double> rewards, double epsilon) {
    if (rewards.size() < 2) throw Error("group_advantages: group size must be >= 2");
    const double n = static_cast<double>(rewards.size());
    double mean = 0.0;
    for (const double r : rewards) mean += r;
    mean /= n;
    double var = 0.0;
    for (const double r : rewards) var += (r - mean) * (r - mean);
    var /= n; // population variance
    const double denom = std::sqrt(var) + epsilon;
    std::vector<double> out;
    out.reserve(rewards.size());
    for (const double r : rewards) out.push_back((r - mean) / denom);
    return out;
}

std::vector<double> group_advantages(std::span<const int> rewards, double epsilon) {
    std::vector<double> as_double(rewards.begin(), rewards.end());
    return group_advantages(std::span<const double>(as_double), epsilon);
}

double initial_logit_a(const PolicyParams& params, const SyntheticInstance& instance) {
    return dot(params.w_initial, instance.features);
}

double final_logit_a(const PolicyParams& params, const SyntheticInstance& instance, Verdict v0) {
    return dot(params.w_final, instance.features) + params.prefix_weight * signed_prefix(v0);
}

RolloutGroup rollout(const PolicyParams& params, const SyntheticInstance& instance,
                     std::optional<Verdict> forced_v0, int group_size, std::uint64_t rng_seed) {
    if (group_size < 2) throw Error("rollout: group_size must be >= 2");
    Rng rng(mix(rng_seed, 0x726f6c6cULL));
    return rollout_with_rng(params, instance, forced_v0, group_size, rng);
}

TrainResult train(const World& world, const ToyTrainConfig& config) {
    validate_config(config);
    if (world.instances.empty()) throw Error("train: empty world");
    const std::size_t dim = world.instances.front().features.size();

    TrainResult result;
    result.params.w_initial.assign(kCoefficients.begin(), kCoefficients.end());
    result.params.w_initial.resize(dim, 0.0);
    for (double& w : result.params.w_initial) w *= config.initial_head_scale;
    result.params.w_final.assign(dim, 0.0);
    result.params.prefix_weight = config.initial_prefix_weight;

    if (config.warmup_initial_head) {
        // Supervised warm-up of the initial head on (features -> label).
        for (int it = 0; it < config.warmup_steps; ++it) {
            std::vector<double> grad(dim, 0.0);
            for (const SyntheticInstance& inst : world.instances) {
                const double y = inst.label == Label::a ? 1.0 : 0.0;
                const double err = y - sigmoid(initial_logit_a(result.params, inst));
                for (std::size_t k = 0; k < dim; ++k) grad[k] += err * inst.features[k];
            }
            const double scale =
                config.warmup_learning_rate / static_cast<double>(world.instances.size());
            for (std::size_t k = 0; k < dim; ++k) result.params.w_initial[k] += scale * grad[k];
        }
    }

    result.reference = result.params;
    result.log.reserve(config.steps);

    PolicyParams& params = result.params;
    const PolicyParams& ref = result.reference;

    for (int step = 0; step < config.steps; ++step) {
        Rng rng(mix(config.seed, 0x73746570ULL + static_cast<std::uint64_t>(step)));

        std::vector<double> grad_w(dim, 0.0);
        std::vector<double> kl_grad_w(dim, 0.0);
        double grad_rho = 0.0;
        double kl_grad_rho = 0.0;
        std::int64_t total_samples = 0;

        for (int b = 0; b < config.batch_size; ++b) {
            const std::size_t idx =
                static_cast<std::size_t>(rng.next() % world.instances.size());
            const SyntheticInstance& inst = world.instances[idx];

            // Two groups per instance either way, so the augmented and
            // plain runs consume identical sample budgets.
            const std::array<std::optional<Verdict>, 2> prefixes =
                config.augmented
                    ? std::array<std::optional<Verdict>, 2>{Verdict::A, Verdict::B}
                    : std::array<std::optional<Verdict>, 2>{std::nullopt, std::nullopt};

            for (const auto& forced : prefixes) {
                const RolloutGroup group =
                    rollout_with_rng(params, inst, forced, config.group_size, rng);
                std::vector<double> rewards;
                rewards.reserve(group.samples.size());
                for (const auto& s : group.samples)
                    rewards.push_back(static_cast<double>(s.reward));
                const std::vector<double> advantages =
                    group_advantages(std::span<const double>(rewards), config.epsilon);

                for (std::size_t g = 0; g < group.samples.size(); ++g) {
                    const RolloutSample& s = group.samples[g];
                    const double logit = final_logit_a(params, inst, s.v0);
                    const double p_a = sigmoid(logit);
                    const double match_a = s.v1 == Verdict::A ? 1.0 : 0.0;
                    const double g_logit = (match_a - p_a) * advantages[g];
                    const double prefix = signed_prefix(s.v0);
                    // KL(pi_theta || pi_ref) gradient in logit space.
                    const double ref_logit = final_logit_a(ref, inst, s.v0);
                    const double kl_logit = p_a * (1.0 - p_a) * (logit - ref_logit);
                    for (std::size_t k = 0; k < dim; ++k) {
                        grad_w[k] += g_logit * inst.features[k];
                        kl_grad_w[k] += kl_logit * inst.features[k];
                    }
                    grad_rho += g_logit * prefix;
                    kl_grad_rho += kl_logit * prefix;
                    ++total_samples;
                }
            }
        }

        const double scale = config.learning_rate / static_cast<double>(total_samples);
        for (std::size_t k = 0; k < dim; ++k)
            params.w_final[k] += scale * (grad_w[k] - config.beta * kl_grad_w[k]);
        params.prefix_weight += scale * (grad_rho - config.beta * kl_grad_rho);
        check_finite(params, step + 1);

        const WorldStats stats = world_stats(params, ref, world, config.augmented);
        TrainStepLog row;
        row.step = step + 1;
        row.expected_reward = stats.expected_reward;
        row.kl = stats.kl;
        row.flip_rate_when_wrong = stats.flip_rate_when_wrong;
        row.echo_rate_when_right = stats.echo_rate_when_right;
        result.log.push_back(row);
    }
    return result;
}

SelfCorrectionMetrics self_correction_metrics(const PolicyParams& params, const World& world,
                                              double forced_wrong_fraction) {
    if (!(forced_wrong_fraction >= 0.0 && forced_wrong_fraction <= 1.0))
        throw Error("self_correction_metrics: forced_wrong_fraction must be in [0, 1]");
    if (world.instances.empty()) throw Error("self_correction_metrics: empty world");
    SelfCorrectionMetrics m;
    for (const SyntheticInstance& inst : world.instances) {
        const Verdict right = correct_verdict(inst);
        const double p_fix = p_correct_given_prefix(params, inst, flip(right));
        const double p_keep = p_correct_given_prefix(params, inst, right);
        m.flip_rate_when_wrong += p_fix;
        m.echo_rate_when_right += p_keep;
        m.final_accuracy += forced_wrong_fraction * p_fix + (1.0 - forced_wrong_fraction) * p_keep;
        m.initial_accuracy += p_initial_correct(params, inst);
    }
    const double n = static_cast<double>(world.instances.size());
    m.flip_rate_when_wrong /= n;
    m.echo_rate_when_right /= n;
    m.final_accuracy /= n;
    m.initial_accuracy /= n;
    return m;
}

void write_training_log_csv(const std::vector<TrainStepLog>& log,
                            const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw WriteError("cannot open " + path.string() + " for writing");
    out << "step,expected_reward,kl,flip_rate_when_wrong,echo_rate_when_right\n";
    for (const auto& row : log) {
        out << row.step << "," << format_number(row.expected_reward) << ","
            << format_number(row.kl) << "," << format_number(row.flip_rate_when_wrong) << ","
            << format_number(row.echo_rate_when_right) << "\n";
    }
    if (!out) throw WriteError("write failed for " + path.string());
}

} // namespace camel::toy
