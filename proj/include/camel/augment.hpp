#pragma once

// Counterfactual prefix augmentation: every source pair becomes two
// training instances, one per forced initial verdict, sharing the source
// label. Rollout rewards depend only on the final verdict.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "camel/core.hpp"

namespace camel::augment {

struct AugmentedInstance {
    std::string source_id;
    std::string question;
    std::string response_a;
    std::string response_b;
    Verdict forced_v0 = Verdict::A;
    Label label = Label::a;
    // Fully rendered two-verdict prompt plus the forced verdict marker, so
    // downstream trainers need no knowledge of the template.
    std::string prompt_text;
};

// 2N instances for N pairs, A-forced then B-forced per source, source
// order preserved. No shuffling at this layer.
std::vector<AugmentedInstance> augment(std::span<const PreferencePair> pairs);

// Reward of one rollout against the instance label. The forced prefix is
// deliberately ignored: credit attaches to the final verdict only.
int label_rollout(const AugmentedInstance& instance, Verdict final_verdict);

// JSONL: {source_id, forced_v0, label, prompt_text} per line.
void write_augmented_jsonl(const std::vector<AugmentedInstance>& instances,
                           const std::filesystem::path& path);

} // namespace camel::augment
