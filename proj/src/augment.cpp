#include "camel/augment.hpp"

#include <fstream>

#include <json.hpp>

#include "camel/protocol.hpp"

namespace camel::augment {

namespace {

AugmentedInstance make_instance(const PreferencePair& pair,
                                const protocol::PromptTemplate& prompt, Verdict forced) {
    AugmentedInstance inst;
    inst.source_id = pair.id;
    inst.question = pair.question;
    inst.response_a = pair.response_a;
    inst.response_b = pair.response_b;
    inst.forced_v0 = forced;
    inst.label = pair.label;
    inst.prompt_text = protocol::build_reflection_continuation(prompt, forced);
    return inst;
}

} // namespace

std::vector<AugmentedInstance> augment(std::span<const PreferencePair> pairs) {
    std::vector<AugmentedInstance> out;
    out.reserve(pairs.size() * 2);
    for (const PreferencePair& pair : pairs) {
        const protocol::PromptTemplate prompt =
            protocol::render_prompt(pair, protocol::TemplateKind::TwoVerdict);
        out.push_back(make_instance(pair, prompt, Verdict::A));
        out.push_back(make_instance(pair, prompt, Verdict::B));
    }
    return out;
}

int label_rollout(const AugmentedInstance& instance, Verdict final_verdict) {
    return reward(final_verdict, instance.label);
}

void write_augmented_jsonl(const std::vector<AugmentedInstance>& instances,
                           const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw WriteError("cannot open " + path.string() + " for writing");
    for (const auto& inst : instances) {
        nlohmann::ordered_json j;
        j["source_id"] = inst.source_id;
        j["forced_v0"] = to_string(inst.forced_v0);
        j["label"] = to_string(inst.label);
        j["prompt_text"] = inst.prompt_text;
        out << j.dump() << "\n";
    }
    if (!out) throw WriteError("write failed for " + path.string());
}

} // namespace camel::augment
