#include "camel/mock_backend.hpp"

#include <fstream>

#include <json.hpp>

namespace camel {

namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

constexpr double kStructuralLogprob = -0.001; // bracket tokens around the letter

Verdict parse_verdict_field(const json& j, const std::string& context) {
    const std::string s = j.get<std::string>();
    if (s == "A") return Verdict::A;
    if (s == "B") return Verdict::B;
    throw ParseError(context + ": v0 must be \"A\" or \"B\", got \"" + s + "\"");
}

MockEntry parse_entry(const json& j, const std::string& context) {
    MockEntry e;
    if (j.contains("v0")) e.v0 = parse_verdict_field(j.at("v0"), context);
    if (j.contains("logp_a")) e.logp_a = j.at("logp_a").get<double>();
    if (j.contains("logp_b")) e.logp_b = j.at("logp_b").get<double>();
    if (j.contains("reflect_flips")) e.reflect_flips = j.at("reflect_flips").get<bool>();
    if (j.contains("reflection_text")) e.reflection_text = j.at("reflection_text").get<std::string>();
    if (j.contains("fast_tokens")) e.fast_tokens = j.at("fast_tokens").get<std::int64_t>();
    if (j.contains("reflection_tokens"))
        e.reflection_tokens = j.at("reflection_tokens").get<std::int64_t>();
    if (e.logp_a > 0.0 || e.logp_b > 0.0)
        throw ParseError(context + ": log-probabilities must be <= 0");
    if (e.fast_tokens < 1 || e.reflection_tokens < 1)
        throw ParseError(context + ": token counts must be >= 1");
    return e;
}

ordered_json entry_to_json(const std::string& pair_id, const MockEntry& e) {
    ordered_json j;
    j["pair_id"] = pair_id;
    j["v0"] = to_string(e.v0);
    j["logp_a"] = e.logp_a;
    j["logp_b"] = e.logp_b;
    j["reflect_flips"] = e.reflect_flips;
    j["reflection_text"] = e.reflection_text;
    j["fast_tokens"] = e.fast_tokens;
    j["reflection_tokens"] = e.reflection_tokens;
    return j;
}

// Fills a position's alternative list up to depth 5 with low-probability
// distractors, mirroring what a real top_logprobs response looks like.
void pad_alternatives(std::vector<TokenLogprob>& alts) {
    static const char* kFillers[] = {" ", "The", "I", "\n", "Okay"};
    double lp = -18.0;
    for (const char* f : kFillers) {
        if (alts.size() >= 5) break;
        alts.push_back({f, lp});
        lp -= 1.0;
    }
}

void push_token(BackendCompletion& c, std::string text, double logprob,
                std::vector<TokenLogprob> alts) {
    c.token_texts.push_back(text);
    c.token_logprobs.push_back(logprob);
    bool sampled_present = false;
    for (const auto& a : alts) sampled_present = sampled_present || a.text == text;
    if (!sampled_present) alts.insert(alts.begin(), {text, logprob});
    pad_alternatives(alts);
    c.top_alternatives.push_back(std::move(alts));
}

Verdict forced_verdict_from_prompt(const std::string& prompt) {
    const std::size_t at_a = prompt.rfind("[[A");
    const std::size_t at_b = prompt.rfind("[[B");
    if (at_a == std::string::npos && at_b == std::string::npos)
        throw BackendError("mock continuation: prompt carries no forced verdict marker");
    if (at_b == std::string::npos || (at_a != std::string::npos && at_a > at_b)) return Verdict::A;
    return Verdict::B;
}

} // namespace

MockScript load_mock_script(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("mock script: cannot open " + path.string());
    MockScript script;
    bool saw_default = false;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string context = path.filename().string() + ":" + std::to_string(line_no);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(context + ": " + e.what());
        }
        if (!j.contains("pair_id")) throw ParseError(context + ": missing pair_id");
        const std::string id = j.at("pair_id").get<std::string>();
        MockEntry entry = parse_entry(j, context);
        if (id == "default") {
            script.default_entry = entry;
            saw_default = true;
            if (j.contains("seed")) script.seed = j.at("seed").get<std::uint64_t>();
        } else {
            if (!script.entries.emplace(id, std::move(entry)).second)
                throw DuplicateId(context + ": duplicate mock entry for pair " + id);
        }
    }
    (void)saw_default;
    return script;
}

void save_mock_script(const MockScript& script, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw WriteError("mock script: cannot open " + path.string() + " for writing");
    ordered_json def = entry_to_json("default", script.default_entry);
    def["seed"] = script.seed;
    out << def.dump() << "\n";
    for (const auto& [id, entry] : script.entries) out << entry_to_json(id, entry).dump() << "\n";
    if (!out) throw WriteError("mock script: write failed for " + path.string());
}

BackendCompletion ScriptedMockBackend::complete(const std::string& prompt,
                                                const std::optional<std::string>& stop,
                                                int max_tokens, const std::string& instance_tag) {
    (void)prompt;
    (void)stop; // the scripted marker is emitted whole regardless of stop
    (void)max_tokens;
    const MockEntry& e = script_.entry_for(instance_tag);
    const bool a = e.v0 == Verdict::A;
    BackendCompletion c;
    push_token(c, "[[", kStructuralLogprob, {});
    push_token(c, a ? "A" : "B", a ? e.logp_a : e.logp_b,
               {{"A", e.logp_a}, {"B", e.logp_b}});
    push_token(c, "]]", kStructuralLogprob, {});
    c.completion_token_count = e.fast_tokens;
    return c;
}

BackendCompletion ScriptedMockBackend::continuation(const std::string& prompt_with_prefix,
                                                    int max_tokens,
                                                    const std::string& instance_tag) {
    (void)max_tokens;
    const MockEntry& e = script_.entry_for(instance_tag);
    const Verdict v0 = forced_verdict_from_prompt(prompt_with_prefix);
    const Verdict v1 = e.reflect_flips ? flip(v0) : v0;
    const bool a = v1 == Verdict::A;
    BackendCompletion c;
    push_token(c, e.reflection_text, -0.5, {});
    push_token(c, "\n", -0.01, {});
    push_token(c, "[[", kStructuralLogprob, {});
    push_token(c, a ? "A" : "B", -0.05, {{a ? "A" : "B", -0.05}, {a ? "B" : "A", -3.2}});
    push_token(c, "]]", kStructuralLogprob, {});
    c.completion_token_count = e.reflection_tokens;
    return c;
}

} // namespace camel
