#pragma once

// Deterministic scripted backend. Each preference pair id maps to a script
// entry fixing the initial verdict, the verdict-token log-probabilities,
// whether reflection flips the verdict, the reflection text, and the token
// counts the backend reports. Unknown ids fall back to the default entry.
// Synthesis is a pure function of (script, pair id, phase).

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "camel/backend.hpp"
#include "camel/core.hpp"

namespace camel {

struct MockEntry {
    Verdict v0 = Verdict::A;
    double logp_a = -0.1;
    double logp_b = -2.0;
    bool reflect_flips = false;
    std::string reflection_text = "Re-checked both responses against the criteria.";
    std::int64_t fast_tokens = 1;
    std::int64_t reflection_tokens = 40;
};

struct MockScript {
    std::map<std::string, MockEntry> entries; // keyed by pair_id
    MockEntry default_entry;
    std::uint64_t seed = 0;

    const MockEntry& entry_for(const std::string& pair_id) const {
        auto it = entries.find(pair_id);
        return it == entries.end() ? default_entry : it->second;
    }
};

// JSONL, one entry per line keyed by "pair_id"; the line with pair_id
// "default" sets the fallback entry and may carry the script seed.
MockScript load_mock_script(const std::filesystem::path& path);
void save_mock_script(const MockScript& script, const std::filesystem::path& path);

class ScriptedMockBackend final : public Backend {
public:
    explicit ScriptedMockBackend(MockScript script) : script_(std::move(script)) {}

    BackendCompletion complete(const std::string& prompt,
                               const std::optional<std::string>& stop,
                               int max_tokens,
                               const std::string& instance_tag) override;

    BackendCompletion continuation(const std::string& prompt_with_prefix,
                                   int max_tokens,
                                   const std::string& instance_tag) override;

    std::string describe() const override { return "mock"; }

    const MockScript& script() const { return script_; }

private:
    MockScript script_;
};

} // namespace camel
