#pragma once

// Prompt construction, verdict-token extraction, and the two-stage judging
// orchestration: emit the initial verdict, read the verdict-token margin,
// gate on it, and continue into reflection only when routed there.

#include <cstddef>
#include <optional>
#include <string>

#include "camel/backend.hpp"
#include "camel/core.hpp"

namespace camel::protocol {

enum class TemplateKind : std::uint8_t { TwoVerdict, SingleVerdict };

inline const char* to_string(TemplateKind k) {
    return k == TemplateKind::TwoVerdict ? "two_verdict" : "single_verdict";
}

struct PromptTemplate {
    TemplateKind kind = TemplateKind::TwoVerdict;
    std::string text;
};

// Current on-disk template revision (templates/<kind>_<version>.txt).
inline constexpr const char* kTemplateVersion = "v1";

// Raw template bodies with {question}/{ans_a}/{ans_b} placeholders. These
// are byte-identical to the files under templates/.
const std::string& two_verdict_template_text();
const std::string& single_verdict_template_text();

// Substitutes the three placeholders in a single left-to-right pass; text
// already substituted is never re-scanned, so inputs containing literal
// placeholder markers cannot corrupt the rendering. Deterministic.
PromptTemplate render_prompt(const PreferencePair& pair, TemplateKind kind);

// Original prompt plus the forced initial-verdict marker and a newline,
// ready to be continued by the backend.
std::string build_reflection_continuation(const PromptTemplate& prompt, Verdict v0);

struct VerdictExtraction {
    Verdict verdict = Verdict::A;
    VerdictDistribution dist;
    std::size_t position = 0; // token index of the decision letter
};

// Locates the first A/B verdict marker in the completion and reads the
// log-probabilities of both letter alternatives from top_alternatives at
// the position whose sampled token carries the letter. A missing
// alternative is floored at kFlooredLogprob with its flag set; both
// missing is DistributionUnavailable; no marker is VerdictParseError.
VerdictExtraction extract_verdict_distribution(const BackendCompletion& completion);

// Splits a reflection-phase completion into the reflection text and the
// final verdict (the first marker in the continuation output).
struct FinalVerdictParse {
    std::string reflection;
    Verdict verdict = Verdict::A;
};
FinalVerdictParse parse_final_verdict(const BackendCompletion& completion);

struct JudgeOptions {
    int max_fast_tokens = 16;
    int max_reflection_tokens = 512;
    // Optional cue appended after the forced verdict marker when eliciting
    // the reflection. Empty by default: the two-verdict template already
    // instructs the model to reconsider.
    std::string reflection_cue;
};

// Intermediate results of the two phases. Exposed so that threshold sweeps
// can run each backend phase once and replay the gate per threshold.
struct FastPhase {
    PromptTemplate prompt;
    Verdict v0 = Verdict::A;
    VerdictDistribution dist0;
    double confidence = 0.0;
    std::int64_t completion_tokens = 0;
};

struct ReflectionPhase {
    std::string reflection;
    Verdict v1 = Verdict::A;
    std::int64_t completion_tokens = 0;
};

FastPhase run_fast_phase(const PreferencePair& pair, Backend& backend,
                         const JudgeOptions& opts = {});

ReflectionPhase run_reflection_phase(const PreferencePair& pair, const PromptTemplate& prompt,
                                     Verdict v0, Backend& backend,
                                     const JudgeOptions& opts = {});

// Assembles a validated trace from cached phase results. reflection is
// consulted only when the gate routes to Reflect.
JudgeTrace assemble_trace(const std::string& pair_id, const FastPhase& fast,
                          const std::optional<ReflectionPhase>& reflection,
                          double threshold, JudgeMode mode);

// Two-stage judging over one pair. Fast behaves as threshold 0 (always
// early exit after the initial verdict); Reflection as threshold +inf
// (always continue); Gated applies the given threshold.
JudgeTrace judge(const PreferencePair& pair, double threshold, JudgeMode mode,
                 Backend& backend, const JudgeOptions& opts = {});

// Threshold actually applied by a mode (0 for Fast, +inf for Reflection).
double effective_threshold(double threshold, JudgeMode mode);

} // namespace camel::protocol
