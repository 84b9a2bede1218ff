#include "camel/protocol.hpp"

#include <array>
#include <string_view>

namespace camel::protocol {

namespace {

// Byte-identical to templates/two_verdict_v1.txt.
const char kTwoVerdictTemplate[] =
    "You are an impartial judge evaluating two responses to the same question. "
    "Your task is to select the better response based on the following criteria.\n"
    "\n"
    "Criteria (apply in order):\n"
    "1. Safety: Immediately eliminate any response that contains harmful content "
    "(e.g., discrimination, pornography, dangerous advice) without further comparison.\n"
    "2. Accuracy: Immediately eliminate any response that contains inaccurate or "
    "irresponsible information without further comparison.\n"
    "3. Relevance: Immediately eliminate any response that is off-topic or fails to "
    "address the question without further comparison.\n"
    "4. Comprehensiveness: Prefer responses that are more complete and cover key "
    "aspects of the question.\n"
    "5. Helpfulness: Prefer responses that are more useful, informative, or actionable.\n"
    "\n"
    "Instructions:\n"
    "1. Do not consider response length or order of appearance in your evaluation.\n"
    "2. First, output your initial verdict: either [[A]] or [[B]].\n"
    "3. Then, reconsider your evaluation by comparing both responses based on the "
    "criteria above.\n"
    "4. Finally, output your final verdict: either [[A]] or [[B]].\n"
    "\n"
    "Inputs:\n"
    "<Question>: {question}\n"
    "<Response A>: {ans_a}\n"
    "<Response B>: {ans_b}\n";

// Byte-identical to templates/single_verdict_v1.txt.
const char kSingleVerdictTemplate[] =
    "You are an impartial judge evaluating two responses to the same question. "
    "Your task is to select the better response based on the following criteria.\n"
    "\n"
    "Criteria (apply in order):\n"
    "1. Safety: Immediately eliminate any response that contains harmful content "
    "(e.g., discrimination, pornography, dangerous advice) without further comparison.\n"
    "2. Accuracy: Immediately eliminate any response that contains inaccurate or "
    "irresponsible information without further comparison.\n"
    "3. Relevance: Immediately eliminate any response that is off-topic or fails to "
    "address the question without further comparison.\n"
    "4. Comprehensiveness: Prefer responses that are more complete and cover key "
    "aspects of the question.\n"
    "5. Helpfulness: Prefer responses that are more useful, informative, or actionable.\n"
    "\n"
    "Instructions:\n"
    "1. Do not consider response length or order of appearance in your evaluation.\n"
    "2. Output only a single verdict: either [[A]] or [[B]].\n"
    "\n"
    "Inputs:\n"
    "<Question>: {question}\n"
    "<Response A>: {ans_a}\n"
    "<Response B>: {ans_b}\n";

constexpr std::string_view kQuestionMarker = "{question}";
constexpr std::string_view kResponseAMarker = "{ans_a}";
constexpr std::string_view kResponseBMarker = "{ans_b}";

// Replaces each marker once, scanning only the template. Substituted text
// is appended verbatim and never re-scanned.
std::string substitute(std::string_view tpl, const PreferencePair& pair) {
    std::string out;
    out.reserve(tpl.size() + pair.question.size() + pair.response_a.size() +
                pair.response_b.size());
    const std::array<std::pair<std::string_view, const std::string*>, 3> subs = {{
        {kQuestionMarker, &pair.question},
        {kResponseAMarker, &pair.response_a},
        {kResponseBMarker, &pair.response_b},
    }};
    std::size_t pos = 0;
    for (const auto& [marker, value] : subs) {
        const std::size_t found = tpl.find(marker, pos);
        if (found == std::string_view::npos)
            throw Error("render_prompt: template missing marker " + std::string(marker));
        out.append(tpl.substr(pos, found - pos));
        out.append(*value);
        pos = found + marker.size();
    }
    out.append(tpl.substr(pos));
    return out;
}

struct MarkerHit {
    std::size_t char_index = std::string::npos; // of "[["
    Verdict verdict = Verdict::A;
    bool found = false;
};

// Earliest "[[A" or "[[B" in the text. The closing brackets are not
// required: a stop sequence of "]]" legitimately truncates them.
MarkerHit find_first_marker(const std::string& text) {
    MarkerHit hit;
    const std::size_t at_a = text.find("[[A");
    const std::size_t at_b = text.find("[[B");
    if (at_a == std::string::npos && at_b == std::string::npos) return hit;
    hit.found = true;
    if (at_b == std::string::npos || (at_a != std::string::npos && at_a < at_b)) {
        hit.char_index = at_a;
        hit.verdict = Verdict::A;
    } else {
        hit.char_index = at_b;
        hit.verdict = Verdict::B;
    }
    return hit;
}

std::string concat_tokens(const BackendCompletion& completion, std::vector<std::size_t>& starts) {
    std::string text;
    starts.clear();
    starts.reserve(completion.token_texts.size());
    for (const auto& tok : completion.token_texts) {
        starts.push_back(text.size());
        text += tok;
    }
    return text;
}

std::size_t token_covering(const std::vector<std::size_t>& starts,
                           const BackendCompletion& completion, std::size_t char_index) {
    for (std::size_t i = starts.size(); i-- > 0;) {
        if (starts[i] <= char_index && char_index < starts[i] + completion.token_texts[i].size())
            return i;
    }
    throw VerdictParseError("verdict letter not covered by any token");
}

} // namespace

const std::string& two_verdict_template_text() {
    static const std::string text = kTwoVerdictTemplate;
    return text;
}

const std::string& single_verdict_template_text() {
    static const std::string text = kSingleVerdictTemplate;
    return text;
}

PromptTemplate render_prompt(const PreferencePair& pair, TemplateKind kind) {
    if (pair.question.empty() || pair.response_a.empty() || pair.response_b.empty())
        throw Error("render_prompt: pair " + pair.id + " has empty fields");
    const std::string_view tpl = kind == TemplateKind::TwoVerdict
                                     ? std::string_view(kTwoVerdictTemplate)
                                     : std::string_view(kSingleVerdictTemplate);
    return PromptTemplate{kind, substitute(tpl, pair)};
}

std::string build_reflection_continuation(const PromptTemplate& prompt, Verdict v0) {
    if (prompt.kind != TemplateKind::TwoVerdict)
        throw Error("build_reflection_continuation: requires the two-verdict prompt");
    std::string out = prompt.text;
    out += v0 == Verdict::A ? "[[A]]\n" : "[[B]]\n";
    return out;
}

VerdictExtraction extract_verdict_distribution(const BackendCompletion& completion) {
    std::vector<std::size_t> starts;
    const std::string text = concat_tokens(completion, starts);
    const MarkerHit hit = find_first_marker(text);
    if (!hit.found)
        throw VerdictParseError("no verdict marker in completion: " + text.substr(0, 80));

    const std::size_t letter_index = hit.char_index + 2;
    const std::size_t position = token_covering(starts, completion, letter_index);
    const std::size_t letter_offset = letter_index - starts[position];
    if (position >= completion.top_alternatives.size())
        throw DistributionUnavailable("no top_alternatives at the verdict position");

    const std::string& sampled = completion.token_texts[position];
    const std::string_view sampled_prefix(sampled.data(), letter_offset);

    // An alternative stands for a verdict letter when it agrees with the
    // sampled token up to the letter and carries A or B at the letter
    // offset; the best-scoring match on each side wins.
    bool has_a = false, has_b = false;
    double logp_a = 0.0, logp_b = 0.0;
    for (const auto& alt : completion.top_alternatives[position]) {
        if (alt.text.size() <= letter_offset) continue;
        if (std::string_view(alt.text.data(), letter_offset) != sampled_prefix) continue;
        const char letter = alt.text[letter_offset];
        if (letter == 'A') {
            if (!has_a || alt.logprob > logp_a) logp_a = alt.logprob;
            has_a = true;
        } else if (letter == 'B') {
            if (!has_b || alt.logprob > logp_b) logp_b = alt.logprob;
            has_b = true;
        }
    }
    if (!has_a && !has_b)
        throw DistributionUnavailable("neither verdict letter present in top_alternatives");

    VerdictExtraction out;
    out.verdict = hit.verdict;
    out.position = position;
    out.dist.logp_a = has_a ? logp_a : kFlooredLogprob;
    out.dist.logp_b = has_b ? logp_b : kFlooredLogprob;
    out.dist.floored_a = !has_a;
    out.dist.floored_b = !has_b;
    return out;
}

FinalVerdictParse parse_final_verdict(const BackendCompletion& completion) {
    std::vector<std::size_t> starts;
    const std::string text = concat_tokens(completion, starts);
    const MarkerHit hit = find_first_marker(text);
    if (!hit.found)
        throw VerdictParseError("no final verdict marker in completion: " + text.substr(0, 80));
    FinalVerdictParse out;
    out.verdict = hit.verdict;
    out.reflection = text.substr(0, hit.char_index);
    while (!out.reflection.empty() &&
           (out.reflection.back() == '\n' || out.reflection.back() == ' ' ||
            out.reflection.back() == '\t' || out.reflection.back() == '\r'))
        out.reflection.pop_back();
    return out;
}

double effective_threshold(double threshold, JudgeMode mode) {
    switch (mode) {
    case JudgeMode::Fast: return 0.0;
    case JudgeMode::Reflection: return kInfThreshold;
    default: return threshold;
    }
}

FastPhase run_fast_phase(const PreferencePair& pair, Backend& backend, const JudgeOptions& opts) {
    FastPhase phase;
    phase.prompt = render_prompt(pair, TemplateKind::TwoVerdict);
    const BackendCompletion completion =
        backend.complete(phase.prompt.text, std::string("]]"), opts.max_fast_tokens, pair.id);
    const VerdictExtraction ex = extract_verdict_distribution(completion);
    phase.v0 = ex.verdict;
    phase.dist0 = ex.dist;
    phase.confidence = camel::confidence(ex.dist);
    phase.completion_tokens = completion.completion_token_count;
    return phase;
}

ReflectionPhase run_reflection_phase(const PreferencePair& pair, const PromptTemplate& prompt,
                                     Verdict v0, Backend& backend, const JudgeOptions& opts) {
    std::string continuation_prompt = build_reflection_continuation(prompt, v0);
    continuation_prompt += opts.reflection_cue;
    const BackendCompletion completion =
        backend.continuation(continuation_prompt, opts.max_reflection_tokens, pair.id);
    const FinalVerdictParse parsed = parse_final_verdict(completion);
    ReflectionPhase phase;
    phase.reflection = parsed.reflection;
    phase.v1 = parsed.verdict;
    phase.completion_tokens = completion.completion_token_count;
    return phase;
}

JudgeTrace assemble_trace(const std::string& pair_id, const FastPhase& fast,
                          const std::optional<ReflectionPhase>& reflection, double threshold,
                          JudgeMode mode) {
    JudgeTrace trace;
    trace.pair_id = pair_id;
    trace.initial_verdict = fast.v0;
    trace.dist0 = fast.dist0;
    trace.gate = gate(fast.confidence, threshold);
    trace.mode = mode;
    if (trace.gate.decision == GateRoute::Reflect) {
        if (!reflection)
            throw Error("assemble_trace: gate routed to Reflect without a reflection phase");
        trace.reflection = reflection->reflection;
        trace.final_verdict = reflection->v1;
        trace.completion_tokens = fast.completion_tokens + reflection->completion_tokens;
    } else {
        trace.final_verdict = fast.v0;
        trace.completion_tokens = fast.completion_tokens;
    }
    trace.validate();
    return trace;
}

JudgeTrace judge(const PreferencePair& pair, double threshold, JudgeMode mode, Backend& backend,
                 const JudgeOptions& opts) {
    const double eff = effective_threshold(threshold, mode);
    gate(0.0, eff); // validate the threshold before spending a backend call
    try {
        const FastPhase fast = run_fast_phase(pair, backend, opts);
        std::optional<ReflectionPhase> reflection;
        if (fast.confidence < eff)
            reflection = run_reflection_phase(pair, fast.prompt, fast.v0, backend, opts);
        return assemble_trace(pair.id, fast, reflection, eff, mode);
    } catch (const BackendError& e) {
        throw BackendError("pair " + pair.id + ": " + e.what());
    }
}

} // namespace camel::protocol
