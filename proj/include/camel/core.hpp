#pragma once

// Domain types and the closed-form pieces of confidence-gated judging:
// the verdict-token confidence margin, the early-exit gate, the fixed
// verdict-to-label mapping, and the binary final-verdict reward.
// Everything here is a pure value type or a pure function.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>

#include "camel/errors.hpp"

namespace camel {

// Verdict tokens emitted by the judge ("[[A]]" / "[[B]]").
enum class Verdict : std::uint8_t { A, B };

// Preference labels carried by the dataset.
enum class Label : std::uint8_t { a, b };

enum class GateRoute : std::uint8_t { EarlyExit, Reflect };

enum class JudgeMode : std::uint8_t { Fast, Reflection, Gated };

constexpr double kInfThreshold = std::numeric_limits<double>::infinity();

// Floor assigned to a verdict alternative missing from the backend's
// top-logprob list, in nats.
constexpr double kFlooredLogprob = -100.0;

inline Verdict flip(Verdict v) { return v == Verdict::A ? Verdict::B : Verdict::A; }

inline const char* to_string(Verdict v) { return v == Verdict::A ? "A" : "B"; }
inline const char* to_string(Label l) { return l == Label::a ? "a" : "b"; }
inline const char* to_string(GateRoute r) { return r == GateRoute::EarlyExit ? "early_exit" : "reflect"; }
inline const char* to_string(JudgeMode m) {
    switch (m) {
    case JudgeMode::Fast: return "fast";
    case JudgeMode::Reflection: return "reflection";
    default: return "gated";
    }
}

// One labeled comparison x = (question, response_a, response_b) with its
// preferred side z.
struct PreferencePair {
    std::string id;
    std::string question;
    std::string response_a;
    std::string response_b;
    Label label = Label::a;
};

// Log-probabilities (nats) of the two verdict alternatives at the decision
// position. A floored side was absent from the backend's top list and was
// assigned kFlooredLogprob instead of failing.
struct VerdictDistribution {
    double logp_a = 0.0;
    double logp_b = 0.0;
    bool floored_a = false;
    bool floored_b = false;

    bool valid() const {
        return std::isfinite(logp_a) && std::isfinite(logp_b) && logp_a <= 0.0 && logp_b <= 0.0;
    }
    bool any_floored() const { return floored_a || floored_b; }
};

struct GateDecision {
    GateRoute decision = GateRoute::Reflect;
    double confidence = 0.0;
    double threshold = kInfThreshold;
};

// Verdict-token margin |log p(A) - log p(B)|. The margin is identical
// whether computed on raw token log-probabilities or on the renormalized
// two-way distribution, so the raw values are used directly.
inline double confidence(const VerdictDistribution& dist) {
    if (!std::isfinite(dist.logp_a) || !std::isfinite(dist.logp_b))
        throw InvalidDistribution("confidence: non-finite log-probability");
    return std::fabs(dist.logp_a - dist.logp_b);
}

// Routes an instance by comparing its confidence against the threshold.
// The comparison is inclusive: confidence == threshold exits early.
// threshold may be +inf, which always routes to Reflect.
inline GateDecision gate(double confidence_score, double threshold) {
    if (std::isnan(threshold) || threshold < 0.0)
        throw InvalidThreshold("gate: threshold must be >= 0 or +inf");
    GateDecision d;
    d.confidence = confidence_score;
    d.threshold = threshold;
    d.decision = confidence_score >= threshold ? GateRoute::EarlyExit : GateRoute::Reflect;
    return d;
}

// Fixed bijection from verdict tokens to preference labels.
inline Label map_verdict(Verdict v) { return v == Verdict::A ? Label::a : Label::b; }

// Binary reward on the final verdict only: +1 when it maps to the label,
// -1 otherwise.
inline int reward(Verdict final_verdict, Label label) {
    return map_verdict(final_verdict) == label ? +1 : -1;
}

// Full record of one judgment: initial verdict and its distribution, the
// gate decision, the optional reflection, the final verdict, and the total
// backend-reported completion tokens.
struct JudgeTrace {
    std::string pair_id;
    Verdict initial_verdict = Verdict::A;
    VerdictDistribution dist0;
    GateDecision gate;
    std::optional<std::string> reflection;
    Verdict final_verdict = Verdict::A;
    std::int64_t completion_tokens = 1;
    JudgeMode mode = JudgeMode::Gated;

    // Structural invariants, checked whenever a trace is assembled.
    void validate() const {
        if (gate.decision == GateRoute::EarlyExit) {
            if (final_verdict != initial_verdict)
                throw TraceInvariantError("trace " + pair_id + ": early exit requires v1 == v0");
            if (reflection.has_value())
                throw TraceInvariantError("trace " + pair_id + ": early exit forbids reflection");
        }
        if (mode == JudgeMode::Fast) {
            if (reflection.has_value() || final_verdict != initial_verdict)
                throw TraceInvariantError("trace " + pair_id + ": fast mode forbids reflection");
        }
        if (completion_tokens < 1)
            throw TraceInvariantError("trace " + pair_id + ": completion_tokens must be >= 1");
    }
};

} // namespace camel
