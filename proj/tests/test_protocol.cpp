#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "camel/mock_backend.hpp"
#include "camel/protocol.hpp"
#include "test_support.hpp"

using namespace camel;
using namespace camel::protocol;
namespace ts = camel::testsupport;

namespace {

PreferencePair sample_pair() {
    PreferencePair p;
    p.id = "p1";
    p.question = "2+2?";
    p.response_a = "4";
    p.response_b = "5";
    p.label = Label::a;
    return p;
}

BackendCompletion marker_completion(double logp_a, double logp_b, Verdict sampled) {
    BackendCompletion c;
    c.token_texts = {"[[", sampled == Verdict::A ? "A" : "B", "]]"};
    c.token_logprobs = {-0.001, sampled == Verdict::A ? logp_a : logp_b, -0.001};
    c.top_alternatives = {
        {{"[[", -0.001}, {"I", -9.0}},
        {{"A", logp_a}, {"B", logp_b}, {"C", -14.0}},
        {{"]]", -0.001}, {"]", -9.0}},
    };
    c.completion_token_count = 1;
    return c;
}

} // namespace

TEST_CASE("embedded templates match the versioned template files byte for byte") {
    const std::string two = ts::read_file(ts::templates_dir() / "two_verdict_v1.txt");
    const std::string single = ts::read_file(ts::templates_dir() / "single_verdict_v1.txt");
    CHECK(two == two_verdict_template_text());
    CHECK(single == single_verdict_template_text());
    CHECK(ts::fnv1a64(two) == 0xa293c6be4c680905ULL);
    CHECK(ts::fnv1a64(single) == 0xa75bfe6e22c6aa86ULL);
}

TEST_CASE("two-verdict rendering carries the criteria and instruction block") {
    const PromptTemplate p = render_prompt(sample_pair(), TemplateKind::TwoVerdict);
    CHECK(p.kind == TemplateKind::TwoVerdict);
    CHECK(p.text.find("<Question>: 2+2?") != std::string::npos);
    CHECK(p.text.find("<Response A>: 4") != std::string::npos);
    CHECK(p.text.find("<Response B>: 5") != std::string::npos);
    CHECK(p.text.find("First, output your initial verdict") != std::string::npos);
    CHECK(p.text.find("Finally, output your final verdict") != std::string::npos);
    CHECK(p.text.find("Criteria (apply in order):") != std::string::npos);
    CHECK(p.text.find("{question}") == std::string::npos);
    CHECK(p.text.find("{ans_a}") == std::string::npos);
    CHECK(p.text.find("{ans_b}") == std::string::npos);
}

TEST_CASE("single-verdict rendering carries the two-step instruction block") {
    const PromptTemplate p = render_prompt(sample_pair(), TemplateKind::SingleVerdict);
    CHECK(p.text.find("Output only a single verdict") != std::string::npos);
    CHECK(p.text.find("First, output your initial verdict") == std::string::npos);
}

TEST_CASE("rendering is deterministic") {
    const PromptTemplate a = render_prompt(sample_pair(), TemplateKind::TwoVerdict);
    const PromptTemplate b = render_prompt(sample_pair(), TemplateKind::TwoVerdict);
    CHECK(a.text == b.text);
}

TEST_CASE("inputs containing placeholder markers are substituted, never re-scanned") {
    PreferencePair p = sample_pair();
    p.question = "does {ans_a} confuse the renderer?";
    p.response_a = "{question}";
    p.response_b = "plain";
    const PromptTemplate r = render_prompt(p, TemplateKind::TwoVerdict);
    CHECK(r.text.find("<Question>: does {ans_a} confuse the renderer?") != std::string::npos);
    CHECK(r.text.find("<Response A>: {question}") != std::string::npos);
    CHECK(r.text.find("<Response B>: plain") != std::string::npos);
}

TEST_CASE("rendering rejects empty pair fields") {
    PreferencePair p = sample_pair();
    p.response_b.clear();
    CHECK_THROWS_AS(render_prompt(p, TemplateKind::TwoVerdict), Error);
}

TEST_CASE("reflection continuation appends the literal verdict marker") {
    const PromptTemplate p = render_prompt(sample_pair(), TemplateKind::TwoVerdict);
    CHECK(build_reflection_continuation(p, Verdict::A) == p.text + "[[A]]\n");
    CHECK(build_reflection_continuation(p, Verdict::B) == p.text + "[[B]]\n");
    CHECK(build_reflection_continuation(p, Verdict::A).rfind(p.text, 0) == 0);
}

TEST_CASE("continuation requires the two-verdict prompt") {
    const PromptTemplate p = render_prompt(sample_pair(), TemplateKind::SingleVerdict);
    CHECK_THROWS_AS(build_reflection_continuation(p, Verdict::A), Error);
}

TEST_CASE("extraction reads the margin at the letter position") {
    // Hand-built fixture: margin |-0.1 - (-2.4)| = 2.3.
    const BackendCompletion c = marker_completion(-0.1, -2.4, Verdict::A);
    const VerdictExtraction ex = extract_verdict_distribution(c);
    CHECK(ex.verdict == Verdict::A);
    CHECK(ex.position == 1);
    CHECK(ex.dist.logp_a == -0.1);
    CHECK(ex.dist.logp_b == -2.4);
    CHECK_FALSE(ex.dist.floored_a);
    CHECK_FALSE(ex.dist.floored_b);
    CHECK(confidence(ex.dist) == doctest::Approx(2.3).epsilon(1e-12));
}

TEST_CASE("a missing alternative is floored with its flag set") {
    BackendCompletion c;
    c.token_texts = {"[[", "A", "]]"};
    c.token_logprobs = {-0.001, -0.05, -0.001};
    c.top_alternatives = {
        {{"[[", -0.001}},
        {{"A", -0.05}}, // B absent from the top list
        {{"]]", -0.001}},
    };
    c.completion_token_count = 1;
    const VerdictExtraction ex = extract_verdict_distribution(c);
    CHECK(ex.verdict == Verdict::A);
    CHECK(ex.dist.logp_a == -0.05);
    CHECK(ex.dist.logp_b == kFlooredLogprob);
    CHECK_FALSE(ex.dist.floored_a);
    CHECK(ex.dist.floored_b);
}

TEST_CASE("no verdict marker raises VerdictParseError") {
    BackendCompletion c;
    c.token_texts = {"I", " think", " both", " are", " fine", "."};
    c.token_logprobs = {-1, -1, -1, -1, -1, -1};
    c.top_alternatives.resize(6);
    c.completion_token_count = 6;
    CHECK_THROWS_AS(extract_verdict_distribution(c), VerdictParseError);
}

TEST_CASE("both letters missing raises DistributionUnavailable") {
    BackendCompletion c;
    c.token_texts = {"[[", "A", "]]"};
    c.token_logprobs = {-0.001, -0.05, -0.001};
    c.top_alternatives = {
        {{"[[", -0.001}},
        {{"C", -0.5}, {"D", -0.9}}, // neither A nor B
        {{"]]", -0.001}},
    };
    c.completion_token_count = 1;
    CHECK_THROWS_AS(extract_verdict_distribution(c), DistributionUnavailable);
}

TEST_CASE("extraction handles a multi-character verdict token") {
    BackendCompletion c;
    c.token_texts = {"[[A", "]]"};
    c.token_logprobs = {-0.3, -0.001};
    c.top_alternatives = {
        {{"[[A", -0.3}, {"[[B", -2.0}, {"[[", -5.0}},
        {{"]]", -0.001}},
    };
    c.completion_token_count = 1;
    const VerdictExtraction ex = extract_verdict_distribution(c);
    CHECK(ex.verdict == Verdict::A);
    CHECK(ex.position == 0);
    CHECK(ex.dist.logp_a == -0.3);
    CHECK(ex.dist.logp_b == -2.0);
}

TEST_CASE("extraction round-trips the scripted mock distribution") {
    MockScript script;
    MockEntry e;
    e.v0 = Verdict::B;
    e.logp_a = -3.25;
    e.logp_b = -0.125;
    script.entries["x"] = e;
    ScriptedMockBackend mock(script);
    const BackendCompletion c = mock.complete("prompt", std::nullopt, 16, "x");
    const VerdictExtraction ex = extract_verdict_distribution(c);
    CHECK(ex.verdict == Verdict::B);
    CHECK(ex.dist.logp_a == e.logp_a);
    CHECK(ex.dist.logp_b == e.logp_b);
    CHECK_FALSE(ex.dist.any_floored());
}

TEST_CASE("gated judging exits early on a confident initial verdict") {
    // Scripted margin 7 >= tau 5.
    MockScript script;
    MockEntry e;
    e.v0 = Verdict::A;
    e.logp_a = -0.5;
    e.logp_b = -7.5;
    e.reflect_flips = true; // must not matter: reflection never runs
    script.entries["p1"] = e;
    ScriptedMockBackend mock(script);

    const JudgeTrace t = judge(sample_pair(), 5.0, JudgeMode::Gated, mock);
    CHECK(t.gate.decision == GateRoute::EarlyExit);
    CHECK(t.initial_verdict == Verdict::A);
    CHECK(t.final_verdict == Verdict::A);
    CHECK_FALSE(t.reflection.has_value());
    CHECK(t.completion_tokens == 1);
    CHECK(t.gate.confidence == doctest::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("reflection mode always continues regardless of confidence") {
    MockScript script;
    MockEntry e;
    e.v0 = Verdict::A;
    e.logp_a = -0.5;
    e.logp_b = -7.5;
    e.reflect_flips = false;
    e.reflection_text = "still A";
    script.entries["p1"] = e;
    ScriptedMockBackend mock(script);

    const JudgeTrace t = judge(sample_pair(), 5.0, JudgeMode::Reflection, mock);
    CHECK(t.reflection.has_value());
    CHECK(*t.reflection == "still A");
    CHECK(t.final_verdict == Verdict::A);
    CHECK(t.completion_tokens == 1 + 40);
    CHECK(std::isinf(t.gate.threshold));
}

TEST_CASE("a low-confidence wrong verdict is repaired by the scripted flip") {
    // Margin 1.2 < tau 5 routes to reflection; the script flips A -> B.
    MockScript script;
    MockEntry e;
    e.v0 = Verdict::A;
    e.logp_a = -0.9;
    e.logp_b = -2.1;
    e.reflect_flips = true;
    script.entries["p1"] = e;
    ScriptedMockBackend mock(script);

    const JudgeTrace t = judge(sample_pair(), 5.0, JudgeMode::Gated, mock);
    CHECK(t.gate.decision == GateRoute::Reflect);
    CHECK(t.gate.confidence == doctest::Approx(1.2).epsilon(1e-12));
    CHECK(t.initial_verdict == Verdict::A);
    CHECK(t.final_verdict == Verdict::B);
    CHECK(t.reflection.has_value());
}

TEST_CASE("fast mode stops after the initial verdict") {
    ScriptedMockBackend mock(ts::fixture_script10());
    const JudgeTrace t = judge(sample_pair(), 99.0, JudgeMode::Fast, mock);
    CHECK(t.mode == JudgeMode::Fast);
    CHECK(t.final_verdict == t.initial_verdict);
    CHECK_FALSE(t.reflection.has_value());
    CHECK(t.completion_tokens == 1);
    CHECK(t.gate.threshold == 0.0); // fast behaves as threshold 0
}

TEST_CASE("mode equivalences at the threshold endpoints") {
    ScriptedMockBackend mock(ts::fixture_script10());
    for (const PreferencePair& pair : ts::fixture_pairs10()) {
        const JudgeTrace fast = judge(pair, 123.0, JudgeMode::Fast, mock);
        const JudgeTrace gated0 = judge(pair, 0.0, JudgeMode::Gated, mock);
        CHECK(fast.initial_verdict == gated0.initial_verdict);
        CHECK(fast.final_verdict == gated0.final_verdict);
        CHECK(fast.reflection.has_value() == gated0.reflection.has_value());
        CHECK(fast.completion_tokens == gated0.completion_tokens);
        CHECK(fast.gate.decision == gated0.gate.decision);

        const JudgeTrace refl = judge(pair, 0.0, JudgeMode::Reflection, mock);
        const JudgeTrace gated_inf = judge(pair, kInfThreshold, JudgeMode::Gated, mock);
        CHECK(refl.final_verdict == gated_inf.final_verdict);
        CHECK(refl.reflection == gated_inf.reflection);
        CHECK(refl.completion_tokens == gated_inf.completion_tokens);
    }
}

TEST_CASE("every gated trace pairs reflection presence with the gate route") {
    ScriptedMockBackend mock(ts::fixture_script10());
    for (const PreferencePair& pair : ts::fixture_pairs10()) {
        for (const double tau : {0.0, 1.0, 5.0, 9.0, kInfThreshold}) {
            const JudgeTrace t = judge(pair, tau, JudgeMode::Gated, mock);
            CHECK(t.reflection.has_value() == (t.gate.decision == GateRoute::Reflect));
        }
    }
}

TEST_CASE("gated final verdicts follow the script transition table exactly") {
    // v1 = flip(v0) iff the entry flips and the gate routed to reflection.
    const auto fx = ts::random_fixture(321, 200);
    ScriptedMockBackend mock(fx.script);
    for (const double tau : {0.0, 2.0, 5.0, 25.0, kInfThreshold}) {
        for (const auto& pair : fx.pairs) {
            const MockEntry& e = fx.script.entries.at(pair.id);
            const double c = std::fabs(e.logp_a - e.logp_b);
            const JudgeTrace t = judge(pair, tau, JudgeMode::Gated, mock);
            const Verdict expected =
                (e.reflect_flips && c < tau) ? flip(e.v0) : e.v0;
            CHECK(t.final_verdict == expected);
        }
    }
}

TEST_CASE("an unparsable second verdict raises VerdictParseError") {
    struct RamblingBackend final : Backend {
        ScriptedMockBackend inner{ts::fixture_script10()};
        BackendCompletion complete(const std::string& prompt, const std::optional<std::string>& stop,
                                   int max_tokens, const std::string& tag) override {
            return inner.complete(prompt, stop, max_tokens, tag);
        }
        BackendCompletion continuation(const std::string&, int, const std::string&) override {
            BackendCompletion c;
            c.token_texts = {"hard", " to", " say", " really"};
            c.token_logprobs = {-1, -1, -1, -1};
            c.top_alternatives.resize(4);
            c.completion_token_count = 4;
            return c;
        }
        std::string describe() const override { return "rambling"; }
    } backend;
    PreferencePair pair = sample_pair();
    pair.id = "p7"; // low-confidence entry, routes to reflection
    CHECK_THROWS_AS(judge(pair, 5.0, JudgeMode::Gated, backend), VerdictParseError);
}

TEST_CASE("backend errors carry the pair id") {
    struct FailingBackend final : Backend {
        BackendCompletion complete(const std::string&, const std::optional<std::string>&, int,
                                   const std::string&) override {
            throw BackendError("connection refused");
        }
        BackendCompletion continuation(const std::string&, int, const std::string&) override {
            throw BackendError("connection refused");
        }
        std::string describe() const override { return "failing"; }
    } backend;
    try {
        judge(sample_pair(), 5.0, JudgeMode::Gated, backend);
        FAIL("expected BackendError");
    } catch (const BackendError& e) {
        CHECK(std::string(e.what()).find("p1") != std::string::npos);
    }
}
