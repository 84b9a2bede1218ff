#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "camel/augment.hpp"
#include "camel/protocol.hpp"
#include "test_support.hpp"

using namespace camel;

namespace ts = camel::testsupport;

TEST_CASE("one pair becomes two instances, A-forced then B-forced") {
    const auto pairs = ts::fixture_pairs10();
    const auto instances = camel::augment::augment(std::span(pairs.data(), 1));
    REQUIRE(instances.size() == 2);
    CHECK(instances[0].forced_v0 == Verdict::A);
    CHECK(instances[1].forced_v0 == Verdict::B);
    CHECK(instances[0].source_id == "p1");
    CHECK(instances[1].source_id == "p1");
}

TEST_CASE("N pairs become 2N instances in stable source order") {
    const auto pairs = ts::fixture_pairs10();
    const auto instances = camel::augment::augment(pairs);
    REQUIRE(instances.size() == 2 * pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        CHECK(instances[2 * i].source_id == pairs[i].id);
        CHECK(instances[2 * i + 1].source_id == pairs[i].id);
        CHECK(instances[2 * i].forced_v0 == Verdict::A);
        CHECK(instances[2 * i + 1].forced_v0 == Verdict::B);
        CHECK(instances[2 * i].label == pairs[i].label);
        CHECK(instances[2 * i + 1].label == pairs[i].label);
    }
}

TEST_CASE("prompt text is the reflection continuation of the two-verdict rendering") {
    const auto pairs = ts::fixture_pairs10();
    const auto instances = camel::augment::augment(std::span(pairs.data(), 1));
    const auto prompt = protocol::render_prompt(pairs[0], protocol::TemplateKind::TwoVerdict);
    CHECK(instances[0].prompt_text == protocol::build_reflection_continuation(prompt, Verdict::A));
    CHECK(instances[1].prompt_text == protocol::build_reflection_continuation(prompt, Verdict::B));
    CHECK(instances[0].prompt_text.ends_with("[[A]]\n"));
    CHECK(instances[1].prompt_text.ends_with("[[B]]\n"));
}

TEST_CASE("rollout labeling rewards the final verdict and ignores the prefix") {
    camel::augment::AugmentedInstance inst;
    inst.label = Label::b;
    inst.forced_v0 = Verdict::A;
    CHECK(camel::augment::label_rollout(inst, Verdict::B) == 1);  // revision rewarded
    inst.label = Label::a;
    CHECK(camel::augment::label_rollout(inst, Verdict::A) == 1);  // confirmation rewarded
    inst.forced_v0 = Verdict::B;
    CHECK(camel::augment::label_rollout(inst, Verdict::B) == -1); // echoing the wrong prefix penalized
}

TEST_CASE("an oracle earns +1 per instance while an echo policy averages zero") {
    const auto pairs = ts::fixture_pairs10();
    const auto instances = camel::augment::augment(pairs);
    int oracle_total = 0;
    int echo_total = 0;
    for (const auto& inst : instances) {
        const Verdict oracle_v1 = inst.label == Label::a ? Verdict::A : Verdict::B;
        oracle_total += camel::augment::label_rollout(inst, oracle_v1);
        echo_total += camel::augment::label_rollout(inst, inst.forced_v0);
    }
    CHECK(oracle_total == static_cast<int>(instances.size()));
    CHECK(echo_total == 0);
}

TEST_CASE("exactly one forced prefix per source matches the label") {
    const auto pairs = ts::fixture_pairs10();
    const auto instances = camel::augment::augment(pairs);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const bool first_matches = map_verdict(instances[2 * i].forced_v0) == pairs[i].label;
        const bool second_matches = map_verdict(instances[2 * i + 1].forced_v0) == pairs[i].label;
        CHECK(first_matches != second_matches);
    }
}

TEST_CASE("augmented instances export as schema-stable jsonl") {
    const auto pairs = ts::fixture_pairs10();
    const auto instances = camel::augment::augment(std::span(pairs.data(), 3));
    const auto dir = ts::make_temp_dir("camel-augment");
    camel::augment::write_augmented_jsonl(instances, dir / "a.jsonl");
    const std::string text = ts::read_file(dir / "a.jsonl");
    std::size_t lines = 0;
    for (const char c : text) lines += c == '\n' ? 1 : 0;
    CHECK(lines == 6);
    CHECK(text.find("\"source_id\":\"p1\"") != std::string::npos);
    CHECK(text.find("\"forced_v0\":\"A\"") != std::string::npos);
    CHECK(text.find("\"forced_v0\":\"B\"") != std::string::npos);
    CHECK(text.find("\"prompt_text\":") != std::string::npos);
    camel::augment::write_augmented_jsonl(instances, dir / "b.jsonl");
    CHECK(ts::read_file(dir / "b.jsonl") == text);
    std::filesystem::remove_all(dir);
}
