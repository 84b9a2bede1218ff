#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "camel/http_backend.hpp"
#include "camel/mock_backend.hpp"
#include "camel/protocol.hpp"
#include "test_support.hpp"

using namespace camel;
namespace ts = camel::testsupport;

TEST_CASE("scripted completions round-trip through verdict extraction") {
    MockScript script;
    MockEntry e;
    e.v0 = Verdict::A;
    e.logp_a = -0.1;
    e.logp_b = -2.4;
    e.fast_tokens = 1;
    script.entries["p1"] = e;
    ScriptedMockBackend mock(script);

    const BackendCompletion c = mock.complete("prompt", std::string("]]"), 16, "p1");
    CHECK(c.completion_token_count == 1);
    const auto ex = protocol::extract_verdict_distribution(c);
    CHECK(ex.verdict == Verdict::A);
    CHECK(ex.dist.logp_a == -0.1);
    CHECK(ex.dist.logp_b == -2.4);
}

TEST_CASE("unknown ids fall back to the default entry") {
    MockScript script;
    script.default_entry.v0 = Verdict::B;
    script.default_entry.logp_a = -4.0;
    script.default_entry.logp_b = -0.5;
    ScriptedMockBackend mock(script);
    const auto ex = protocol::extract_verdict_distribution(mock.complete("p", std::nullopt, 8, "x9"));
    CHECK(ex.verdict == Verdict::B);
    CHECK(ex.dist.logp_b == -0.5);
}

TEST_CASE("mock synthesis is a pure function of script, id and phase") {
    ScriptedMockBackend mock(ts::fixture_script10());
    const std::string cont = "prompt\n[[A]]\n";
    for (int i = 0; i < 3; ++i) {
        const BackendCompletion a = mock.complete("prompt", std::nullopt, 8, "p7");
        const BackendCompletion b = mock.complete("prompt", std::nullopt, 8, "p7");
        CHECK(a.token_texts == b.token_texts);
        CHECK(a.token_logprobs == b.token_logprobs);
        CHECK(a.completion_token_count == b.completion_token_count);
        const BackendCompletion c = mock.continuation(cont, 512, "p7");
        const BackendCompletion d = mock.continuation(cont, 512, "p7");
        CHECK(c.text() == d.text());
    }
}

TEST_CASE("every position carries at least five alternatives including the sampled token") {
    ScriptedMockBackend mock(ts::fixture_script10());
    const BackendCompletion c = mock.complete("prompt", std::nullopt, 8, "p1");
    REQUIRE(c.top_alternatives.size() == c.token_texts.size());
    for (std::size_t i = 0; i < c.token_texts.size(); ++i) {
        CHECK(c.top_alternatives[i].size() >= 5);
        bool sampled_present = false;
        for (const auto& alt : c.top_alternatives[i])
            sampled_present = sampled_present || alt.text == c.token_texts[i];
        CHECK(sampled_present);
    }
}

TEST_CASE("continuation flips the forced verdict only when scripted") {
    MockScript script;
    MockEntry flipper;
    flipper.v0 = Verdict::A;
    flipper.reflect_flips = true;
    script.entries["f"] = flipper;
    MockEntry keeper;
    keeper.v0 = Verdict::A;
    keeper.reflect_flips = false;
    keeper.reflection_tokens = 40;
    script.entries["k"] = keeper;
    ScriptedMockBackend mock(script);

    const auto flipped = protocol::parse_final_verdict(mock.continuation("p\n[[A]]\n", 512, "f"));
    CHECK(flipped.verdict == Verdict::B);
    const auto kept = protocol::parse_final_verdict(mock.continuation("p\n[[A]]\n", 512, "k"));
    CHECK(kept.verdict == Verdict::A);
}

TEST_CASE("scripted reflection token counts pass through") {
    MockScript script;
    script.default_entry.reflection_tokens = 40;
    ScriptedMockBackend mock(script);
    CHECK(mock.continuation("p\n[[B]]\n", 512, "any").completion_token_count == 40);
}

TEST_CASE("mock scripts survive a save/load round trip") {
    const auto dir = ts::make_temp_dir("camel-script");
    const auto path = dir / "script.jsonl";
    MockScript script = ts::fixture_script10();
    script.seed = 7;
    script.default_entry.v0 = Verdict::B;
    save_mock_script(script, path);
    const MockScript loaded = load_mock_script(path);
    CHECK(loaded.seed == 7);
    CHECK(loaded.default_entry.v0 == Verdict::B);
    REQUIRE(loaded.entries.size() == script.entries.size());
    for (const auto& [id, entry] : script.entries) {
        const MockEntry& got = loaded.entries.at(id);
        CHECK(got.v0 == entry.v0);
        CHECK(got.logp_a == entry.logp_a);
        CHECK(got.logp_b == entry.logp_b);
        CHECK(got.reflect_flips == entry.reflect_flips);
        CHECK(got.fast_tokens == entry.fast_tokens);
        CHECK(got.reflection_tokens == entry.reflection_tokens);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("mock script loading validates entries") {
    const auto dir = ts::make_temp_dir("camel-script-bad");
    const auto path = dir / "bad.jsonl";
    SUBCASE("positive log-probabilities are rejected") {
        std::ofstream(path) << R"({"pair_id":"x","logp_a":0.5})" << "\n";
        CHECK_THROWS_AS(load_mock_script(path), ParseError);
    }
    SUBCASE("duplicate ids are rejected") {
        std::ofstream(path) << R"({"pair_id":"x"})" << "\n" << R"({"pair_id":"x"})" << "\n";
        CHECK_THROWS_AS(load_mock_script(path), DuplicateId);
    }
    SUBCASE("invalid verdicts are rejected") {
        std::ofstream(path) << R"({"pair_id":"x","v0":"Z"})" << "\n";
        CHECK_THROWS_AS(load_mock_script(path), ParseError);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("chat-completion fixtures parse to the stated margins") {
    const auto a = parse_chat_completion(
        ts::read_file(ts::fixtures_dir() / "http_completion_a_margin16.json"));
    const auto ex_a = protocol::extract_verdict_distribution(a);
    CHECK(ex_a.verdict == Verdict::A);
    CHECK(confidence(ex_a.dist) == doctest::Approx(1.6).epsilon(1e-12));
    CHECK(a.completion_token_count == 1);

    const auto b = parse_chat_completion(
        ts::read_file(ts::fixtures_dir() / "http_completion_b_margin23.json"));
    const auto ex_b = protocol::extract_verdict_distribution(b);
    CHECK(ex_b.verdict == Verdict::B);
    CHECK(confidence(ex_b.dist) == doctest::Approx(2.3).epsilon(1e-12));
}

TEST_CASE("missing logprob fields raise ProtocolError naming the field") {
    try {
        parse_chat_completion(
            ts::read_file(ts::fixtures_dir() / "http_completion_missing_logprobs.json"));
        FAIL("expected ProtocolError");
    } catch (const ProtocolError& e) {
        CHECK(std::string(e.what()).find("choices[0].logprobs") != std::string::npos);
    }
    try {
        parse_chat_completion(
            ts::read_file(ts::fixtures_dir() / "http_completion_missing_usage_tokens.json"));
        FAIL("expected ProtocolError");
    } catch (const ProtocolError& e) {
        CHECK(std::string(e.what()).find("usage.completion_tokens") != std::string::npos);
    }
}

TEST_CASE("http transport: success, retry on 500, and health checks") {
    httplib::Server server;
    std::atomic<int> completion_calls{0};
    std::atomic<bool> fail_mode{false};
    const std::string fixture =
        ts::read_file(ts::fixtures_dir() / "http_completion_a_margin16.json");

    server.Post("/v1/chat/completions",
                [&](const httplib::Request&, httplib::Response& res) {
                    completion_calls++;
                    if (fail_mode) {
                        res.status = 500;
                        res.set_content("boom", "text/plain");
                        return;
                    }
                    res.set_content(fixture, "application/json");
                });
    server.Get("/v1/models", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"data":[{"id":"qwen3-14b"}]})", "application/json");
    });

    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread server_thread([&] { server.listen_after_bind(); });
    while (!server.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(2));

    BackendDefaults defaults;
    defaults.max_retries = 2;
    defaults.timeout_ms = 5000;
    HttpBackend backend("http://127.0.0.1:" + std::to_string(port), "qwen3-14b", defaults);

    SUBCASE("successful request maps onto a completion") {
        const BackendCompletion c = backend.complete("prompt", std::string("]]"), 16, "p1");
        CHECK(c.completion_token_count == 1);
        const auto ex = protocol::extract_verdict_distribution(c);
        CHECK(ex.verdict == Verdict::A);
    }
    SUBCASE("a 500 response is retried exactly max_retries times") {
        fail_mode = true;
        completion_calls = 0;
        CHECK_THROWS_AS(backend.complete("prompt", std::nullopt, 16, "p1"), BackendError);
        CHECK(completion_calls.load() == 3); // 1 attempt + 2 retries
    }
    SUBCASE("health check hits /v1/models") { CHECK(backend.healthy()); }

    server.stop();
    server_thread.join();
}

TEST_CASE("gated judging runs end to end over the wire protocol") {
    // The fast phase returns margin 1.6 (< tau 5), so the judge issues a
    // continuation; the server recognizes the forced prefix and replies
    // with the reflection fixture.
    httplib::Server server;
    const std::string fast_body =
        ts::read_file(ts::fixtures_dir() / "http_completion_a_margin16.json");
    const std::string reflection_body =
        ts::read_file(ts::fixtures_dir() / "http_completion_reflection.json");
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        const auto body = nlohmann::json::parse(req.body);
        const std::string prompt = body.at("messages")[0].at("content").get<std::string>();
        const bool is_continuation = prompt.find("[[A]]\n") != std::string::npos;
        res.set_content(is_continuation ? reflection_body : fast_body, "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread server_thread([&] { server.listen_after_bind(); });
    while (!server.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(2));

    HttpBackend backend("http://127.0.0.1:" + std::to_string(port), "qwen3-14b", {});
    PreferencePair pair;
    pair.id = "wire";
    pair.question = "q";
    pair.response_a = "x";
    pair.response_b = "y";
    const JudgeTrace t = protocol::judge(pair, 5.0, JudgeMode::Gated, backend);
    CHECK(t.initial_verdict == Verdict::A);
    CHECK(t.gate.decision == GateRoute::Reflect);
    CHECK(t.final_verdict == Verdict::B);
    REQUIRE(t.reflection.has_value());
    CHECK(*t.reflection == "Comparing accuracy first, the second response is wrong.");
    CHECK(t.completion_tokens == 1 + 17);

    server.stop();
    server_thread.join();
}

TEST_CASE("backend uris are dispatched by scheme") {
    const auto dir = ts::make_temp_dir("camel-uri");
    const auto script = dir / "s.jsonl";
    save_mock_script(ts::fixture_script10(), script);
    BackendDefaults defaults;
    const auto mock = make_backend("mock:" + script.string(), "m", defaults);
    CHECK(mock->describe() == "mock");
    const auto http = make_backend("http://127.0.0.1:1", "m", defaults);
    CHECK(http->describe().rfind("http:", 0) == 0);
    CHECK_THROWS_AS(make_backend("ftp://x", "m", defaults), ConfigError);
    CHECK_THROWS_AS(make_backend("https://x", "m", defaults), ConfigError);
    std::filesystem::remove_all(dir);
}
