#pragma once

// Backend abstraction over inference servers that expose per-token top
// log-probabilities. Two implementations exist: an OpenAI-compatible
// chat-completions HTTP client and a deterministic scripted mock.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "camel/errors.hpp"

namespace camel {

struct TokenLogprob {
    std::string text;
    double logprob = 0.0;
};

// One backend response, normalized across implementations. token_texts,
// token_logprobs and top_alternatives are parallel sequences; each
// top_alternatives list includes the sampled token at that position.
// completion_token_count is whatever the backend reports and need not
// equal token_texts.size().
struct BackendCompletion {
    std::vector<std::string> token_texts;
    std::vector<double> token_logprobs;
    std::vector<std::vector<TokenLogprob>> top_alternatives;
    std::int64_t completion_token_count = 0;

    std::string text() const {
        std::string out;
        for (const auto& t : token_texts) out += t;
        return out;
    }
};

struct BackendDefaults {
    double temperature = 0.0;       // deterministic decoding for judging
    int top_logprobs_depth = 5;     // both verdict letters must be observable
    int timeout_ms = 30000;
    int max_retries = 2;            // total attempts = max_retries + 1
    int max_inflight = 8;
};

// A request tag identifies the instance being judged (the pair id). The
// HTTP backend ignores it; the scripted mock keys its script with it.
class Backend {
public:
    virtual ~Backend() = default;

    virtual BackendCompletion complete(const std::string& prompt,
                                       const std::optional<std::string>& stop,
                                       int max_tokens,
                                       const std::string& instance_tag = {}) = 0;

    virtual BackendCompletion continuation(const std::string& prompt_with_prefix,
                                           int max_tokens,
                                           const std::string& instance_tag = {}) = 0;

    virtual bool healthy() { return true; }
    virtual std::string describe() const = 0;
};

// Parses a backend URI: "mock:<script.jsonl>" or "http(s)://host:port".
std::unique_ptr<Backend> make_backend(const std::string& uri,
                                      const std::string& model_name,
                                      const BackendDefaults& defaults,
                                      const std::string& bearer_token = {});

} // namespace camel
