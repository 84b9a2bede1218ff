#include "camel/http_backend.hpp"

#include <algorithm>
#include <condition_variable>
#include <mutex>

#include <httplib.h>
#include <json.hpp>

#include "camel/mock_backend.hpp"

namespace camel {

namespace {

using nlohmann::json;

const json* field_or_null(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return nullptr;
    return &*it;
}

[[noreturn]] void missing(const std::string& field) {
    throw ProtocolError("response missing logprob field: " + field);
}

// Counting semaphore with a runtime-configured cap.
class InflightCap {
public:
    explicit InflightCap(int cap) : cap_(std::max(cap, 1)) {}
    void acquire() {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return inflight_ < cap_; });
        ++inflight_;
    }
    void release() {
        {
            std::lock_guard lock(mu_);
            --inflight_;
        }
        cv_.notify_one();
    }

private:
    std::mutex mu_;
    std::condition_variable cv_;
    int cap_;
    int inflight_ = 0;
};

struct CapGuard {
    InflightCap& cap;
    explicit CapGuard(InflightCap& c) : cap(c) { cap.acquire(); }
    ~CapGuard() { cap.release(); }
};

} // namespace

BackendCompletion parse_chat_completion(const std::string& body_json) {
    json j;
    try {
        j = json::parse(body_json);
    } catch (const json::exception& e) {
        throw ProtocolError(std::string("response is not valid JSON: ") + e.what());
    }
    const json* choices = field_or_null(j, "choices");
    if (!choices || !choices->is_array() || choices->empty()) missing("choices");
    const json& choice = (*choices)[0];
    const json* logprobs = field_or_null(choice, "logprobs");
    if (!logprobs) missing("choices[0].logprobs");
    const json* content = field_or_null(*logprobs, "content");
    if (!content || !content->is_array()) missing("choices[0].logprobs.content");

    BackendCompletion out;
    std::size_t idx = 0;
    for (const json& item : *content) {
        const std::string at = "choices[0].logprobs.content[" + std::to_string(idx) + "]";
        const json* token = field_or_null(item, "token");
        if (!token || !token->is_string()) missing(at + ".token");
        const json* logprob = field_or_null(item, "logprob");
        if (!logprob || !logprob->is_number()) missing(at + ".logprob");
        const json* tops = field_or_null(item, "top_logprobs");
        if (!tops || !tops->is_array()) missing(at + ".top_logprobs");

        out.token_texts.push_back(token->get<std::string>());
        // Clamp stray positive wire values; verdict log-probabilities are <= 0.
        out.token_logprobs.push_back(std::min(logprob->get<double>(), 0.0));
        std::vector<TokenLogprob> alts;
        alts.reserve(tops->size());
        for (const json& alt : *tops) {
            const json* alt_token = field_or_null(alt, "token");
            const json* alt_logprob = field_or_null(alt, "logprob");
            if (!alt_token || !alt_token->is_string()) missing(at + ".top_logprobs[].token");
            if (!alt_logprob || !alt_logprob->is_number()) missing(at + ".top_logprobs[].logprob");
            alts.push_back(
                {alt_token->get<std::string>(), std::min(alt_logprob->get<double>(), 0.0)});
        }
        out.top_alternatives.push_back(std::move(alts));
        ++idx;
    }

    const json* usage = field_or_null(j, "usage");
    if (!usage) missing("usage");
    const json* completion_tokens = field_or_null(*usage, "completion_tokens");
    if (!completion_tokens || !completion_tokens->is_number())
        missing("usage.completion_tokens");
    out.completion_token_count = completion_tokens->get<std::int64_t>();
    return out;
}

struct HttpBackend::Impl {
    explicit Impl(int cap) : inflight(cap) {}
    InflightCap inflight;
};

HttpBackend::HttpBackend(std::string endpoint, std::string model_name, BackendDefaults defaults,
                         std::string bearer_token)
    : endpoint_(std::move(endpoint)),
      model_name_(std::move(model_name)),
      defaults_(defaults),
      bearer_token_(std::move(bearer_token)),
      impl_(std::make_unique<Impl>(defaults.max_inflight)) {
    if (defaults_.top_logprobs_depth < 2)
        throw ConfigError("top_logprobs_depth must be >= 2 so both verdict letters are observable");
}

HttpBackend::~HttpBackend() = default;

BackendCompletion HttpBackend::request(const std::string& prompt,
                                       const std::optional<std::string>& stop, int max_tokens,
                                       const std::string& instance_tag) {
    json body;
    body["model"] = model_name_;
    body["messages"] = json::array({json{{"role", "user"}, {"content", prompt}}});
    body["temperature"] = defaults_.temperature;
    body["max_tokens"] = max_tokens;
    body["logprobs"] = true;
    body["top_logprobs"] = defaults_.top_logprobs_depth;
    if (stop) body["stop"] = json::array({*stop});
    const std::string payload = body.dump();

    CapGuard guard(impl_->inflight);
    std::string last_error;
    const int attempts = defaults_.max_retries + 1;
    for (int attempt = 0; attempt < attempts; ++attempt) {
        httplib::Client client(endpoint_);
        client.set_connection_timeout(defaults_.timeout_ms / 1000,
                                      (defaults_.timeout_ms % 1000) * 1000);
        client.set_read_timeout(defaults_.timeout_ms / 1000, (defaults_.timeout_ms % 1000) * 1000);
        httplib::Headers headers;
        if (!bearer_token_.empty())
            headers.emplace("Authorization", "Bearer " + bearer_token_);
        auto res = client.Post("/v1/chat/completions", headers, payload, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 500) {
            last_error = "status " + std::to_string(res->status);
            continue;
        }
        if (res->status < 200 || res->status >= 300)
            throw BackendError("backend " + endpoint_ + " (" + instance_tag + "): status " +
                               std::to_string(res->status) + " " + res->body.substr(0, 200));
        return parse_chat_completion(res->body);
    }
    throw BackendError("backend " + endpoint_ + " (" + instance_tag + "): " + last_error +
                       " after " + std::to_string(attempts) + " attempts");
}

BackendCompletion HttpBackend::complete(const std::string& prompt,
                                        const std::optional<std::string>& stop, int max_tokens,
                                        const std::string& instance_tag) {
    return request(prompt, stop, max_tokens, instance_tag);
}

BackendCompletion HttpBackend::continuation(const std::string& prompt_with_prefix, int max_tokens,
                                            const std::string& instance_tag) {
    return request(prompt_with_prefix, std::nullopt, max_tokens, instance_tag);
}

bool HttpBackend::healthy() {
    httplib::Client client(endpoint_);
    client.set_connection_timeout(0, 2000 * 1000LL);
    httplib::Headers headers;
    if (!bearer_token_.empty()) headers.emplace("Authorization", "Bearer " + bearer_token_);
    auto res = client.Get("/v1/models", headers);
    return res && res->status >= 200 && res->status < 300;
}

std::unique_ptr<Backend> make_backend(const std::string& uri, const std::string& model_name,
                                      const BackendDefaults& defaults,
                                      const std::string& bearer_token) {
    if (uri.rfind("mock:", 0) == 0)
        return std::make_unique<ScriptedMockBackend>(load_mock_script(uri.substr(5)));
    if (uri.rfind("http://", 0) == 0)
        return std::make_unique<HttpBackend>(uri, model_name, defaults, bearer_token);
    if (uri.rfind("https://", 0) == 0)
        throw ConfigError("https backends require a TLS-enabled build; use http://");
    throw ConfigError("unrecognized backend uri: " + uri + " (expected mock:<script> or http://...)");
}

} // namespace camel
