#pragma once

// OpenAI-compatible chat-completions client with token logprobs enabled.
// Issues POST {endpoint}/v1/chat/completions and reads
// choices[0].logprobs.content[*] plus usage.completion_tokens.

#include <memory>
#include <string>

#include "camel/backend.hpp"

namespace camel {

// Maps a chat-completions response body onto BackendCompletion.
// Throws ProtocolError naming the first missing field.
BackendCompletion parse_chat_completion(const std::string& body_json);

class HttpBackend final : public Backend {
public:
    HttpBackend(std::string endpoint, std::string model_name,
                BackendDefaults defaults, std::string bearer_token = {});
    ~HttpBackend() override;

    BackendCompletion complete(const std::string& prompt,
                               const std::optional<std::string>& stop,
                               int max_tokens,
                               const std::string& instance_tag) override;

    BackendCompletion continuation(const std::string& prompt_with_prefix,
                                   int max_tokens,
                                   const std::string& instance_tag) override;

    bool healthy() override;
    std::string describe() const override { return "http:" + endpoint_; }

private:
    struct Impl;

    BackendCompletion request(const std::string& prompt,
                              const std::optional<std::string>& stop,
                              int max_tokens,
                              const std::string& instance_tag);

    std::string endpoint_;
    std::string model_name_;
    BackendDefaults defaults_;
    std::string bearer_token_;
    std::unique_ptr<Impl> impl_;
};

} // namespace camel
