#pragma once

// HTTP service exposing gated judging as a reward-model endpoint.
// POST /v1/judge {question, response_a, response_b, tau?} and GET /healthz.

#include <cstdint>
#include <memory>
#include <string>

#include "camel/backend.hpp"
#include "camel/protocol.hpp"

namespace camel::service {

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    double default_tau = 5.0;
    protocol::JudgeOptions judge;
};

// Handles one judge request body; exposed separately so the request path
// can be exercised without sockets. Returns the response body and status.
struct JudgeHttpResult {
    int status = 200;
    std::string body;
};
JudgeHttpResult handle_judge_request(const std::string& body, const ServiceConfig& config,
                                     Backend& backend);

class JudgeService {
public:
    JudgeService(ServiceConfig config, std::shared_ptr<Backend> backend);
    ~JudgeService();

    // Binds and serves until stop() is called. Returns false if the port
    // could not be bound.
    bool run();
    void stop();
    // Port actually bound (useful when config.port == 0).
    int port() const;
    bool wait_until_ready(int timeout_ms = 5000) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace camel::service
