#include "camel/service.hpp"

#include <chrono>
#include <cmath>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "camel/core.hpp"

namespace camel::service {

namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

JudgeHttpResult error_response(int status, const std::string& type, const std::string& message) {
    ordered_json j;
    j["error"]["type"] = type;
    j["error"]["message"] = message;
    return {status, j.dump() + "\n"};
}

// tau arrives as a number or the literal "inf".
double parse_tau_field(const json& v) {
    if (v.is_string()) {
        if (v.get<std::string>() == "inf") return kInfThreshold;
        throw Error("tau must be a non-negative number or \"inf\"");
    }
    if (!v.is_number()) throw Error("tau must be a non-negative number or \"inf\"");
    const double tau = v.get<double>();
    if (std::isnan(tau) || tau < 0.0) throw Error("tau must be >= 0");
    return tau;
}

} // namespace

JudgeHttpResult handle_judge_request(const std::string& body, const ServiceConfig& config,
                                     Backend& backend) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception& e) {
        return error_response(400, "bad_request", std::string("invalid JSON body: ") + e.what());
    }
    PreferencePair pair;
    for (const char* field : {"question", "response_a", "response_b"}) {
        if (!j.contains(field) || !j.at(field).is_string() ||
            j.at(field).get<std::string>().empty())
            return error_response(400, "bad_request",
                                  std::string("missing or empty field: ") + field);
    }
    pair.question = j.at("question").get<std::string>();
    pair.response_a = j.at("response_a").get<std::string>();
    pair.response_b = j.at("response_b").get<std::string>();
    pair.id = j.value("id", std::string{});

    double tau = config.default_tau;
    if (j.contains("tau")) {
        try {
            tau = parse_tau_field(j.at("tau"));
        } catch (const std::exception& e) {
            return error_response(400, "bad_request", e.what());
        }
    }

    try {
        const JudgeTrace trace =
            protocol::judge(pair, tau, JudgeMode::Gated, backend, config.judge);
        ordered_json out;
        out["verdict"] = to_string(map_verdict(trace.final_verdict));
        out["confidence"] = trace.gate.confidence;
        out["reflected"] = trace.reflection.has_value();
        out["completion_tokens"] = trace.completion_tokens;
        if (trace.reflection) {
            out["reflection"] = *trace.reflection;
        } else {
            out["reflection"] = nullptr;
        }
        return {200, out.dump() + "\n"};
    } catch (const BackendError& e) {
        return error_response(502, "backend_error", e.what());
    } catch (const Error& e) {
        return error_response(502, "judge_error", e.what());
    }
}

struct JudgeService::Impl {
    ServiceConfig config;
    std::shared_ptr<Backend> backend;
    httplib::Server server;
    int bound_port = 0;
};

JudgeService::JudgeService(ServiceConfig config, std::shared_ptr<Backend> backend)
    : impl_(std::make_unique<Impl>()) {
    impl_->config = std::move(config);
    impl_->backend = std::move(backend);

    impl_->server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
        res.set_content("ok\n", "text/plain");
    });
    impl_->server.Post("/v1/judge", [this](const httplib::Request& req, httplib::Response& res) {
        const JudgeHttpResult out =
            handle_judge_request(req.body, impl_->config, *impl_->backend);
        res.status = out.status;
        res.set_content(out.body, "application/json");
    });
}

JudgeService::~JudgeService() {
    if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

bool JudgeService::run() {
    if (impl_->config.port == 0) {
        impl_->bound_port = impl_->server.bind_to_any_port(impl_->config.host);
        if (impl_->bound_port < 0) return false;
    } else {
        impl_->bound_port = impl_->config.port;
        if (!impl_->server.bind_to_port(impl_->config.host, impl_->config.port)) return false;
    }
    return impl_->server.listen_after_bind();
}

void JudgeService::stop() { impl_->server.stop(); }

int JudgeService::port() const { return impl_->bound_port; }

bool JudgeService::wait_until_ready(int timeout_ms) const {
    const auto deadline =
        std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    while (std::chrono::steady_clock::now() < deadline) {
        if (impl_->server.is_running()) return true;
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    return impl_->server.is_running();
}

} // namespace camel::service
