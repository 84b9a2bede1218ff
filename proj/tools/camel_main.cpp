// Operator CLI: batch judging, threshold sweeps, calibration exports,
// counterfactual augmentation, the toy GRPO trainer, and the judge service.
//
// Exit codes: 0 success, 1 finished with pair-level errors, 2 fatal
// config/IO error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "camel/augment.hpp"
#include "camel/backend.hpp"
#include "camel/format.hpp"
#include "camel/grpo_toy.hpp"
#include "camel/harness.hpp"
#include "camel/protocol.hpp"
#include "camel/service.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

struct AppConfig {
    std::string backend_uri;
    std::string model = "default-model";
    std::string bearer_token;
    camel::BackendDefaults backend;
    double tau = 5.0; // default confidence threshold
    std::string template_version = camel::protocol::kTemplateVersion;
    int concurrency = 1;
    camel::protocol::JudgeOptions judge;
    std::string serve_host = "127.0.0.1";
    int serve_port = 8080;
    camel::toy::ToyTrainConfig toy;
    int toy_world_size = 400;
    double toy_feature_noise = 0.0;
};

double parse_tau(const std::string& text) {
    if (text == "inf") return camel::kInfThreshold;
    std::size_t used = 0;
    double tau = 0.0;
    try {
        tau = std::stod(text, &used);
    } catch (const std::exception&) {
        throw camel::ConfigError("invalid tau: " + text);
    }
    if (used != text.size() || std::isnan(tau) || tau < 0.0)
        throw camel::ConfigError("invalid tau: " + text + " (expected a number >= 0 or \"inf\")");
    return tau;
}

std::vector<double> parse_tau_list(const std::string& text) {
    std::vector<double> taus;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t comma = text.find(',', pos);
        const std::string item =
            text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        if (item.empty()) throw camel::ConfigError("empty entry in tau list: " + text);
        taus.push_back(parse_tau(item));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return taus;
}

camel::JudgeMode parse_mode(const std::string& text) {
    if (text == "fast") return camel::JudgeMode::Fast;
    if (text == "reflection") return camel::JudgeMode::Reflection;
    if (text == "gated") return camel::JudgeMode::Gated;
    throw camel::ConfigError("invalid mode: " + text + " (fast|reflection|gated)");
}

camel::harness::EmitFormat parse_format(const std::string& text) {
    if (text == "csv") return camel::harness::EmitFormat::Csv;
    if (text == "json") return camel::harness::EmitFormat::Json;
    throw camel::ConfigError("invalid format: " + text + " (csv|json)");
}

void load_config_file(AppConfig& cfg, const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw camel::ConfigError("cannot open config file " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw camel::ConfigError("config " + path.string() + ": " + e.what());
    }
    if (j.contains("backend")) {
        const json& b = j.at("backend");
        if (b.contains("uri")) cfg.backend_uri = b.at("uri").get<std::string>();
        if (b.contains("model")) cfg.model = b.at("model").get<std::string>();
        if (b.contains("bearer_token")) cfg.bearer_token = b.at("bearer_token").get<std::string>();
        if (b.contains("top_logprobs_depth"))
            cfg.backend.top_logprobs_depth = b.at("top_logprobs_depth").get<int>();
        if (b.contains("temperature")) cfg.backend.temperature = b.at("temperature").get<double>();
        if (b.contains("timeout_ms")) cfg.backend.timeout_ms = b.at("timeout_ms").get<int>();
        if (b.contains("max_retries")) cfg.backend.max_retries = b.at("max_retries").get<int>();
        if (b.contains("max_inflight")) cfg.backend.max_inflight = b.at("max_inflight").get<int>();
    }
    if (j.contains("tau")) {
        const json& t = j.at("tau");
        cfg.tau = t.is_string() ? parse_tau(t.get<std::string>()) : t.get<double>();
    }
    if (j.contains("template_version")) {
        cfg.template_version = j.at("template_version").get<std::string>();
        if (cfg.template_version != camel::protocol::kTemplateVersion)
            throw camel::ConfigError("unsupported template_version: " + cfg.template_version);
    }
    if (j.contains("concurrency")) cfg.concurrency = j.at("concurrency").get<int>();
    if (j.contains("judge")) {
        const json& jj = j.at("judge");
        if (jj.contains("max_fast_tokens"))
            cfg.judge.max_fast_tokens = jj.at("max_fast_tokens").get<int>();
        if (jj.contains("max_reflection_tokens"))
            cfg.judge.max_reflection_tokens = jj.at("max_reflection_tokens").get<int>();
        if (jj.contains("reflection_cue"))
            cfg.judge.reflection_cue = jj.at("reflection_cue").get<std::string>();
    }
    if (j.contains("serve")) {
        const json& s = j.at("serve");
        if (s.contains("host")) cfg.serve_host = s.at("host").get<std::string>();
        if (s.contains("port")) cfg.serve_port = s.at("port").get<int>();
    }
    if (j.contains("toy")) {
        const json& t = j.at("toy");
        if (t.contains("group_size")) cfg.toy.group_size = t.at("group_size").get<int>();
        if (t.contains("batch_size")) cfg.toy.batch_size = t.at("batch_size").get<int>();
        if (t.contains("learning_rate"))
            cfg.toy.learning_rate = t.at("learning_rate").get<double>();
        if (t.contains("beta")) cfg.toy.beta = t.at("beta").get<double>();
        if (t.contains("steps")) cfg.toy.steps = t.at("steps").get<int>();
        if (t.contains("epsilon")) cfg.toy.epsilon = t.at("epsilon").get<double>();
        if (t.contains("augmented")) cfg.toy.augmented = t.at("augmented").get<bool>();
        if (t.contains("seed")) cfg.toy.seed = t.at("seed").get<std::uint64_t>();
        if (t.contains("initial_head_scale"))
            cfg.toy.initial_head_scale = t.at("initial_head_scale").get<double>();
        if (t.contains("n")) cfg.toy_world_size = t.at("n").get<int>();
        if (t.contains("feature_noise")) cfg.toy_feature_noise = t.at("feature_noise").get<double>();
    }
}

void apply_env_overrides(AppConfig& cfg) {
    if (const char* endpoint = std::getenv("CAMEL_BACKEND_ENDPOINT")) cfg.backend_uri = endpoint;
    if (const char* token = std::getenv("CAMEL_API_TOKEN")) cfg.bearer_token = token;
}

std::unique_ptr<camel::Backend> open_backend(const AppConfig& cfg) {
    if (cfg.backend_uri.empty())
        throw camel::ConfigError("no backend configured (use --backend, a config file, or "
                                 "CAMEL_BACKEND_ENDPOINT)");
    return camel::make_backend(cfg.backend_uri, cfg.model, cfg.backend, cfg.bearer_token);
}

void report_pair_errors(const std::vector<camel::harness::PairError>& errors) {
    for (const auto& e : errors)
        std::cerr << "error: pair " << e.pair_id << ": " << e.message << "\n";
}

int cmd_judge(const AppConfig& cfg, const std::string& dataset, const std::string& tau_text,
              const std::string& mode_text, const std::string& out_dir, bool swap_check) {
    const double tau = tau_text.empty() ? cfg.tau : parse_tau(tau_text);
    const camel::JudgeMode mode = parse_mode(mode_text);
    const auto pairs = camel::harness::load_dataset(dataset);
    auto backend = open_backend(cfg);

    camel::harness::EvalOptions opts;
    opts.concurrency = cfg.concurrency;
    opts.judge = cfg.judge;
    const camel::harness::EvalResult result =
        camel::harness::evaluate(pairs, tau, mode, *backend, opts);

    fs::create_directories(out_dir);
    camel::harness::emit_traces(result.records, fs::path(out_dir) / "traces.jsonl");
    camel::harness::emit_report(result.report, camel::harness::EmitFormat::Json,
                                fs::path(out_dir) / "report.json");
    report_pair_errors(result.errors);
    std::cout << "judged " << result.report.n << " pairs: accuracy="
              << camel::format_number(result.report.accuracy)
              << " reflect_rate=" << camel::format_number(result.report.reflect_rate)
              << " avg_tokens=" << camel::format_number(result.report.avg_completion_tokens)
              << " errors=" << result.report.error_count << "\n";

    if (swap_check) {
        const auto consistency =
            camel::harness::position_swap_consistency(pairs, tau, mode, *backend, opts);
        std::cout << "position-swap agreement: "
                  << camel::format_number(consistency.agreement_rate) << " over "
                  << consistency.n << " pairs\n";
    }
    return result.report.error_count > 0 ? 1 : 0;
}

int cmd_sweep(const AppConfig& cfg, const std::string& dataset, const std::string& taus_text,
              const std::string& out_file, const std::string& format_text) {
    const std::vector<double> taus = parse_tau_list(taus_text);
    const auto pairs = camel::harness::load_dataset(dataset);
    auto backend = open_backend(cfg);
    camel::harness::EvalOptions opts;
    opts.concurrency = cfg.concurrency;
    opts.judge = cfg.judge;
    const auto points = camel::harness::sweep(pairs, taus, *backend, opts);
    camel::harness::emit_sweep(points, parse_format(format_text), out_file);
    std::cout << "swept " << points.size() << " thresholds over " << pairs.size()
              << " pairs -> " << out_file << "\n";
    return 0;
}

int cmd_calibrate(const AppConfig& cfg, const std::string& dataset, double bin_width,
                  const std::string& out_file, const std::string& format_text,
                  const std::string& histogram_file, const std::string& split_text) {
    const auto pairs = camel::harness::load_dataset(dataset);
    auto backend = open_backend(cfg);
    camel::harness::EvalOptions opts;
    opts.concurrency = cfg.concurrency;
    opts.judge = cfg.judge;
    // Calibration studies the fast verdict, so records are gathered in
    // Fast mode: one cheap call per pair.
    const auto result =
        camel::harness::evaluate(pairs, 0.0, camel::JudgeMode::Fast, *backend, opts);
    const auto bins = camel::harness::calibration(result.records, bin_width);
    camel::harness::emit_calibration(bins, parse_format(format_text), out_file);
    if (!histogram_file.empty()) {
        const auto split = split_text == "correctness"
                               ? camel::harness::HistogramSplit::ByCorrectness
                               : camel::harness::HistogramSplit::Overall;
        const auto hist = camel::harness::confidence_histogram(result.records, split, bin_width);
        camel::harness::emit_histogram(hist, parse_format(format_text), histogram_file);
    }
    report_pair_errors(result.errors);
    std::cout << "calibrated " << result.records.size() << " records into " << bins.bins.size()
              << " bins -> " << out_file << "\n";
    return result.errors.empty() ? 0 : 1;
}

int cmd_augment(const std::string& in_file, const std::string& out_file) {
    const auto pairs = camel::harness::load_dataset(in_file);
    const auto instances = camel::augment::augment(pairs);
    camel::augment::write_augmented_jsonl(instances, out_file);
    std::cout << "augmented " << pairs.size() << " pairs into " << instances.size()
              << " instances -> " << out_file << "\n";
    return 0;
}

int cmd_train_toy(const AppConfig& cfg, const std::string& out_file,
                  const std::string& metrics_file) {
    const camel::toy::World world =
        camel::toy::generate_world(cfg.toy.seed, cfg.toy_world_size, cfg.toy_feature_noise);
    const camel::toy::TrainResult result = camel::toy::train(world, cfg.toy);
    camel::toy::write_training_log_csv(result.log, out_file);

    // Held-out evaluation on a world the trainer never saw.
    const camel::toy::World holdout = camel::toy::generate_world(
        cfg.toy.seed + 1000, cfg.toy_world_size, cfg.toy_feature_noise);
    const auto metrics = camel::toy::self_correction_metrics(result.params, holdout, 0.5);

    ordered_json j;
    j["augmented"] = cfg.toy.augmented;
    j["steps"] = cfg.toy.steps;
    j["flip_rate_when_wrong"] = metrics.flip_rate_when_wrong;
    j["echo_rate_when_right"] = metrics.echo_rate_when_right;
    j["final_accuracy"] = metrics.final_accuracy;
    j["initial_accuracy"] = metrics.initial_accuracy;
    const std::string metrics_json = j.dump(2) + "\n";
    std::cout << metrics_json;
    if (!metrics_file.empty()) {
        std::ofstream out(metrics_file, std::ios::binary);
        if (!out) throw camel::WriteError("cannot open " + metrics_file + " for writing");
        out << metrics_json;
    }
    return 0;
}

int cmd_serve(const AppConfig& cfg, const std::string& tau_text) {
    auto backend = std::shared_ptr<camel::Backend>(open_backend(cfg));
    if (!backend->healthy())
        throw camel::ConfigError("backend " + backend->describe() +
                                 " failed the startup health check");
    camel::service::ServiceConfig service_config;
    service_config.host = cfg.serve_host;
    service_config.port = cfg.serve_port;
    service_config.default_tau = tau_text.empty() ? cfg.tau : parse_tau(tau_text);
    service_config.judge = cfg.judge;
    camel::service::JudgeService service(service_config, backend);
    std::cout << "serving on " << cfg.serve_host << ":" << cfg.serve_port
              << " (POST /v1/judge, GET /healthz)\n";
    if (!service.run())
        throw camel::ConfigError("could not bind " + cfg.serve_host + ":" +
                                 std::to_string(cfg.serve_port));
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"confidence-gated two-stage preference judging"};
    app.require_subcommand(1);

    std::string config_file;
    std::optional<std::string> backend_uri;
    std::optional<std::string> model;
    std::optional<int> concurrency;
    app.add_option("--config", config_file, "JSON config file")->expected(1);

    auto add_backend_options = [&](CLI::App* sub) {
        sub->add_option("--backend", backend_uri, "backend uri: mock:<script.jsonl> or http://host:port");
        sub->add_option("--model", model, "model name sent to http backends");
        sub->add_option("--concurrency", concurrency, "worker threads for per-pair judging");
    };

    // judge
    auto* judge = app.add_subcommand("judge", "judge a dataset and write traces + report");
    std::string dataset, out_dir, tau_text, mode_text = "gated";
    bool swap_check = false;
    judge->add_option("--dataset", dataset, "dataset JSONL")->required();
    judge->add_option("--tau", tau_text, "confidence threshold (number or inf; default from config)");
    judge->add_option("--mode", mode_text, "fast|reflection|gated");
    judge->add_option("--out", out_dir, "output directory")->required();
    judge->add_flag("--swap-check", swap_check, "also run the position-swap consistency pass");
    add_backend_options(judge);

    // sweep
    auto* sweep = app.add_subcommand("sweep", "threshold sweep producing the accuracy/cost curve");
    std::string sweep_dataset, sweep_out, taus_text = "0,1,2,5,10,25,inf", sweep_format = "csv";
    sweep->add_option("--dataset", sweep_dataset, "dataset JSONL")->required();
    sweep->add_option("--taus", taus_text, "comma-separated thresholds, strictly increasing");
    sweep->add_option("--out", sweep_out, "output file")->required();
    sweep->add_option("--format", sweep_format, "csv|json");
    add_backend_options(sweep);

    // calibrate
    auto* calibrate = app.add_subcommand("calibrate", "binned confidence-vs-accuracy export");
    std::string cal_dataset, cal_out, cal_format = "csv", cal_hist, cal_split = "correctness";
    double bin_width = 1.0;
    calibrate->add_option("--dataset", cal_dataset, "dataset JSONL")->required();
    calibrate->add_option("--bin-width", bin_width, "confidence bin width");
    calibrate->add_option("--out", cal_out, "calibration output file")->required();
    calibrate->add_option("--format", cal_format, "csv|json");
    calibrate->add_option("--histogram", cal_hist, "also write a confidence histogram here");
    calibrate->add_option("--split", cal_split, "histogram split: overall|correctness");
    add_backend_options(calibrate);

    // augment
    auto* augment = app.add_subcommand("augment", "counterfactual prefix augmentation");
    std::string aug_in, aug_out;
    augment->add_option("--in", aug_in, "dataset JSONL")->required();
    augment->add_option("--out", aug_out, "augmented JSONL")->required();

    // train-toy
    auto* train = app.add_subcommand("train-toy", "toy GRPO training on a synthetic world");
    std::string train_out, metrics_out;
    std::optional<std::uint64_t> seed;
    std::optional<int> steps, world_n, group_size, batch_size;
    std::optional<double> lr, beta, noise, head_scale;
    bool augmented_flag = true;
    train->add_option("--out", train_out, "training log CSV")->required();
    train->add_option("--metrics-out", metrics_out, "write held-out metrics JSON here");
    train->add_option("--seed", seed, "rng seed");
    train->add_option("--steps", steps, "training steps");
    train->add_option("--n", world_n, "synthetic world size");
    train->add_option("--noise", noise, "feature noise");
    train->add_option("--group-size", group_size, "rollout group size G");
    train->add_option("--batch-size", batch_size, "instances per step");
    train->add_option("--lr", lr, "learning rate");
    train->add_option("--beta", beta, "KL regularization strength");
    train->add_option("--initial-head-scale", head_scale, "scale of the pre-set initial head");
    train->add_flag("--augmented,!--no-augmented", augmented_flag,
                    "use counterfactual prefix augmentation");

    // serve
    auto* serve = app.add_subcommand("serve", "HTTP judge service");
    std::string serve_tau;
    std::optional<std::string> host;
    std::optional<int> port;
    serve->add_option("--tau", serve_tau, "default confidence threshold");
    serve->add_option("--host", host, "bind host");
    serve->add_option("--port", port, "bind port");
    add_backend_options(serve);

    CLI11_PARSE(app, argc, argv);

    try {
        AppConfig cfg;
        if (!config_file.empty()) load_config_file(cfg, config_file);
        apply_env_overrides(cfg);
        if (backend_uri) cfg.backend_uri = *backend_uri;
        if (model) cfg.model = *model;
        if (concurrency) cfg.concurrency = *concurrency;
        if (host) cfg.serve_host = *host;
        if (port) cfg.serve_port = *port;
        if (seed) cfg.toy.seed = *seed;
        if (steps) cfg.toy.steps = *steps;
        if (world_n) cfg.toy_world_size = *world_n;
        if (noise) cfg.toy_feature_noise = *noise;
        if (group_size) cfg.toy.group_size = *group_size;
        if (batch_size) cfg.toy.batch_size = *batch_size;
        if (lr) cfg.toy.learning_rate = *lr;
        if (beta) cfg.toy.beta = *beta;
        if (head_scale) cfg.toy.initial_head_scale = *head_scale;
        cfg.toy.augmented = augmented_flag;

        if (judge->parsed()) return cmd_judge(cfg, dataset, tau_text, mode_text, out_dir, swap_check);
        if (sweep->parsed()) return cmd_sweep(cfg, sweep_dataset, taus_text, sweep_out, sweep_format);
        if (calibrate->parsed())
            return cmd_calibrate(cfg, cal_dataset, bin_width, cal_out, cal_format, cal_hist,
                                 cal_split);
        if (augment->parsed()) return cmd_augment(aug_in, aug_out);
        if (train->parsed()) return cmd_train_toy(cfg, train_out, metrics_out);
        if (serve->parsed()) return cmd_serve(cfg, serve_tau);
    } catch (const camel::Error& e) {
        std::cerr << "fatal: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "fatal: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
