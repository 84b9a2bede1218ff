#include "camel/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <thread>
#include <unordered_set>

#include <json.hpp>

#include "camel/format.hpp"

namespace camel::harness {

namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

Label parse_label(const json& j, int line_no) {
    if (!j.contains("label"))
        throw LabelError("line " + std::to_string(line_no) + ": missing label");
    const json& v = j.at("label");
    if (v.is_string()) {
        const std::string s = v.get<std::string>();
        if (s == "a") return Label::a;
        if (s == "b") return Label::b;
    }
    throw LabelError("line " + std::to_string(line_no) + ": label must be \"a\" or \"b\"");
}

std::string require_string(const json& j, const char* key, int line_no) {
    if (!j.contains(key) || !j.at(key).is_string())
        throw ParseError("line " + std::to_string(line_no) + ": missing field '" + key + "'");
    return j.at(key).get<std::string>();
}

// Runs fn(i) for every index, optionally across worker threads. Results are
// written into per-index slots so aggregation stays in dataset order.
void for_each_index(std::size_t count, int concurrency, const std::function<void(std::size_t)>& fn) {
    const int workers = std::clamp<int>(concurrency, 1, static_cast<int>(count));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    auto loop = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            fn(i);
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(loop);
    for (auto& t : pool) t.join();
}

json tau_value(double tau) {
    if (std::isinf(tau)) return json("inf");
    return json(tau);
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw WriteError("cannot open " + path.string() + " for writing");
    out << content;
    if (!out) throw WriteError("write failed for " + path.string());
}

struct BinAccumulator {
    std::int64_t count = 0;
    std::int64_t correct = 0;
};

// Index of the width-w bin holding confidence c; c sits on [k*w, (k+1)*w).
std::int64_t bin_index(double c, double width) {
    return static_cast<std::int64_t>(std::floor(c / width));
}

EvalReport aggregate(const std::vector<EvalRecord>& records, double threshold,
                     std::int64_t error_count) {
    EvalReport report;
    report.threshold = threshold;
    report.n = static_cast<std::int64_t>(records.size());
    report.error_count = error_count;
    std::int64_t correct = 0;
    std::int64_t reflected = 0;
    double tokens = 0.0;
    for (const auto& r : records) {
        correct += r.final_correct ? 1 : 0;
        reflected += r.trace.gate.decision == GateRoute::Reflect ? 1 : 0;
        tokens += static_cast<double>(r.trace.completion_tokens);
        if (r.fast_correct) {
            (r.final_correct ? report.confusion.tt : report.confusion.tf) += 1;
        } else {
            (r.final_correct ? report.confusion.ft : report.confusion.ff) += 1;
        }
    }
    report.accuracy = static_cast<double>(correct) / static_cast<double>(report.n);
    report.reflect_rate = static_cast<double>(reflected) / static_cast<double>(report.n);
    report.avg_completion_tokens = tokens / static_cast<double>(report.n);
    report.net_gain = report.confusion.net_gain();
    return report;
}

// Per-pair cache for threshold sweeps: both phases run once, the gate is
// replayed per threshold.
struct CachedJudgment {
    Verdict v0 = Verdict::A;
    double confidence = 0.0;
    std::int64_t fast_tokens = 0;
    Verdict v1_reflect = Verdict::A;
    std::int64_t reflect_tokens = 0;
    Label label = Label::a;
    bool ok = false;
};

} // namespace

std::vector<PreferencePair> load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("dataset: cannot open " + path.string());
    std::vector<PreferencePair> pairs;
    std::unordered_set<std::string> seen;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
        }
        PreferencePair pair;
        pair.id = require_string(j, "id", line_no);
        if (pair.id.empty())
            throw ParseError("line " + std::to_string(line_no) + ": empty id");
        pair.question = require_string(j, "question", line_no);
        pair.response_a = require_string(j, "response_a", line_no);
        pair.response_b = require_string(j, "response_b", line_no);
        pair.label = parse_label(j, line_no);
        if (!seen.insert(pair.id).second)
            throw DuplicateId("line " + std::to_string(line_no) + ": duplicate id '" + pair.id +
                              "'");
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

EvalResult evaluate(const std::vector<PreferencePair>& pairs, double threshold, JudgeMode mode,
                    Backend& backend, const EvalOptions& opts) {
    if (pairs.empty()) throw EmptyEvaluation("evaluate: no pairs");
    const double eff = protocol::effective_threshold(threshold, mode);
    gate(0.0, eff);

    std::vector<std::optional<EvalRecord>> slots(pairs.size());
    std::vector<std::optional<PairError>> failures(pairs.size());
    for_each_index(pairs.size(), opts.concurrency, [&](std::size_t i) {
        const PreferencePair& pair = pairs[i];
        try {
            EvalRecord record;
            record.trace = protocol::judge(pair, threshold, mode, backend, opts.judge);
            record.pair_id = pair.id;
            record.label = pair.label;
            record.fast_correct = map_verdict(record.trace.initial_verdict) == pair.label;
            record.final_correct = map_verdict(record.trace.final_verdict) == pair.label;
            slots[i] = std::move(record);
        } catch (const std::exception& e) {
            failures[i] = PairError{pair.id, e.what()};
        }
    });

    EvalResult result;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (slots[i]) result.records.push_back(std::move(*slots[i]));
        if (failures[i]) result.errors.push_back(std::move(*failures[i]));
    }
    if (result.records.empty())
        throw EmptyEvaluation("evaluate: all " + std::to_string(pairs.size()) + " pairs failed");
    result.report =
        aggregate(result.records, eff, static_cast<std::int64_t>(result.errors.size()));
    return result;
}

std::vector<SweepPoint> sweep(const std::vector<PreferencePair>& pairs,
                              const std::vector<double>& thresholds, Backend& backend,
                              const EvalOptions& opts) {
    if (pairs.empty()) throw EmptyEvaluation("sweep: no pairs");
    if (thresholds.empty()) throw InvalidThreshold("sweep: empty threshold list");
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        gate(0.0, thresholds[i]);
        if (i > 0 && !(thresholds[i] > thresholds[i - 1]))
            throw InvalidThreshold("sweep: thresholds must be strictly increasing");
    }

    std::vector<CachedJudgment> cache(pairs.size());
    for_each_index(pairs.size(), opts.concurrency, [&](std::size_t i) {
        const PreferencePair& pair = pairs[i];
        try {
            const protocol::FastPhase fast = protocol::run_fast_phase(pair, backend, opts.judge);
            const protocol::ReflectionPhase reflect =
                protocol::run_reflection_phase(pair, fast.prompt, fast.v0, backend, opts.judge);
            CachedJudgment& c = cache[i];
            c.v0 = fast.v0;
            c.confidence = fast.confidence;
            c.fast_tokens = fast.completion_tokens;
            c.v1_reflect = reflect.v1;
            c.reflect_tokens = reflect.completion_tokens;
            c.label = pair.label;
            c.ok = true;
        } catch (const std::exception&) {
            cache[i].ok = false;
        }
    });

    const std::int64_t usable = std::count_if(cache.begin(), cache.end(),
                                              [](const CachedJudgment& c) { return c.ok; });
    if (usable == 0) throw EmptyEvaluation("sweep: all pairs failed");

    std::vector<SweepPoint> points;
    points.reserve(thresholds.size());
    for (const double tau : thresholds) {
        SweepPoint p;
        p.tau = tau;
        std::int64_t correct = 0;
        std::int64_t reflected = 0;
        double tokens = 0.0;
        for (const CachedJudgment& c : cache) {
            if (!c.ok) continue;
            const bool reflect = c.confidence < tau;
            const Verdict v1 = reflect ? c.v1_reflect : c.v0;
            correct += map_verdict(v1) == c.label ? 1 : 0;
            reflected += reflect ? 1 : 0;
            tokens += static_cast<double>(reflect ? c.fast_tokens + c.reflect_tokens
                                                  : c.fast_tokens);
        }
        p.accuracy = static_cast<double>(correct) / static_cast<double>(usable);
        p.reflect_rate = static_cast<double>(reflected) / static_cast<double>(usable);
        p.avg_tokens = tokens / static_cast<double>(usable);
        points.push_back(p);
    }
    return points;
}

CalibrationResult calibration(const std::vector<EvalRecord>& records, double bin_width) {
    if (!(bin_width > 0.0) || std::isnan(bin_width))
        throw InvalidBinWidth("calibration: bin_width must be > 0");
    CalibrationResult result;
    std::map<std::int64_t, BinAccumulator> bins;
    for (const auto& r : records) {
        if (r.trace.dist0.any_floored()) {
            ++result.floored_excluded;
            continue;
        }
        BinAccumulator& acc = bins[bin_index(r.trace.gate.confidence, bin_width)];
        acc.count += 1;
        acc.correct += r.fast_correct ? 1 : 0;
    }
    for (const auto& [idx, acc] : bins) {
        CalibrationBin bin;
        bin.confidence_lo = static_cast<double>(idx) * bin_width;
        bin.confidence_hi = static_cast<double>(idx + 1) * bin_width;
        bin.count = acc.count;
        bin.accuracy = static_cast<double>(acc.correct) / static_cast<double>(acc.count);
        result.bins.push_back(bin);
    }
    return result;
}

Histogram confidence_histogram(const std::vector<EvalRecord>& records, HistogramSplit split,
                               double bin_width) {
    if (!(bin_width > 0.0) || std::isnan(bin_width))
        throw InvalidBinWidth("confidence_histogram: bin_width must be > 0");
    if (records.empty()) throw EmptyEvaluation("confidence_histogram: no records");
    Histogram hist;
    hist.split = split;
    std::map<std::int64_t, BinAccumulator> bins;
    for (const auto& r : records) {
        if (r.trace.dist0.any_floored()) {
            ++hist.floored_excluded;
            continue;
        }
        BinAccumulator& acc = bins[bin_index(r.trace.gate.confidence, bin_width)];
        acc.count += 1;
        acc.correct += r.fast_correct ? 1 : 0;
    }
    for (const auto& [idx, acc] : bins) {
        HistogramRow row;
        row.lo = static_cast<double>(idx) * bin_width;
        row.hi = static_cast<double>(idx + 1) * bin_width;
        row.count = acc.count;
        if (split == HistogramSplit::ByCorrectness) {
            row.correct = acc.correct;
            row.incorrect = acc.count - acc.correct;
        }
        hist.rows.push_back(row);
    }
    return hist;
}

ConsistencyReport position_swap_consistency(const std::vector<PreferencePair>& pairs,
                                            double threshold, JudgeMode mode, Backend& backend,
                                            const EvalOptions& opts) {
    if (pairs.empty()) throw EmptyEvaluation("consistency: no pairs");
    struct Outcome {
        bool ok = false;
        bool agree = false;
    };
    std::vector<Outcome> outcomes(pairs.size());
    for_each_index(pairs.size(), opts.concurrency, [&](std::size_t i) {
        const PreferencePair& pair = pairs[i];
        PreferencePair swapped = pair;
        swapped.id = pair.id + "#swap";
        std::swap(swapped.response_a, swapped.response_b);
        swapped.label = pair.label == Label::a ? Label::b : Label::a;
        try {
            const JudgeTrace original = protocol::judge(pair, threshold, mode, backend, opts.judge);
            const JudgeTrace mirrored =
                protocol::judge(swapped, threshold, mode, backend, opts.judge);
            outcomes[i].ok = true;
            // Consistent judging prefers the same content in both orders,
            // i.e. the verdict letter flips with the swap.
            outcomes[i].agree = mirrored.final_verdict == flip(original.final_verdict);
        } catch (const std::exception&) {
            outcomes[i].ok = false;
        }
    });
    ConsistencyReport report;
    for (const Outcome& o : outcomes) {
        if (!o.ok) continue;
        report.n += 1;
        report.agreements += o.agree ? 1 : 0;
    }
    report.agreement_rate =
        report.n == 0 ? 0.0
                      : static_cast<double>(report.agreements) / static_cast<double>(report.n);
    return report;
}

std::string format_number(double value) { return camel::format_number(value); }

std::string report_to_json(const EvalReport& report) {
    ordered_json j;
    j["tau"] = tau_value(report.threshold);
    j["n"] = report.n;
    j["accuracy"] = report.accuracy;
    j["avg_completion_tokens"] = report.avg_completion_tokens;
    j["reflect_rate"] = report.reflect_rate;
    ordered_json confusion;
    confusion["FF"] = report.confusion.ff;
    confusion["FT"] = report.confusion.ft;
    confusion["TF"] = report.confusion.tf;
    confusion["TT"] = report.confusion.tt;
    confusion["net_gain"] = report.net_gain;
    j["confusion"] = confusion;
    j["errors"] = report.error_count;
    return j.dump(2) + "\n";
}

std::string trace_to_json(const JudgeTrace& trace) {
    ordered_json j;
    j["pair_id"] = trace.pair_id;
    j["mode"] = to_string(trace.mode);
    j["initial_verdict"] = to_string(trace.initial_verdict);
    j["logp_a"] = trace.dist0.logp_a;
    j["logp_b"] = trace.dist0.logp_b;
    j["floored_a"] = trace.dist0.floored_a;
    j["floored_b"] = trace.dist0.floored_b;
    j["confidence"] = trace.gate.confidence;
    j["threshold"] = tau_value(trace.gate.threshold);
    j["decision"] = to_string(trace.gate.decision);
    if (trace.reflection) {
        j["reflection"] = *trace.reflection;
    } else {
        j["reflection"] = nullptr;
    }
    j["final_verdict"] = to_string(trace.final_verdict);
    j["completion_tokens"] = trace.completion_tokens;
    return j.dump();
}

void emit_report(const EvalReport& report, EmitFormat format, const std::filesystem::path& path) {
    if (format == EmitFormat::Json) {
        write_file(path, report_to_json(report));
        return;
    }
    std::string csv =
        "tau,n,accuracy,avg_completion_tokens,reflect_rate,ff,ft,tf,tt,net_gain,errors\n";
    csv += format_number(report.threshold) + "," + std::to_string(report.n) + "," +
           format_number(report.accuracy) + "," + format_number(report.avg_completion_tokens) +
           "," + format_number(report.reflect_rate) + "," + std::to_string(report.confusion.ff) +
           "," + std::to_string(report.confusion.ft) + "," + std::to_string(report.confusion.tf) +
           "," + std::to_string(report.confusion.tt) + "," + std::to_string(report.net_gain) +
           "," + std::to_string(report.error_count) + "\n";
    write_file(path, csv);
}

void emit_sweep(const std::vector<SweepPoint>& points, EmitFormat format,
                const std::filesystem::path& path) {
    if (format == EmitFormat::Json) {
        ordered_json arr = ordered_json::array();
        for (const auto& p : points) {
            ordered_json j;
            j["tau"] = tau_value(p.tau);
            j["accuracy"] = p.accuracy;
            j["avg_tokens"] = p.avg_tokens;
            j["reflect_rate"] = p.reflect_rate;
            arr.push_back(j);
        }
        write_file(path, arr.dump(2) + "\n");
        return;
    }
    std::string csv = "tau,accuracy,avg_tokens,reflect_rate\n";
    for (const auto& p : points) {
        csv += format_number(p.tau) + "," + format_number(p.accuracy) + "," +
               format_number(p.avg_tokens) + "," + format_number(p.reflect_rate) + "\n";
    }
    write_file(path, csv);
}

void emit_calibration(const CalibrationResult& result, EmitFormat format,
                      const std::filesystem::path& path) {
    if (format == EmitFormat::Json) {
        ordered_json j;
        ordered_json arr = ordered_json::array();
        for (const auto& b : result.bins) {
            ordered_json bin;
            bin["confidence_lo"] = b.confidence_lo;
            bin["confidence_hi"] = b.confidence_hi;
            bin["count"] = b.count;
            bin["accuracy"] = b.accuracy;
            arr.push_back(bin);
        }
        j["bins"] = arr;
        j["floored_excluded"] = result.floored_excluded;
        write_file(path, j.dump(2) + "\n");
        return;
    }
    std::string csv = "confidence_lo,confidence_hi,count,accuracy\n";
    for (const auto& b : result.bins) {
        csv += format_number(b.confidence_lo) + "," + format_number(b.confidence_hi) + "," +
               std::to_string(b.count) + "," + format_number(b.accuracy) + "\n";
    }
    write_file(path, csv);
}

void emit_histogram(const Histogram& histogram, EmitFormat format,
                    const std::filesystem::path& path) {
    const bool split = histogram.split == HistogramSplit::ByCorrectness;
    if (format == EmitFormat::Json) {
        ordered_json j;
        ordered_json arr = ordered_json::array();
        for (const auto& r : histogram.rows) {
            ordered_json row;
            row["lo"] = r.lo;
            row["hi"] = r.hi;
            row["count"] = r.count;
            if (split) {
                row["correct"] = r.correct;
                row["incorrect"] = r.incorrect;
            }
            arr.push_back(row);
        }
        j["rows"] = arr;
        j["floored_excluded"] = histogram.floored_excluded;
        write_file(path, j.dump(2) + "\n");
        return;
    }
    std::string csv = split ? "lo,hi,count,correct,incorrect\n" : "lo,hi,count\n";
    for (const auto& r : histogram.rows) {
        csv += format_number(r.lo) + "," + format_number(r.hi) + "," + std::to_string(r.count);
        if (split)
            csv += "," + std::to_string(r.correct) + "," + std::to_string(r.incorrect);
        csv += "\n";
    }
    write_file(path, csv);
}

void emit_traces(const std::vector<EvalRecord>& records, const std::filesystem::path& path) {
    std::string out;
    for (const auto& r : records) out += trace_to_json(r.trace) + "\n";
    write_file(path, out);
}

} // namespace camel::harness
