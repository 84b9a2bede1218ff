#pragma once

// Dataset ingestion and the evaluation analyses: per-threshold accuracy and
// cost, threshold sweeps with cached traces, binned confidence calibration,
// confidence histograms, fast-vs-final confusion counts with net gain, and
// deterministic CSV/JSON emission.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "camel/core.hpp"
#include "camel/protocol.hpp"

namespace camel::harness {

struct EvalRecord {
    std::string pair_id;
    Label label = Label::a;
    JudgeTrace trace;
    bool fast_correct = false;  // v0 against the label
    bool final_correct = false; // v1 against the label
};

// Rows: fast verdict correct? Columns: final verdict correct?
// Early exits land on the diagonal by construction.
struct ConfusionCounts {
    std::int64_t ff = 0;
    std::int64_t ft = 0;
    std::int64_t tf = 0;
    std::int64_t tt = 0;

    std::int64_t total() const { return ff + ft + tf + tt; }
    std::int64_t net_gain() const { return ft - tf; }
};

struct PairError {
    std::string pair_id;
    std::string message;
};

struct EvalReport {
    double threshold = 0.0;
    std::int64_t n = 0;
    double accuracy = 0.0;
    double avg_completion_tokens = 0.0;
    double reflect_rate = 0.0;
    ConfusionCounts confusion;
    std::int64_t net_gain = 0;
    std::int64_t error_count = 0; // failed pairs, excluded from n
};

struct CalibrationBin {
    double confidence_lo = 0.0;
    double confidence_hi = 0.0;
    std::int64_t count = 0;
    double accuracy = 0.0;
};

struct CalibrationResult {
    std::vector<CalibrationBin> bins; // empty bins omitted
    std::int64_t floored_excluded = 0;
};

enum class HistogramSplit : std::uint8_t { ByCorrectness, Overall };

struct HistogramRow {
    double lo = 0.0;
    double hi = 0.0;
    std::int64_t count = 0;
    std::int64_t correct = 0;   // populated for ByCorrectness
    std::int64_t incorrect = 0; // populated for ByCorrectness
};

struct Histogram {
    HistogramSplit split = HistogramSplit::Overall;
    std::vector<HistogramRow> rows;
    std::int64_t floored_excluded = 0;
};

struct SweepPoint {
    double tau = 0.0;
    double accuracy = 0.0;
    double avg_tokens = 0.0;
    double reflect_rate = 0.0;
};

struct EvalOptions {
    protocol::JudgeOptions judge;
    int concurrency = 1; // worker threads dispatching per-pair judging
};

struct EvalResult {
    std::vector<EvalRecord> records; // dataset order
    EvalReport report;
    std::vector<PairError> errors;
};

// JSONL, one {id, question, response_a, response_b, label} object per line.
// Order preserved; duplicate ids rejected.
std::vector<PreferencePair> load_dataset(const std::filesystem::path& path);

EvalResult evaluate(const std::vector<PreferencePair>& pairs, double threshold,
                    JudgeMode mode, Backend& backend, const EvalOptions& opts = {});

// One point per threshold. Each backend phase runs once per pair; the gate
// is replayed per threshold over the cached phases, so threshold count does
// not multiply backend cost.
std::vector<SweepPoint> sweep(const std::vector<PreferencePair>& pairs,
                              const std::vector<double>& thresholds, Backend& backend,
                              const EvalOptions& opts = {});

// Fast-verdict accuracy per confidence bin of width bin_width over
// [0, max confidence]. Records with floored distributions are excluded and
// counted separately.
CalibrationResult calibration(const std::vector<EvalRecord>& records, double bin_width);

Histogram confidence_histogram(const std::vector<EvalRecord>& records, HistogramSplit split,
                               double bin_width);

// Library-invented consistency pass: judge each pair twice, once with the
// responses swapped, and report how often the two verdicts agree on the
// underlying content.
struct ConsistencyReport {
    std::int64_t n = 0;
    std::int64_t agreements = 0;
    double agreement_rate = 0.0;
};
ConsistencyReport position_swap_consistency(const std::vector<PreferencePair>& pairs,
                                            double threshold, JudgeMode mode, Backend& backend,
                                            const EvalOptions& opts = {});

enum class EmitFormat : std::uint8_t { Json, Csv };

// All emitters write stable field orders and deterministic number
// formatting; re-emitting the same value is byte-identical.
void emit_report(const EvalReport& report, EmitFormat format, const std::filesystem::path& path);
void emit_sweep(const std::vector<SweepPoint>& points, EmitFormat format,
                const std::filesystem::path& path);
void emit_calibration(const CalibrationResult& result, EmitFormat format,
                      const std::filesystem::path& path);
void emit_histogram(const Histogram& histogram, EmitFormat format,
                    const std::filesystem::path& path);
void emit_traces(const std::vector<EvalRecord>& records, const std::filesystem::path& path);

// Shortest round-trip decimal formatting; infinities print as "inf".
std::string format_number(double value);

std::string report_to_json(const EvalReport& report);
std::string trace_to_json(const JudgeTrace& trace);

} // namespace camel::harness
