#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ess/ruledsl.hpp"

namespace ess::analytics {

enum class Quality { good, bad };

struct Sample {
    int64_t ts_ms = 0;  // epoch milliseconds UTC
    double value = 0.0;
    Quality quality = Quality::good;
};

/// Samples sorted strictly ascending by timestamp, no duplicates.
struct TimeSeries {
    std::string data_point;
    std::vector<Sample> samples;
};

/// One tumbling window's worth of data. Series are restricted to
/// [start_ms, end_ms), contain good samples only, and carry the held value at
/// the window start when a sample existed before it (zero-order hold).
struct WindowSnapshot {
    int64_t start_ms = 0;
    int64_t end_ms = 0;
    bool partial = false;  // closed early on shutdown, not by data
    std::map<std::string, TimeSeries> series;
    std::map<std::string, uint64_t> bad_samples;  // dropped in-window, per data point
};

struct SliceResult {
    TimeSeries series;
    uint64_t bad_count = 0;
};

/// Restricts a full series to [start_ms, end_ms): good samples inside the
/// window, plus the last good sample before the window held at start_ms.
/// Bad in-window samples are dropped and counted. Idempotent on already
/// sliced series.
SliceResult slice_series(const TimeSeries& full, int64_t start_ms, int64_t end_ms);

WindowSnapshot slice_window(const std::map<std::string, TimeSeries>& all, int64_t start_ms,
                            int64_t end_ms);

/// Windowed aggregate under zero-order hold: each value holds until the next
/// sample or the window end. `integral` is value*seconds (W in, J out);
/// `duration_below`/`duration_above` count seconds strictly below/above
/// args[0]; `sum_delta` is max(0, last-first); `mean` is the time-weighted
/// mean over the covered span. Returns nullopt (no data) when no good sample
/// covers the window; `window_length` never does.
std::optional<double> aggregate(std::string_view fn, const TimeSeries& ts, int64_t start_ms,
                                int64_t end_ms, std::span<const double> args = {});

// ---------------------------------------------------------------------------
// Pluggable analyzers (custom("name", dp...) in EnPI expressions)
// ---------------------------------------------------------------------------

/// Analyzer contract: a deterministic, reentrant function of the snapshot and
/// the data points bound in the expression. No I/O during evaluation.
using AnalyzerFn =
    std::function<std::optional<double>(const WindowSnapshot&, std::span<const std::string>)>;

class AnalyzerRegistry {
public:
    struct Entry {
        AnalyzerFn fn;
        std::string description;
    };

    /// Throws std::invalid_argument when the name is already taken.
    void register_analyzer(const std::string& name, AnalyzerFn fn, std::string description);
    const Entry* find(const std::string& name) const;
    bool contains(const std::string& name) const { return find(name) != nullptr; }
    const std::map<std::string, Entry>& entries() const { return entries_; }

    /// Registry preloaded with the built-in `linreg_slope` analyzer
    /// (least-squares slope of value over time, in value units per second).
    static AnalyzerRegistry with_builtins();

private:
    std::map<std::string, Entry> entries_;
};

/// Least-squares slope of (t, value) pairs of one series, per second.
/// nullopt with fewer than two samples.
std::optional<double> linreg_slope(const TimeSeries& ts);

// ---------------------------------------------------------------------------
// EnPI evaluation
// ---------------------------------------------------------------------------

struct EnPIEvaluation {
    std::optional<double> value;  // nullopt = no data
    bool division_by_zero = false;
    /// Every aggregate/analyzer call with its label and result, in
    /// evaluation order, e.g. ("integral(power)", 3.6e6).
    std::vector<std::pair<std::string, std::optional<double>>> aggregates;
};

/// Recursive evaluation over the snapshot. Division by zero yields no-data
/// for the EnPI (recorded, not fatal); any no-data operand propagates.
EnPIEvaluation evaluate_enpi(const ruledsl::EnPIExpr& expr, const WindowSnapshot& snap,
                             const AnalyzerRegistry& registry);

}  // namespace ess::analytics
