#include "ess/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ess::analytics {

SliceResult slice_series(const TimeSeries& full, int64_t start_ms, int64_t end_ms) {
    SliceResult result;
    result.series.data_point = full.data_point;

    const Sample* held = nullptr;  // last good sample at or before start
    for (const auto& s : full.samples) {
        if (s.ts_ms >= end_ms) break;
        if (s.ts_ms < start_ms) {
            if (s.quality == Quality::good) held = &s;
            continue;
        }
        if (s.quality == Quality::bad) {
            ++result.bad_count;
            continue;
        }
        if (held != nullptr && result.series.samples.empty() && s.ts_ms > start_ms) {
            result.series.samples.push_back({start_ms, held->value, Quality::good});
        }
        result.series.samples.push_back(s);
        held = nullptr;
    }
    if (held != nullptr && result.series.samples.empty()) {
        result.series.samples.push_back({start_ms, held->value, Quality::good});
    }
    return result;
}

WindowSnapshot slice_window(const std::map<std::string, TimeSeries>& all, int64_t start_ms,
                            int64_t end_ms) {
    WindowSnapshot snap;
    snap.start_ms = start_ms;
    snap.end_ms = end_ms;
    for (const auto& [dp, series] : all) {
        SliceResult sliced = slice_series(series, start_ms, end_ms);
        snap.bad_samples[dp] = sliced.bad_count;
        snap.series[dp] = std::move(sliced.series);
    }
    return snap;
}

namespace {

constexpr double kMsPerSecond = 1000.0;

// Walks the zero-order-hold segments of a sliced series: fn(value, from_ms,
// to_ms) for each held stretch inside [start, end).
template <typename Fn>
void for_each_segment(const std::vector<Sample>& samples, int64_t start_ms, int64_t end_ms,
                      Fn&& fn) {
    for (size_t i = 0; i < samples.size(); ++i) {
        const int64_t from = std::max(samples[i].ts_ms, start_ms);
        const int64_t to = i + 1 < samples.size() ? samples[i + 1].ts_ms : end_ms;
        if (to > from) {
            fn(samples[i].value, from, to);
        }
    }
}

}  // namespace

std::optional<double> aggregate(std::string_view fn, const TimeSeries& ts, int64_t start_ms,
                                int64_t end_ms, std::span<const double> args) {
    if (fn == "window_length") {
        return static_cast<double>(end_ms - start_ms) / kMsPerSecond;
    }

    const SliceResult sliced = slice_series(ts, start_ms, end_ms);
    const auto& samples = sliced.series.samples;
    if (samples.empty()) {
        return std::nullopt;
    }

    if (fn == "last") {
        return samples.back().value;
    }
    if (fn == "sum_delta") {
        return std::max(0.0, samples.back().value - samples.front().value);
    }
    if (fn == "min" || fn == "max") {
        double best = samples.front().value;
        for (const auto& s : samples) {
            best = fn == "min" ? std::min(best, s.value) : std::max(best, s.value);
        }
        return best;
    }
    if (fn == "integral" || fn == "mean") {
        double area = 0.0;       // value * seconds
        int64_t covered_ms = 0;  // from first held point to window end
        for_each_segment(samples, start_ms, end_ms, [&](double v, int64_t from, int64_t to) {
            area += v * static_cast<double>(to - from) / kMsPerSecond;
            covered_ms += to - from;
        });
        if (fn == "integral") {
            return area;
        }
        return area / (static_cast<double>(covered_ms) / kMsPerSecond);
    }
    if (fn == "duration_below" || fn == "duration_above") {
        if (args.empty()) {
            throw std::invalid_argument(std::string(fn) + " needs a threshold argument");
        }
        const double threshold = args[0];
        double seconds = 0.0;
        for_each_segment(samples, start_ms, end_ms, [&](double v, int64_t from, int64_t to) {
            const bool hit = fn == "duration_below" ? v < threshold : v > threshold;
            if (hit) {
                seconds += static_cast<double>(to - from) / kMsPerSecond;
            }
        });
        return seconds;
    }
    throw std::invalid_argument("unknown aggregate '" + std::string(fn) + "'");
}

// ---------------------------------------------------------------------------
// Analyzers
// ---------------------------------------------------------------------------

void AnalyzerRegistry::register_analyzer(const std::string& name, AnalyzerFn fn,
                                         std::string description) {
    auto [it, inserted] = entries_.emplace(name, Entry{std::move(fn), std::move(description)});
    if (!inserted) {
        throw std::invalid_argument("analyzer '" + name + "' already registered");
    }
}

const AnalyzerRegistry::Entry* AnalyzerRegistry::find(const std::string& name) const {
    auto it = entries_.find(name);
    return it == entries_.end() ? nullptr : &it->second;
}

std::optional<double> linreg_slope(const TimeSeries& ts) {
    const auto& samples = ts.samples;
    if (samples.size() < 2) {
        return std::nullopt;
    }
    double mean_t = 0.0;
    double mean_v = 0.0;
    for (const auto& s : samples) {
        mean_t += static_cast<double>(s.ts_ms) / kMsPerSecond;
        mean_v += s.value;
    }
    mean_t /= static_cast<double>(samples.size());
    mean_v /= static_cast<double>(samples.size());
    double cov = 0.0;
    double var_t = 0.0;
    for (const auto& s : samples) {
        const double dt = static_cast<double>(s.ts_ms) / kMsPerSecond - mean_t;
        cov += dt * (s.value - mean_v);
        var_t += dt * dt;
    }
    if (var_t == 0.0) {
        return std::nullopt;
    }
    return cov / var_t;
}

AnalyzerRegistry AnalyzerRegistry::with_builtins() {
    AnalyzerRegistry registry;
    registry.register_analyzer(
        "linreg_slope",
        [](const WindowSnapshot& snap, std::span<const std::string> dps) -> std::optional<double> {
            if (dps.size() != 1) {
                return std::nullopt;
            }
            auto it = snap.series.find(dps[0]);
            if (it == snap.series.end()) {
                return std::nullopt;
            }
            return linreg_slope(it->second);
        },
        "least-squares slope of the value over the window, in value units per second");
    return registry;
}

// ---------------------------------------------------------------------------
// EnPI evaluation
// ---------------------------------------------------------------------------

namespace {

std::optional<double> eval_node(const ruledsl::EnPIExpr& expr, const WindowSnapshot& snap,
                                const AnalyzerRegistry& registry, EnPIEvaluation& record) {
    if (const auto* c = std::get_if<ruledsl::Constant>(&expr.node)) {
        return c->value;
    }
    if (const auto* call = std::get_if<ruledsl::Call>(&expr.node)) {
        std::optional<double> value;
        if (call->function == "custom") {
            const auto& name = std::get<ruledsl::StringLit>(call->args[0]).value;
            std::vector<std::string> dps;
            for (size_t i = 1; i < call->args.size(); ++i) {
                dps.push_back(std::get<ruledsl::DataPointRef>(call->args[i]).id);
            }
            const auto* entry = registry.find(name);
            value = entry == nullptr ? std::nullopt : entry->fn(snap, dps);
        } else if (call->function == "window_length") {
            value = aggregate("window_length", TimeSeries{}, snap.start_ms, snap.end_ms);
        } else {
            const auto& dp = std::get<ruledsl::DataPointRef>(call->args[0]).id;
            std::vector<double> args;
            for (size_t i = 1; i < call->args.size(); ++i) {
                args.push_back(std::get<double>(call->args[i]));
            }
            auto it = snap.series.find(dp);
            static const TimeSeries empty;
            value = aggregate(call->function, it == snap.series.end() ? empty : it->second,
                              snap.start_ms, snap.end_ms, args);
        }
        record.aggregates.emplace_back(ruledsl::print_call(*call), value);
        return value;
    }
    const auto& bin = std::get<ruledsl::Binary>(expr.node);
    const auto lhs = eval_node(*bin.lhs, snap, registry, record);
    const auto rhs = eval_node(*bin.rhs, snap, registry, record);
    if (!lhs || !rhs) {
        return std::nullopt;
    }
    switch (bin.op) {
        case ruledsl::BinOp::add: return *lhs + *rhs;
        case ruledsl::BinOp::sub: return *lhs - *rhs;
        case ruledsl::BinOp::mul: return *lhs * *rhs;
        case ruledsl::BinOp::div:
            if (*rhs == 0.0) {
                record.division_by_zero = true;
                return std::nullopt;
            }
            return *lhs / *rhs;
    }
    return std::nullopt;
}

}  // namespace

EnPIEvaluation evaluate_enpi(const ruledsl::EnPIExpr& expr, const WindowSnapshot& snap,
                             const AnalyzerRegistry& registry) {
    EnPIEvaluation result;
    result.value = eval_node(expr, snap, registry, result);
    return result;
}

}  // namespace ess::analytics
