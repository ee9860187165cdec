#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ess/analytics.hpp"
#include "ess/fuzzy.hpp"
#include "ess/kb.hpp"

namespace ess::explain {

struct EnPITraceEntry {
    std::string name;
    std::string unit;
    std::optional<double> value;  // nullopt = no data
    bool division_by_zero = false;
    std::vector<std::pair<std::string, std::optional<double>>> aggregates;
    std::map<std::string, uint64_t> dropped_samples;  // bad samples of referenced points
};

struct InputTraceEntry {
    std::string variable;
    std::optional<double> value;  // nullopt = no data
    bool clamped = false;
    std::vector<std::pair<std::string, double>> degrees;
};

struct RuleTraceEntry {
    std::string name;
    double strength = 0.0;
    double weight = 1.0;
    bool active = false;       // fired with strength > 0
    bool applicable = true;    // false when an input variable was unavailable
    std::vector<std::tuple<std::string, std::string, double>> atoms;
    std::vector<ruledsl::Atom> consequents;
};

struct OutputTraceEntry {
    std::string variable;
    std::optional<double> crisp;  // nullopt = no activation
    std::string dominant_term;
    std::vector<std::pair<std::string, double>> clip_levels;
};

struct Recommendation {
    std::string variable;
    std::string term;
    double strength = 0.0;
};

/// Full record of one window evaluation, fully determined by
/// (package, snapshot).
struct EvaluationTrace {
    int64_t window_start_ms = 0;
    int64_t window_end_ms = 0;
    bool partial = false;
    std::vector<EnPITraceEntry> enpis;   // package declaration order
    std::vector<InputTraceEntry> inputs;
    std::vector<RuleTraceEntry> rules;   // descending strength, ties by declaration
    std::vector<OutputTraceEntry> outputs;
    std::vector<Recommendation> recommendations;
};

/// Assembles one trace from the snapshot, the EnPI evaluations (definition ->
/// evaluation, in declaration order) and the inference fragments. Rules are
/// sorted by descending firing strength; zero-strength rules stay, marked
/// inactive. Recommendations are dominant terms at or above the threshold.
EvaluationTrace build_trace(
    const analytics::WindowSnapshot& snapshot,
    const std::vector<std::pair<const kb::EnPIDefinition*, analytics::EnPIEvaluation>>& enpis,
    const fuzzy::InferenceResult& inference, const fuzzy::CompiledRuleBase& rule_base,
    double reporting_threshold);

struct Report {
    std::string machine_id;
    std::string package_path;
    std::string content_hash;
    procio::WindowSpec window;
    fuzzy::EngineConfig engine;
    double reporting_threshold = 0.5;
    std::vector<EvaluationTrace> windows;  // ordered by window start
};

enum class Format { json, markdown, plotdata };

std::optional<Format> parse_format(std::string_view name);

/// json: canonical machine-readable form (stable key order, re-serializes
/// byte-identically). markdown: sectioned human report. plotdata: two CSV
/// tables (`# enpis.csv`, `# membership.csv`) for external plotting; the
/// membership table samples every term at the engine's sample count.
/// Rendering only formats stored values, it never recomputes them.
std::string render_report(const Report& report, Format format,
                          const std::vector<fuzzy::LinguisticVariable>& variables);

/// One window as a JSON object; also the line format of monitor output.
std::string window_to_json_text(const EvaluationTrace& trace);

}  // namespace ess::explain
