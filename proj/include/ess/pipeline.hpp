#pragma once

#include <atomic>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>

#include "ess/analytics.hpp"
#include "ess/explain.hpp"
#include "ess/fuzzy.hpp"
#include "ess/kb.hpp"
#include "ess/procio.hpp"

namespace ess::pipeline {

/// Compiled, immutable evaluation context for one package: EnPI expressions,
/// rule base strata and the variable table. evaluate() is pure and safe to
/// call concurrently on distinct snapshots.
class AnalysisEngine {
public:
    AnalysisEngine(const kb::KnowledgePackage& pkg, const analytics::AnalyzerRegistry& registry);

    explain::EvaluationTrace evaluate(const analytics::WindowSnapshot& snapshot) const;

    const fuzzy::CompiledRuleBase& rule_base() const { return rule_base_; }
    const kb::KnowledgePackage& package() const { return pkg_; }

    explain::Report make_report() const;  // header only, no windows yet

private:
    kb::KnowledgePackage pkg_;
    const analytics::AnalyzerRegistry& registry_;
    fuzzy::CompiledRuleBase rule_base_;
    std::map<std::string, fuzzy::LinguisticVariable> variables_;
};

/// Batch pipeline: slice the series into tumbling windows, evaluate each,
/// collect a report.
explain::Report analyze_batch(const kb::KnowledgePackage& pkg,
                              const std::map<std::string, analytics::TimeSeries>& series,
                              const analytics::AnalyzerRegistry& registry);

struct MonitorStats {
    uint64_t windows_emitted = 0;
    uint64_t samples_received = 0;
    uint64_t dropped_late = 0;
};

/// Live pipeline: one ingestion thread per connector binding, a single
/// consumer assembling windows and appending one JSON object per closed
/// window to `out` (newline-delimited). Runs until `stop` becomes true or
/// `duration_s` expires; shutdown flushes the open window marked partial.
MonitorStats run_monitor(const kb::KnowledgePackage& pkg,
                         const analytics::AnalyzerRegistry& registry, std::ostream& out,
                         const std::atomic<bool>& stop, double duration_s = 0.0);

}  // namespace ess::pipeline
