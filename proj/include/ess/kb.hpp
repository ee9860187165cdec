#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ess/analytics.hpp"
#include "ess/diagnostics.hpp"
#include "ess/fuzzy.hpp"
#include "ess/procio.hpp"
#include "ess/ruledsl.hpp"

namespace ess::kb {

struct MachineDescription {
    std::string id;  // identifier lexeme, non-empty
    std::string label;
    std::string description;
    std::string energy_notes;
};

enum class DataPointKind { power, counter, state, generic };

struct DataPointSpec {
    std::string id;
    std::string label;
    std::string unit;  // non-empty, UCUM-style
    DataPointKind kind = DataPointKind::generic;
};

struct EnPIDefinition {
    std::string name;
    std::string expression_source;
    std::string unit;
    ruledsl::EnPIExprPtr expression;  // parsed form, null until load/validate
};

/// Long-term memory: immutable after load/merge, safe to share across
/// concurrent readers.
struct KnowledgePackage {
    std::string schema_version;
    MachineDescription machine;
    std::vector<DataPointSpec> data_points;
    std::vector<fuzzy::LinguisticVariable> variables;
    std::vector<EnPIDefinition> enpis;
    std::string rule_base_source;
    std::vector<ruledsl::RuleAst> rules;  // parsed from rule_base_source
    std::vector<procio::ConnectorBinding> connector_bindings;
    procio::WindowSpec window;
    fuzzy::EngineConfig engine;
    double reporting_threshold = 0.5;

    std::string root_path;     // load origin; connector paths resolve against it
    std::string content_hash;  // fnv1a-64 over kb.json + rules.frl bytes
};

/// Any subset of package sections, used as a temporary-knowledge overlay.
struct PackageFragment {
    std::optional<MachineDescription> machine;
    std::vector<DataPointSpec> data_points;
    std::vector<fuzzy::LinguisticVariable> variables;
    std::vector<EnPIDefinition> enpis;
    std::vector<ruledsl::RuleAst> rules;
    std::vector<procio::ConnectorBinding> connector_bindings;
    std::optional<procio::WindowSpec> window;
};

struct LoadResult {
    std::optional<KnowledgePackage> package;  // present iff no error diagnostics
    std::vector<Diagnostic> diagnostics;
};

/// Loads and validates `kb.json` + `rules.frl` from a package directory.
/// Content problems come back as diagnostics; missing directory or files
/// throw IoError.
LoadResult load_package(const std::filesystem::path& root,
                        const analytics::AnalyzerRegistry& registry);

/// Loads an overlay directory where both files are optional.
PackageFragment load_fragment(const std::filesystem::path& root);

/// Merge semantics: overlay entities with fresh ids are appended, matching
/// ids replace their base entity; no deletion. The base is untouched and the
/// result is revalidated.
LoadResult merge_temporary(const KnowledgePackage& base, const PackageFragment& overlay,
                           const analytics::AnalyzerRegistry& registry);

/// Checks every package invariant and cross-reference, including rule-DAG
/// acyclicity. Never mutates the package; empty result means valid.
std::vector<Diagnostic> validate(const KnowledgePackage& pkg,
                                 const analytics::AnalyzerRegistry& registry);

/// Writes kb.json + rules.frl so that load_package round-trips the package.
void write_package(const KnowledgePackage& pkg, const std::filesystem::path& root);

std::string_view data_point_kind_name(DataPointKind kind);
std::optional<DataPointKind> parse_data_point_kind(std::string_view name);

}  // namespace ess::kb
