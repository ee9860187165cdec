// ess — expert-system shell for energy-efficiency analysis.
// Subcommands: validate, analyze, monitor. Exit codes: 0 success,
// 1 validation/analysis failure, 2 usage or I/O error.

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "ess/diagnostics.hpp"
#include "ess/explain.hpp"
#include "ess/kb.hpp"
#include "ess/pipeline.hpp"
#include "ess/procio.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

std::atomic<bool> g_interrupted{false};

void handle_signal(int) { g_interrupted.store(true); }

int log_level() {
    const char* env = std::getenv("ESS_LOG");
    if (env == nullptr) return 1;  // warn
    const std::string value(env);
    if (value == "error") return 0;
    if (value == "warn") return 1;
    if (value == "info") return 2;
    if (value == "debug") return 3;
    return 1;
}

void print_diagnostics(const std::vector<ess::Diagnostic>& diags) {
    const int level = log_level();
    for (const auto& d : diags) {
        if (d.severity == ess::Severity::warning && level < 1) continue;
        std::cerr << ess::format_diagnostic(d) << '\n';
    }
}

struct PackageOverrides {
    std::optional<int64_t> window_s;
    std::optional<std::string> norms;
};

// flags win over the package file
bool apply_overrides(ess::kb::KnowledgePackage& pkg, const PackageOverrides& overrides) {
    if (overrides.window_s) {
        pkg.window.length_s = *overrides.window_s;
    }
    if (overrides.norms) {
        if (*overrides.norms == "minmax") {
            pkg.engine.norms = ess::fuzzy::Norms::minmax;
        } else if (*overrides.norms == "product") {
            pkg.engine.norms = ess::fuzzy::Norms::product;
        } else {
            std::cerr << "ERROR --norms must be minmax or product\n";
            return false;
        }
    }
    return true;
}

std::optional<ess::kb::KnowledgePackage> load_or_report(const std::string& path,
                                                        const ess::analytics::AnalyzerRegistry& reg,
                                                        const PackageOverrides& overrides,
                                                        int& exit_code) {
    auto result = ess::kb::load_package(path, reg);
    print_diagnostics(result.diagnostics);
    if (!result.package) {
        exit_code = kExitFailure;
        return std::nullopt;
    }
    if (!apply_overrides(*result.package, overrides)) {
        exit_code = kExitUsage;
        return std::nullopt;
    }
    if (overrides.window_s || overrides.norms) {
        auto diags = ess::kb::validate(*result.package, reg);
        print_diagnostics(diags);
        if (ess::has_errors(diags)) {
            exit_code = kExitFailure;
            return std::nullopt;
        }
    }
    return std::move(result.package);
}

bool write_output(const std::string& path, const std::string& content) {
    if (path.empty() || path == "-") {
        std::cout << content;
        return true;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        std::cerr << "ERROR cannot write output file: " << path << '\n';
        return false;
    }
    out << content;
    return true;
}

int cmd_validate(const std::string& package_path) {
    const auto registry = ess::analytics::AnalyzerRegistry::with_builtins();
    auto result = ess::kb::load_package(package_path, registry);
    print_diagnostics(result.diagnostics);
    return result.package ? kExitOk : kExitFailure;
}

int cmd_analyze(const std::string& package_path, const std::string& data_path,
                const std::string& out_path, const std::string& format_name,
                const PackageOverrides& overrides) {
    const auto format = ess::explain::parse_format(format_name);
    if (!format) {
        std::cerr << "ERROR unknown format '" << format_name << "'\n";
        return kExitUsage;
    }
    const auto registry = ess::analytics::AnalyzerRegistry::with_builtins();
    int exit_code = kExitOk;
    auto pkg = load_or_report(package_path, registry, overrides, exit_code);
    if (!pkg) return exit_code;

    const auto loaded = ess::procio::load_csv(data_path);
    if (loaded.skipped_rows > 0 && log_level() >= 1) {
        std::cerr << "WARNING " << data_path << ": skipped " << loaded.skipped_rows
                  << " unparseable row(s)\n";
    }
    const auto report = ess::pipeline::analyze_batch(*pkg, loaded.series, registry);
    if (!write_output(out_path, ess::explain::render_report(report, *format, pkg->variables))) {
        return kExitUsage;
    }
    if (log_level() >= 2) {
        std::cerr << "INFO analyzed " << report.windows.size() << " window(s)\n";
    }
    return kExitOk;
}

int cmd_monitor(const std::string& package_path, double duration_s, const std::string& out_path,
                const PackageOverrides& overrides) {
    const auto registry = ess::analytics::AnalyzerRegistry::with_builtins();
    int exit_code = kExitOk;
    auto pkg = load_or_report(package_path, registry, overrides, exit_code);
    if (!pkg) return exit_code;
    if (pkg->connector_bindings.empty()) {
        std::cerr << "ERROR package declares no connector bindings\n";
        return kExitFailure;
    }

    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);

    std::ofstream file;
    std::ostream* out = &std::cout;
    if (!out_path.empty() && out_path != "-") {
        file.open(out_path, std::ios::binary);
        if (!file) {
            std::cerr << "ERROR cannot write output file: " << out_path << '\n';
            return kExitUsage;
        }
        out = &file;
    }
    const auto stats = ess::pipeline::run_monitor(*pkg, registry, *out, g_interrupted, duration_s);
    if (log_level() >= 2) {
        std::cerr << "INFO emitted " << stats.windows_emitted << " window(s), received "
                  << stats.samples_received << " sample(s), dropped " << stats.dropped_late
                  << " late\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ess — expert-system shell for energy-efficiency analysis"};
    app.require_subcommand(1);

    std::string package_path;
    std::string data_path;
    std::string out_path;
    std::string format_name = "json";
    double duration_s = 0.0;
    PackageOverrides overrides;
    int64_t window_s = 0;
    std::string norms;

    auto* validate = app.add_subcommand("validate", "validate a knowledge package");
    validate->add_option("package", package_path, "package directory")->required();

    auto* analyze = app.add_subcommand("analyze", "batch-analyze a measurement CSV");
    analyze->add_option("package", package_path, "package directory")->required();
    analyze->add_option("--data", data_path, "measurement CSV file")->required();
    analyze->add_option("--out", out_path, "output path (default: stdout)");
    analyze->add_option("--format", format_name, "json|markdown|plotdata");
    auto* window_opt = analyze->add_option("--window-s", window_s, "override window length");
    auto* norms_opt = analyze->add_option("--norms", norms, "override norms: minmax|product");

    auto* monitor = app.add_subcommand("monitor", "run connectors and stream window reports");
    monitor->add_option("package", package_path, "package directory")->required();
    monitor->add_option("--duration", duration_s, "stop after this many seconds");
    monitor->add_option("--out", out_path, "output path (default: stdout)");
    auto* m_window_opt = monitor->add_option("--window-s", window_s, "override window length");
    auto* m_norms_opt = monitor->add_option("--norms", norms, "override norms: minmax|product");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    if (window_opt->count() > 0 || m_window_opt->count() > 0) overrides.window_s = window_s;
    if (norms_opt->count() > 0 || m_norms_opt->count() > 0) overrides.norms = norms;

    try {
        if (validate->parsed()) {
            return cmd_validate(package_path);
        }
        if (analyze->parsed()) {
            return cmd_analyze(package_path, data_path, out_path, format_name, overrides);
        }
        if (monitor->parsed()) {
            return cmd_monitor(package_path, duration_s, out_path, overrides);
        }
    } catch (const ess::IoError& e) {
        std::cerr << "ERROR " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "ERROR " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitUsage;
}
