#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace ess {

enum class Severity { error, warning };

/// One validation or load finding, tied to the entity and file location
/// that caused it. Diagnostics are values; collecting them never throws.
struct Diagnostic {
    Severity severity = Severity::error;
    std::string file;    // origin file, may be empty for in-memory sources
    int line = 0;        // 1-based, 0 = unknown
    std::string entity;  // slash path of the offending entity, e.g. "enpis/energy_per_part"
    std::string message;
};

/// Renders "SEVERITY file:line entity: message" (omitting unknown parts).
std::string format_diagnostic(const Diagnostic& d);

bool has_errors(const std::vector<Diagnostic>& diags);

/// Filesystem-level failure: missing package directory, unreadable file,
/// unwritable output. Distinct from content diagnostics so callers can map
/// it to the usage/IO exit class.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace ess
