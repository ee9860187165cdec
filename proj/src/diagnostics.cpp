#include "ess/diagnostics.hpp"

#include <sstream>

namespace ess {

std::string format_diagnostic(const Diagnostic& d) {
    std::ostringstream out;
    out << (d.severity == Severity::error ? "ERROR" : "WARNING");
    if (!d.file.empty()) {
        out << ' ' << d.file;
        if (d.line > 0) {
            out << ':' << d.line;
        }
    }
    if (!d.entity.empty()) {
        out << ' ' << d.entity;
    }
    out << ": " << d.message;
    return out.str();
}

bool has_errors(const std::vector<Diagnostic>& diags) {
    for (const auto& d : diags) {
        if (d.severity == Severity::error) {
            return true;
        }
    }
    return false;
}

}  // namespace ess
