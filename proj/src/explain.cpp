#include "ess/explain.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include <json.hpp>

namespace ess::explain {

using nlohmann::json;

std::optional<Format> parse_format(std::string_view name) {
    if (name == "json") return Format::json;
    if (name == "markdown") return Format::markdown;
    if (name == "plotdata") return Format::plotdata;
    return std::nullopt;
}

EvaluationTrace build_trace(
    const analytics::WindowSnapshot& snapshot,
    const std::vector<std::pair<const kb::EnPIDefinition*, analytics::EnPIEvaluation>>& enpis,
    const fuzzy::InferenceResult& inference, const fuzzy::CompiledRuleBase& rule_base,
    double reporting_threshold) {
    EvaluationTrace trace;
    trace.window_start_ms = snapshot.start_ms;
    trace.window_end_ms = snapshot.end_ms;
    trace.partial = snapshot.partial;

    for (const auto& [def, evaluation] : enpis) {
        EnPITraceEntry entry;
        entry.name = def->name;
        entry.unit = def->unit;
        entry.value = evaluation.value;
        entry.division_by_zero = evaluation.division_by_zero;
        entry.aggregates = evaluation.aggregates;
        if (def->expression) {
            ruledsl::visit_calls(*def->expression, [&](const ruledsl::Call& call) {
                for (const auto& arg : call.args) {
                    if (const auto* dp = std::get_if<ruledsl::DataPointRef>(&arg)) {
                        auto it = snapshot.bad_samples.find(dp->id);
                        entry.dropped_samples[dp->id] =
                            it == snapshot.bad_samples.end() ? 0 : it->second;
                    }
                }
            });
        }
        trace.enpis.push_back(std::move(entry));

        // inference inputs that came from EnPIs, including no-data ones
        InputTraceEntry input;
        input.variable = def->name;
        input.value = evaluation.value;
        const auto rec = std::find_if(
            inference.inputs.begin(), inference.inputs.end(),
            [&](const fuzzy::InputRecord& r) { return r.variable == def->name; });
        const bool feeds_rules =
            std::find(rule_base.required_inputs.begin(), rule_base.required_inputs.end(),
                      def->name) != rule_base.required_inputs.end();
        if (rec != inference.inputs.end()) {
            input.clamped = rec->clamped;
            input.degrees = rec->degrees;
            trace.inputs.push_back(std::move(input));
        } else if (feeds_rules) {
            trace.inputs.push_back(std::move(input));  // no-data input, rules disabled
        }
    }

    for (const auto& firing : inference.firings) {
        const auto& rule = rule_base.rules[firing.rule_index];
        RuleTraceEntry entry;
        entry.name = rule.name;
        entry.weight = rule.weight;
        entry.strength = firing.strength;
        entry.applicable = firing.applicable;
        entry.active = firing.applicable && firing.strength > 0.0;
        entry.atoms = firing.atom_degrees;
        entry.consequents = rule.consequents;
        trace.rules.push_back(std::move(entry));
    }
    std::stable_sort(trace.rules.begin(), trace.rules.end(),
                     [](const RuleTraceEntry& a, const RuleTraceEntry& b) {
                         return a.strength > b.strength;
                     });

    for (const auto& [variable, outcome] : inference.outcomes) {
        OutputTraceEntry entry;
        entry.variable = variable;
        entry.crisp = outcome.crisp;
        entry.dominant_term = outcome.dominant_term;
        entry.clip_levels = outcome.clip_levels;
        trace.outputs.push_back(std::move(entry));

        if (outcome.crisp && !outcome.dominant_term.empty()) {
            const auto clip = std::find_if(
                outcome.clip_levels.begin(), outcome.clip_levels.end(),
                [&](const auto& cl) { return cl.first == outcome.dominant_term; });
            if (clip != outcome.clip_levels.end() && clip->second >= reporting_threshold) {
                trace.recommendations.push_back({variable, outcome.dominant_term, clip->second});
            }
        }
    }
    return trace;
}

// ---------------------------------------------------------------------------
// JSON rendering
// ---------------------------------------------------------------------------

namespace {

json optional_number(const std::optional<double>& value) {
    if (value) return *value;
    return nullptr;
}

json window_to_json(const EvaluationTrace& trace) {
    json w;
    w["window"]["start_ms"] = trace.window_start_ms;
    w["window"]["end_ms"] = trace.window_end_ms;
    if (trace.partial) {
        w["window"]["partial"] = true;
    }

    w["enpis"] = json::object();
    for (const auto& enpi : trace.enpis) {
        json e;
        e["value"] = optional_number(enpi.value);
        e["unit"] = enpi.unit;
        if (enpi.division_by_zero) e["division_by_zero"] = true;
        e["aggregates"] = json::object();
        for (const auto& [label, value] : enpi.aggregates) {
            e["aggregates"][label] = optional_number(value);
        }
        e["dropped_samples"] = enpi.dropped_samples;
        w["enpis"][enpi.name] = std::move(e);
    }

    w["inputs"] = json::object();
    for (const auto& input : trace.inputs) {
        json in;
        in["value"] = optional_number(input.value);
        if (input.value) {
            in["clamped"] = input.clamped;
            in["degrees"] = json::object();
            for (const auto& [term, degree] : input.degrees) {
                in["degrees"][term] = degree;
            }
        }
        w["inputs"][input.variable] = std::move(in);
    }

    w["rules"] = json::array();
    for (const auto& rule : trace.rules) {
        json r;
        r["name"] = rule.name;
        r["strength"] = rule.strength;
        r["weight"] = rule.weight;
        r["active"] = rule.active;
        if (!rule.applicable) r["inapplicable"] = true;
        r["atoms"] = json::array();
        for (const auto& [variable, term, degree] : rule.atoms) {
            r["atoms"].push_back({{"variable", variable}, {"term", term}, {"degree", degree}});
        }
        r["consequents"] = json::array();
        for (const auto& c : rule.consequents) {
            r["consequents"].push_back({{"variable", c.variable}, {"term", c.term}});
        }
        w["rules"].push_back(std::move(r));
    }

    w["outputs"] = json::object();
    for (const auto& output : trace.outputs) {
        json o;
        o["crisp"] = optional_number(output.crisp);
        o["no_activation"] = !output.crisp.has_value();
        if (output.crisp) o["dominant_term"] = output.dominant_term;
        o["clip_levels"] = json::object();
        for (const auto& [term, clip] : output.clip_levels) {
            o["clip_levels"][term] = clip;
        }
        w["outputs"][output.variable] = std::move(o);
    }

    w["recommendations"] = json::array();
    for (const auto& rec : trace.recommendations) {
        w["recommendations"].push_back(
            {{"variable", rec.variable}, {"term", rec.term}, {"strength", rec.strength}});
    }
    return w;
}

json report_to_json(const Report& report) {
    json doc;
    doc["package"] = {{"machine", report.machine_id},
                      {"path", report.package_path},
                      {"content_hash", report.content_hash}};
    doc["config"] = {
        {"norms", report.engine.norms == fuzzy::Norms::minmax ? "minmax" : "product"},
        {"defuzz_samples", report.engine.defuzz_samples},
        {"window_length_s", report.window.length_s},
        {"alignment",
         report.window.alignment == procio::Alignment::epoch ? "epoch" : "first_sample"},
        {"reporting_threshold", report.reporting_threshold}};

    json summary = json::object();
    for (const auto& trace : report.windows) {
        for (const auto& output : trace.outputs) {
            json row;
            row["window_start_ms"] = trace.window_start_ms;
            row["crisp"] = optional_number(output.crisp);
            row["dominant_term"] = output.crisp ? json(output.dominant_term) : json(nullptr);
            summary[output.variable].push_back(std::move(row));
        }
    }
    doc["summary"] = std::move(summary);

    doc["windows"] = json::array();
    for (const auto& trace : report.windows) {
        doc["windows"].push_back(window_to_json(trace));
    }
    return doc;
}

// ---------------------------------------------------------------------------
// Markdown rendering
// ---------------------------------------------------------------------------

std::string show_number(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, p);
}

std::string show_optional(const std::optional<double>& v) {
    return v ? show_number(*v) : std::string("no data");
}

std::string render_markdown(const Report& report) {
    std::ostringstream out;
    out << "# Energy assessment report\n\n";
    out << "Machine: `" << report.machine_id << "`  \n";
    out << "Package: `" << report.package_path << "` (hash `" << report.content_hash << "`)  \n";
    out << "Windows: " << report.windows.size() << " x " << report.window.length_s << " s, norms "
        << (report.engine.norms == fuzzy::Norms::minmax ? "minmax" : "product") << "\n\n";

    out << "## EnPIs\n\n";
    out << "| Window start (ms) | EnPI | Value | Unit |\n";
    out << "|---|---|---|---|\n";
    for (const auto& trace : report.windows) {
        for (const auto& enpi : trace.enpis) {
            out << "| " << trace.window_start_ms << " | " << enpi.name << " | "
                << show_optional(enpi.value);
            if (enpi.value && enpi.unit == "J") {
                out << " (" << show_number(*enpi.value / 3.6e6) << " kWh)";
            }
            out << " | " << enpi.unit << " |\n";
        }
    }

    out << "\n## Assessments\n\n";
    out << "| Window start (ms) | Variable | Crisp | Dominant term |\n";
    out << "|---|---|---|---|\n";
    for (const auto& trace : report.windows) {
        for (const auto& output : trace.outputs) {
            out << "| " << trace.window_start_ms << " | " << output.variable << " | "
                << show_optional(output.crisp) << " | "
                << (output.crisp ? output.dominant_term : std::string("no activation")) << " |\n";
        }
    }

    out << "\n## Rule activations\n\n";
    for (const auto& trace : report.windows) {
        out << "### Window " << trace.window_start_ms << ".." << trace.window_end_ms;
        if (trace.partial) out << " (partial)";
        out << "\n\n";
        for (const auto& rule : trace.rules) {
            out << "- `" << rule.name << "` strength " << show_number(rule.strength);
            if (!rule.applicable) {
                out << " (inapplicable: missing input)";
            } else if (!rule.active) {
                out << " (inactive)";
            }
            out << "\n";
        }
        out << "\n";
    }

    out << "## Recommendations\n\n";
    bool any = false;
    for (const auto& trace : report.windows) {
        for (const auto& rec : trace.recommendations) {
            out << "- window " << trace.window_start_ms << ": **" << rec.variable << " is "
                << rec.term << "** (strength " << show_number(rec.strength) << ")\n";
            any = true;
        }
    }
    if (!any) {
        out << "none above threshold " << show_number(report.reporting_threshold) << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Plot data rendering
// ---------------------------------------------------------------------------

std::string render_plotdata(const Report& report,
                            const std::vector<fuzzy::LinguisticVariable>& variables) {
    std::ostringstream out;
    out << "# enpis.csv\n";
    out << "window_start_ms,window_end_ms,enpi,value\n";
    for (const auto& trace : report.windows) {
        for (const auto& enpi : trace.enpis) {
            out << trace.window_start_ms << ',' << trace.window_end_ms << ',' << enpi.name << ','
                << (enpi.value ? show_number(*enpi.value) : std::string()) << '\n';
        }
    }
    out << "\n# membership.csv\n";
    out << "variable,term,x,mu\n";
    const int n = report.engine.defuzz_samples;
    for (const auto& var : variables) {
        for (const auto& term : var.terms) {
            const auto samples = fuzzy::sample_membership(term.mf, var.lo, var.hi, n);
            const double step = (var.hi - var.lo) / static_cast<double>(n - 1);
            for (int i = 0; i < n; ++i) {
                out << var.name << ',' << term.label << ',' << show_number(var.lo + i * step)
                    << ',' << show_number(samples[static_cast<size_t>(i)]) << '\n';
            }
        }
    }
    return out.str();
}

}  // namespace

std::string window_to_json_text(const EvaluationTrace& trace) {
    return window_to_json(trace).dump();
}

std::string render_report(const Report& report, Format format,
                          const std::vector<fuzzy::LinguisticVariable>& variables) {
    switch (format) {
        case Format::json:
            return report_to_json(report).dump(2) + "\n";
        case Format::markdown:
            return render_markdown(report);
        case Format::plotdata:
            return render_plotdata(report, variables);
    }
    return {};
}

}  // namespace ess::explain
