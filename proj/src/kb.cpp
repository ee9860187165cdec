#include "ess/kb.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace ess::kb {

using nlohmann::json;

std::string_view data_point_kind_name(DataPointKind kind) {
    switch (kind) {
        case DataPointKind::power: return "power";
        case DataPointKind::counter: return "counter";
        case DataPointKind::state: return "state";
        case DataPointKind::generic: return "generic";
    }
    return "generic";
}

std::optional<DataPointKind> parse_data_point_kind(std::string_view name) {
    if (name == "power") return DataPointKind::power;
    if (name == "counter") return DataPointKind::counter;
    if (name == "state") return DataPointKind::state;
    if (name == "generic") return DataPointKind::generic;
    return std::nullopt;
}

namespace {

bool is_identifier(std::string_view s) {
    if (s.empty()) return false;
    if (!std::isalpha(static_cast<unsigned char>(s[0])) && s[0] != '_') return false;
    return std::all_of(s.begin() + 1, s.end(), [](unsigned char c) {
        return std::isalnum(c) || c == '_';
    });
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read file: " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string fnv1a64_hex(std::string_view bytes) {
    uint64_t hash = 14695981039346656037ull;
    for (const char c : bytes) {
        hash ^= static_cast<unsigned char>(c);
        hash *= 1099511628211ull;
    }
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[hash & 0xF];
        hash >>= 4;
    }
    return out;
}

int line_of_offset(std::string_view text, size_t offset) {
    int line = 1;
    for (size_t i = 0; i < offset && i < text.size(); ++i) {
        if (text[i] == '\n') ++line;
    }
    return line;
}

// Collects diagnostics against one file while a JSON document is decoded.
struct Ctx {
    std::vector<Diagnostic>& diags;
    std::string file;

    void error(const std::string& entity, const std::string& message, int line = 0) {
        diags.push_back({Severity::error, file, line, entity, message});
    }
    void warning(const std::string& entity, const std::string& message, int line = 0) {
        diags.push_back({Severity::warning, file, line, entity, message});
    }
};

std::optional<std::string> get_string(const json& obj, const char* key,
                                      const std::string& entity, Ctx& ctx,
                                      bool required = true) {
    if (!obj.contains(key)) {
        if (required) ctx.error(entity, std::string("missing field '") + key + "'");
        return std::nullopt;
    }
    if (!obj[key].is_string()) {
        ctx.error(entity, std::string("field '") + key + "' must be a string");
        return std::nullopt;
    }
    return obj[key].get<std::string>();
}

std::optional<double> get_number(const json& obj, const char* key, const std::string& entity,
                                 Ctx& ctx, bool required = true) {
    if (!obj.contains(key)) {
        if (required) ctx.error(entity, std::string("missing field '") + key + "'");
        return std::nullopt;
    }
    if (!obj[key].is_number()) {
        ctx.error(entity, std::string("field '") + key + "' must be a number");
        return std::nullopt;
    }
    return obj[key].get<double>();
}

std::optional<fuzzy::MembershipFunction> parse_mf(const json& term, const std::string& entity,
                                                  Ctx& ctx) {
    const auto shape = get_string(term, "shape", entity, ctx);
    if (!shape) return std::nullopt;
    if (!term.contains("params") || !term["params"].is_array()) {
        ctx.error(entity, "missing 'params' array");
        return std::nullopt;
    }
    std::vector<double> p;
    for (const auto& v : term["params"]) {
        if (!v.is_number()) {
            ctx.error(entity, "'params' must contain only numbers");
            return std::nullopt;
        }
        p.push_back(v.get<double>());
    }
    if (*shape == "triangular") {
        if (p.size() != 3) {
            ctx.error(entity, "triangular shape needs 3 params");
            return std::nullopt;
        }
        return fuzzy::MembershipFunction{fuzzy::Triangular{p[0], p[1], p[2]}};
    }
    if (*shape == "trapezoidal") {
        if (p.size() != 4) {
            ctx.error(entity, "trapezoidal shape needs 4 params");
            return std::nullopt;
        }
        return fuzzy::MembershipFunction{fuzzy::Trapezoidal{p[0], p[1], p[2], p[3]}};
    }
    if (*shape == "gaussian") {
        if (p.size() != 2) {
            ctx.error(entity, "gaussian shape needs 2 params");
            return std::nullopt;
        }
        return fuzzy::MembershipFunction{fuzzy::Gaussian{p[0], p[1]}};
    }
    ctx.error(entity, "unknown shape '" + *shape + "'");
    return std::nullopt;
}

json mf_to_json(const fuzzy::MembershipFunction& mf) {
    json out;
    if (const auto* tri = std::get_if<fuzzy::Triangular>(&mf.shape)) {
        out["shape"] = "triangular";
        out["params"] = {tri->a, tri->b, tri->c};
    } else if (const auto* trap = std::get_if<fuzzy::Trapezoidal>(&mf.shape)) {
        out["shape"] = "trapezoidal";
        out["params"] = {trap->a, trap->b, trap->c, trap->d};
    } else {
        const auto& g = std::get<fuzzy::Gaussian>(mf.shape);
        out["shape"] = "gaussian";
        out["params"] = {g.mean, g.sigma};
    }
    return out;
}

std::optional<fuzzy::LinguisticVariable> parse_variable(const json& v, Ctx& ctx) {
    fuzzy::LinguisticVariable var;
    const std::string entity_base = "variables";
    const auto name = get_string(v, "name", entity_base, ctx);
    if (!name) return std::nullopt;
    var.name = *name;
    const std::string entity = entity_base + "/" + var.name;
    if (const auto unit = get_string(v, "unit", entity, ctx, false)) {
        var.unit = *unit;
    }
    if (!v.contains("universe") || !v["universe"].is_array() || v["universe"].size() != 2 ||
        !v["universe"][0].is_number() || !v["universe"][1].is_number()) {
        ctx.error(entity, "'universe' must be a [lo, hi] number pair");
        return std::nullopt;
    }
    var.lo = v["universe"][0].get<double>();
    var.hi = v["universe"][1].get<double>();
    if (!v.contains("terms") || !v["terms"].is_array()) {
        ctx.error(entity, "missing 'terms' array");
        return std::nullopt;
    }
    for (const auto& t : v["terms"]) {
        const auto label = get_string(t, "label", entity, ctx);
        if (!label) return std::nullopt;
        const auto mf = parse_mf(t, entity + "/" + *label, ctx);
        if (!mf) return std::nullopt;
        var.terms.push_back({*label, *mf});
    }
    return var;
}

json variable_to_json(const fuzzy::LinguisticVariable& var) {
    json out;
    out["name"] = var.name;
    out["unit"] = var.unit;
    out["universe"] = {var.lo, var.hi};
    out["terms"] = json::array();
    for (const auto& term : var.terms) {
        json t = mf_to_json(term.mf);
        t["label"] = term.label;
        out["terms"].push_back(std::move(t));
    }
    return out;
}

std::optional<procio::ConnectorBinding> parse_connector(const json& c, size_t index, Ctx& ctx) {
    const std::string entity = "connectors[" + std::to_string(index) + "]";
    procio::ConnectorBinding binding;
    const auto dp = get_string(c, "data_point", entity, ctx);
    if (!dp) return std::nullopt;
    binding.data_point = *dp;
    if (!c.contains("source") || !c["source"].is_object()) {
        ctx.error(entity, "missing 'source' object");
        return std::nullopt;
    }
    const json& src = c["source"];
    const auto type = get_string(src, "type", entity, ctx);
    if (!type) return std::nullopt;
    if (*type == "csv_replay") {
        procio::CsvReplay replay;
        const auto path = get_string(src, "path", entity, ctx);
        if (!path) return std::nullopt;
        replay.path = *path;
        if (const auto speed = get_number(src, "speed_factor", entity, ctx, false)) {
            replay.speed_factor = *speed;
        }
        binding.source = replay;
        return binding;
    }
    if (*type == "modbus") {
        procio::ModbusSource mb;
        const auto host = get_string(src, "host", entity, ctx);
        if (!host) return std::nullopt;
        mb.host = *host;
        if (const auto port = get_number(src, "port", entity, ctx)) {
            mb.port = static_cast<uint16_t>(*port);
        }
        if (const auto unit = get_number(src, "unit_id", entity, ctx, false)) {
            mb.unit_id = static_cast<uint8_t>(*unit);
        }
        if (const auto addr = get_number(src, "address", entity, ctx)) {
            mb.address = static_cast<uint16_t>(*addr);
        }
        if (const auto count = get_number(src, "register_count", entity, ctx, false)) {
            mb.register_count = static_cast<uint16_t>(*count);
        }
        const auto encoding = get_string(src, "encoding", entity, ctx);
        if (encoding) {
            const auto parsed = procio::parse_encoding(*encoding);
            if (!parsed) {
                ctx.error(entity, "unknown encoding '" + *encoding + "'");
                return std::nullopt;
            }
            mb.encoding = *parsed;
        }
        if (const auto scale = get_number(src, "scale", entity, ctx, false)) {
            mb.scale = *scale;
        }
        if (const auto offset = get_number(src, "offset", entity, ctx, false)) {
            mb.offset = *offset;
        }
        if (const auto poll = get_number(src, "poll_period_ms", entity, ctx, false)) {
            mb.poll_period_ms = static_cast<int>(*poll);
        }
        binding.source = mb;
        return binding;
    }
    if (*type == "simulator") {
        procio::SimulatorSource sim;
        if (!src.contains("waveform") || !src["waveform"].is_object()) {
            ctx.error(entity, "missing 'waveform' object");
            return std::nullopt;
        }
        const json& w = src["waveform"];
        const auto kind = get_string(w, "kind", entity, ctx);
        if (!kind) return std::nullopt;
        if (*kind == "constant") {
            sim.waveform.kind = procio::Waveform::Kind::constant;
        } else if (*kind == "sine") {
            sim.waveform.kind = procio::Waveform::Kind::sine;
        } else if (*kind == "square") {
            sim.waveform.kind = procio::Waveform::Kind::square;
        } else if (*kind == "counter") {
            sim.waveform.kind = procio::Waveform::Kind::counter;
        } else {
            ctx.error(entity, "unknown waveform kind '" + *kind + "'");
            return std::nullopt;
        }
        if (const auto low = get_number(w, "low", entity, ctx, false)) sim.waveform.low = *low;
        if (const auto high = get_number(w, "high", entity, ctx, false)) sim.waveform.high = *high;
        if (const auto period = get_number(w, "period_s", entity, ctx, false)) {
            sim.waveform.period_s = *period;
        }
        if (const auto sp = get_number(w, "sample_period_ms", entity, ctx, false)) {
            sim.waveform.sample_period_ms = static_cast<int>(*sp);
        }
        binding.source = sim;
        return binding;
    }
    ctx.error(entity, "unknown source type '" + *type + "'");
    return std::nullopt;
}

json connector_to_json(const procio::ConnectorBinding& binding) {
    json out;
    out["data_point"] = binding.data_point;
    json src;
    if (const auto* replay = std::get_if<procio::CsvReplay>(&binding.source)) {
        src["type"] = "csv_replay";
        src["path"] = replay->path;
        src["speed_factor"] = replay->speed_factor;
    } else if (const auto* mb = std::get_if<procio::ModbusSource>(&binding.source)) {
        src["type"] = "modbus";
        src["host"] = mb->host;
        src["port"] = mb->port;
        src["unit_id"] = mb->unit_id;
        src["address"] = mb->address;
        src["register_count"] = mb->register_count;
        src["encoding"] = std::string(procio::encoding_name(mb->encoding));
        src["scale"] = mb->scale;
        src["offset"] = mb->offset;
        src["poll_period_ms"] = mb->poll_period_ms;
    } else {
        const auto& sim = std::get<procio::SimulatorSource>(binding.source);
        src["type"] = "simulator";
        json w;
        switch (sim.waveform.kind) {
            case procio::Waveform::Kind::constant: w["kind"] = "constant"; break;
            case procio::Waveform::Kind::sine: w["kind"] = "sine"; break;
            case procio::Waveform::Kind::square: w["kind"] = "square"; break;
            case procio::Waveform::Kind::counter: w["kind"] = "counter"; break;
        }
        w["low"] = sim.waveform.low;
        w["high"] = sim.waveform.high;
        w["period_s"] = sim.waveform.period_s;
        w["sample_period_ms"] = sim.waveform.sample_period_ms;
        src["waveform"] = std::move(w);
    }
    out["source"] = std::move(src);
    return out;
}

const std::set<std::string> kKnownTopLevelKeys = {
    "schema_version", "machine",    "data_points",      "variables", "enpis",
    "window",         "connectors", "norms",            "defuzz_samples",
    "reporting_threshold"};

// Decodes kb.json content into the package; rule parsing happens separately.
void parse_kb_json(const std::string& text, KnowledgePackage& pkg, Ctx& ctx) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        ctx.error("", std::string("invalid JSON: ") + e.what(),
                  line_of_offset(text, e.byte > 0 ? e.byte - 1 : 0));
        return;
    }
    if (!doc.is_object()) {
        ctx.error("", "top level must be a JSON object");
        return;
    }
    for (const auto& [key, _] : doc.items()) {
        if (!kKnownTopLevelKeys.count(key)) {
            ctx.warning(key, "unknown top-level key ignored");
        }
    }
    if (const auto version = get_string(doc, "schema_version", "schema_version", ctx)) {
        pkg.schema_version = *version;
        if (*version != "1") {
            ctx.warning("schema_version", "unrecognized schema version '" + *version + "'");
        }
    }
    if (doc.contains("machine") && doc["machine"].is_object()) {
        const json& m = doc["machine"];
        if (const auto id = get_string(m, "id", "machine", ctx)) pkg.machine.id = *id;
        if (const auto label = get_string(m, "label", "machine", ctx, false)) {
            pkg.machine.label = *label;
        }
        if (const auto desc = get_string(m, "description", "machine", ctx, false)) {
            pkg.machine.description = *desc;
        }
        if (const auto notes = get_string(m, "energy_notes", "machine", ctx, false)) {
            pkg.machine.energy_notes = *notes;
        }
    } else {
        ctx.error("machine", "missing 'machine' object");
    }
    if (doc.contains("data_points") && doc["data_points"].is_array()) {
        for (const auto& d : doc["data_points"]) {
            DataPointSpec spec;
            const auto id = get_string(d, "id", "data_points", ctx);
            if (!id) continue;
            spec.id = *id;
            const std::string entity = "data_points/" + spec.id;
            if (const auto label = get_string(d, "label", entity, ctx, false)) {
                spec.label = *label;
            }
            if (const auto unit = get_string(d, "unit", entity, ctx)) spec.unit = *unit;
            if (const auto kind = get_string(d, "kind", entity, ctx, false)) {
                const auto parsed = parse_data_point_kind(*kind);
                if (!parsed) {
                    ctx.error(entity, "unknown kind '" + *kind + "'");
                } else {
                    spec.kind = *parsed;
                }
            }
            pkg.data_points.push_back(std::move(spec));
        }
    } else {
        ctx.error("data_points", "missing 'data_points' array");
    }
    if (doc.contains("variables")) {
        if (!doc["variables"].is_array()) {
            ctx.error("variables", "'variables' must be an array");
        } else {
            for (const auto& v : doc["variables"]) {
                if (auto var = parse_variable(v, ctx)) {
                    pkg.variables.push_back(std::move(*var));
                }
            }
        }
    }
    if (doc.contains("enpis")) {
        if (!doc["enpis"].is_array()) {
            ctx.error("enpis", "'enpis' must be an array");
        } else {
            for (const auto& e : doc["enpis"]) {
                EnPIDefinition def;
                const auto name = get_string(e, "name", "enpis", ctx);
                if (!name) continue;
                def.name = *name;
                const std::string entity = "enpis/" + def.name;
                if (const auto src = get_string(e, "expression_source", entity, ctx)) {
                    def.expression_source = *src;
                }
                if (const auto unit = get_string(e, "unit", entity, ctx, false)) {
                    def.unit = *unit;
                }
                pkg.enpis.push_back(std::move(def));
            }
        }
    }
    if (doc.contains("window") && doc["window"].is_object()) {
        const json& w = doc["window"];
        if (const auto length = get_number(w, "length_s", "window", ctx)) {
            pkg.window.length_s = static_cast<int64_t>(*length);
        }
        if (const auto align = get_string(w, "alignment", "window", ctx, false)) {
            if (*align == "epoch") {
                pkg.window.alignment = procio::Alignment::epoch;
            } else if (*align == "first_sample") {
                pkg.window.alignment = procio::Alignment::first_sample;
            } else {
                ctx.error("window", "unknown alignment '" + *align + "'");
            }
        }
    } else {
        ctx.error("window", "missing 'window' object");
    }
    if (doc.contains("connectors")) {
        if (!doc["connectors"].is_array()) {
            ctx.error("connectors", "'connectors' must be an array");
        } else {
            size_t index = 0;
            for (const auto& c : doc["connectors"]) {
                if (auto binding = parse_connector(c, index, ctx)) {
                    pkg.connector_bindings.push_back(std::move(*binding));
                }
                ++index;
            }
        }
    }
    if (const auto norms = get_string(doc, "norms", "norms", ctx, false)) {
        if (*norms == "minmax") {
            pkg.engine.norms = fuzzy::Norms::minmax;
        } else if (*norms == "product") {
            pkg.engine.norms = fuzzy::Norms::product;
        } else {
            ctx.error("norms", "norms must be 'minmax' or 'product'");
        }
    }
    if (const auto n = get_number(doc, "defuzz_samples", "defuzz_samples", ctx, false)) {
        pkg.engine.defuzz_samples = static_cast<int>(*n);
    }
    if (const auto t = get_number(doc, "reporting_threshold", "reporting_threshold", ctx, false)) {
        pkg.reporting_threshold = *t;
    }
}

// Shared by load and merge: parses rule source and EnPI expressions into the
// package, reporting positioned diagnostics.
void parse_package_sources(KnowledgePackage& pkg, Ctx& kb_ctx, Ctx& rules_ctx) {
    try {
        pkg.rules = ruledsl::parse_rules(pkg.rule_base_source);
    } catch (const ruledsl::ParseError& e) {
        rules_ctx.diags.push_back(
            {Severity::error, rules_ctx.file, e.pos.line, "rules", e.what()});
    }
    for (auto& def : pkg.enpis) {
        try {
            def.expression = ruledsl::parse_enpi(def.expression_source);
        } catch (const ruledsl::ParseError& e) {
            kb_ctx.error("enpis/" + def.name, e.what());
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

namespace {

void validate_membership(const fuzzy::LinguisticVariable& var, const std::string& entity,
                         Ctx& ctx) {
    if (!(var.lo < var.hi)) {
        ctx.error(entity, "universe lo must be < hi");
    }
    std::set<std::string> labels;
    for (const auto& term : var.terms) {
        const std::string term_entity = entity + "/" + term.label;
        if (!labels.insert(term.label).second) {
            ctx.error(term_entity, "duplicate term label");
        }
        if (const auto* tri = std::get_if<fuzzy::Triangular>(&term.mf.shape)) {
            if (!(tri->a <= tri->b && tri->b <= tri->c && tri->a < tri->c)) {
                ctx.error(term_entity, "triangular params must satisfy a <= b <= c, a < c");
            }
        } else if (const auto* trap = std::get_if<fuzzy::Trapezoidal>(&term.mf.shape)) {
            if (!(trap->a <= trap->b && trap->b <= trap->c && trap->c <= trap->d &&
                  trap->a < trap->d)) {
                ctx.error(term_entity,
                          "trapezoidal params must satisfy a <= b <= c <= d, a < d");
            }
        } else if (const auto* g = std::get_if<fuzzy::Gaussian>(&term.mf.shape)) {
            if (!(g->sigma > 0.0)) {
                ctx.error(term_entity, "gaussian sigma must be > 0");
            }
        }
    }
    if (var.terms.empty()) {
        ctx.warning(entity, "variable declares no terms");
    }
}

// constant-folds just enough to catch division by a constant zero
bool has_constant_zero_divisor(const ruledsl::EnPIExpr& e) {
    if (const auto* bin = std::get_if<ruledsl::Binary>(&e.node)) {
        if (bin->op == ruledsl::BinOp::div) {
            if (const auto* c = std::get_if<ruledsl::Constant>(&bin->rhs->node)) {
                if (c->value == 0.0) return true;
            }
        }
        return has_constant_zero_divisor(*bin->lhs) || has_constant_zero_divisor(*bin->rhs);
    }
    return false;
}

void collect_rule_atoms(const ruledsl::ExprNode& e, std::vector<ruledsl::Atom>& out) {
    if (const auto* atom = std::get_if<ruledsl::Atom>(&e.node)) {
        out.push_back(*atom);
    } else if (const auto* n = std::get_if<ruledsl::NotNode>(&e.node)) {
        collect_rule_atoms(*n->child, out);
    } else if (const auto* a = std::get_if<ruledsl::AndNode>(&e.node)) {
        for (const auto& c : a->children) collect_rule_atoms(*c, out);
    } else {
        for (const auto& c : std::get<ruledsl::OrNode>(e.node).children) {
            collect_rule_atoms(*c, out);
        }
    }
}

}  // namespace

std::vector<Diagnostic> validate(const KnowledgePackage& pkg,
                                 const analytics::AnalyzerRegistry& registry) {
    std::vector<Diagnostic> diags;
    Ctx ctx{diags, "kb.json"};
    Ctx rules_ctx{diags, "rules.frl"};

    if (!is_identifier(pkg.machine.id)) {
        ctx.error("machine", "machine id must be a non-empty identifier");
    }

    std::set<std::string> dp_ids;
    for (const auto& dp : pkg.data_points) {
        const std::string entity = "data_points/" + dp.id;
        if (!is_identifier(dp.id)) {
            ctx.error(entity, "data point id must be an identifier");
        }
        if (!dp_ids.insert(dp.id).second) {
            ctx.error(entity, "duplicate data point id '" + dp.id + "'");
        }
        if (dp.unit.empty()) {
            ctx.error(entity, "unit must be non-empty");
        }
    }

    std::set<std::string> var_names;
    for (const auto& var : pkg.variables) {
        const std::string entity = "variables/" + var.name;
        if (!is_identifier(var.name)) {
            ctx.error(entity, "variable name must be an identifier");
        }
        if (!var_names.insert(var.name).second) {
            ctx.error(entity, "duplicate variable name '" + var.name + "'");
        }
        validate_membership(var, entity, ctx);
    }

    std::set<std::string> enpi_names;
    for (const auto& def : pkg.enpis) {
        const std::string entity = "enpis/" + def.name;
        if (!is_identifier(def.name)) {
            ctx.error(entity, "EnPI name must be an identifier");
        }
        if (!enpi_names.insert(def.name).second) {
            ctx.error(entity, "duplicate EnPI name '" + def.name + "'");
        }
        ruledsl::EnPIExprPtr expr = def.expression;
        if (!expr) {
            try {
                expr = ruledsl::parse_enpi(def.expression_source);
            } catch (const ruledsl::ParseError& e) {
                ctx.error(entity, e.what());
                continue;
            }
        }
        if (has_constant_zero_divisor(*expr)) {
            ctx.error(entity, "division by constant zero");
        }
        ruledsl::visit_calls(*expr, [&](const ruledsl::Call& call) {
            if (call.function == "custom") {
                const auto& name = std::get<ruledsl::StringLit>(call.args[0]).value;
                if (!registry.contains(name)) {
                    ctx.error(entity, "unknown analyzer '" + name + "'");
                }
                for (size_t i = 1; i < call.args.size(); ++i) {
                    const auto& dp = std::get<ruledsl::DataPointRef>(call.args[i]).id;
                    if (!dp_ids.count(dp)) {
                        ctx.error(entity, "undeclared data point '" + dp + "'");
                    }
                }
            } else if (!call.args.empty()) {
                if (const auto* dp = std::get_if<ruledsl::DataPointRef>(&call.args[0])) {
                    if (!dp_ids.count(dp->id)) {
                        ctx.error(entity, "undeclared data point '" + dp->id + "'");
                    }
                }
            }
        });
    }

    // Rules: names unique, every atom resolves to a declared variable/term.
    std::set<std::string> rule_names;
    bool rules_resolve = !pkg.rules.empty();
    const auto find_variable = [&](const std::string& name) -> const fuzzy::LinguisticVariable* {
        for (const auto& var : pkg.variables) {
            if (var.name == name) return &var;
        }
        return nullptr;
    };
    for (const auto& rule : pkg.rules) {
        const std::string entity = "rules/" + rule.name;
        if (!rule_names.insert(rule.name).second) {
            rules_ctx.error(entity, "duplicate rule name '" + rule.name + "'", rule.span.line);
            rules_resolve = false;
        }
        std::vector<ruledsl::Atom> atoms;
        collect_rule_atoms(*rule.antecedent, atoms);
        for (const auto& c : rule.consequents) atoms.push_back(c);
        for (const auto& atom : atoms) {
            const auto* var = find_variable(atom.variable);
            if (var == nullptr) {
                rules_ctx.error(entity, "undeclared variable '" + atom.variable + "'",
                                rule.span.line);
                rules_resolve = false;
                continue;
            }
            const bool term_ok =
                std::any_of(var->terms.begin(), var->terms.end(),
                            [&](const fuzzy::Term& t) { return t.label == atom.term; });
            if (!term_ok) {
                rules_ctx.error(entity,
                                "variable '" + atom.variable + "' has no term '" + atom.term + "'",
                                rule.span.line);
                rules_resolve = false;
            }
        }
    }

    if (pkg.rules.empty()) {
        rules_ctx.warning("rules", "rule base is empty; analysis runs will fail");
    }

    // DAG acyclicity and input coverage, once the rules themselves resolve.
    if (rules_resolve) {
        std::map<std::string, fuzzy::LinguisticVariable> vars;
        for (const auto& var : pkg.variables) vars[var.name] = var;
        try {
            const auto compiled = fuzzy::compile(pkg.rules, vars);
            for (const auto& input : compiled.required_inputs) {
                if (!enpi_names.count(input)) {
                    rules_ctx.warning("rules",
                                      "input variable '" + input +
                                          "' is not computed by any EnPI; its rules will not fire");
                }
            }
        } catch (const fuzzy::CycleError& e) {
            rules_ctx.error("rules", e.what());
        }
    }

    if (pkg.window.length_s <= 0) {
        ctx.error("window", "length_s must be > 0");
    }
    if (pkg.engine.defuzz_samples < 3) {
        ctx.error("defuzz_samples", "defuzz_samples must be at least 3");
    } else if (pkg.engine.defuzz_samples % 2 == 0) {
        ctx.warning("defuzz_samples", "odd sample counts keep symmetric centroids exact");
    }
    if (pkg.reporting_threshold < 0.0 || pkg.reporting_threshold > 1.0) {
        ctx.error("reporting_threshold", "reporting_threshold must be in [0, 1]");
    }

    std::set<std::string> bound_points;
    for (size_t i = 0; i < pkg.connector_bindings.size(); ++i) {
        const auto& binding = pkg.connector_bindings[i];
        const std::string entity = "connectors[" + std::to_string(i) + "]";
        if (!dp_ids.count(binding.data_point)) {
            ctx.error(entity, "undeclared data point '" + binding.data_point + "'");
        }
        if (!bound_points.insert(binding.data_point).second) {
            ctx.error(entity, "data point '" + binding.data_point + "' bound twice");
        }
        if (const auto* replay = std::get_if<procio::CsvReplay>(&binding.source)) {
            if (replay->path.empty()) ctx.error(entity, "csv_replay path must be non-empty");
            if (replay->speed_factor < 0.0) {
                ctx.error(entity, "speed_factor must be >= 0");
            }
        } else if (const auto* mb = std::get_if<procio::ModbusSource>(&binding.source)) {
            if (mb->scale == 0.0) ctx.error(entity, "scale must be nonzero");
            if (mb->poll_period_ms < 10) ctx.error(entity, "poll_period_ms must be >= 10");
            if (mb->register_count != procio::register_count_for(mb->encoding)) {
                ctx.error(entity, "register_count inconsistent with encoding");
            }
        } else if (const auto* sim = std::get_if<procio::SimulatorSource>(&binding.source)) {
            if (sim->waveform.period_s <= 0.0) ctx.error(entity, "period_s must be > 0");
            if (sim->waveform.sample_period_ms < 1) {
                ctx.error(entity, "sample_period_ms must be >= 1");
            }
        }
    }

    return diags;
}

// ---------------------------------------------------------------------------
// Load / merge / write
// ---------------------------------------------------------------------------

LoadResult load_package(const std::filesystem::path& root,
                        const analytics::AnalyzerRegistry& registry) {
    if (!std::filesystem::is_directory(root)) {
        throw IoError("package directory not found: " + root.string());
    }
    const auto kb_path = root / "kb.json";
    const auto rules_path = root / "rules.frl";
    if (!std::filesystem::exists(kb_path)) {
        throw IoError("knowledge base file not found: " + kb_path.string());
    }
    if (!std::filesystem::exists(rules_path)) {
        throw IoError("rule base file not found: " + rules_path.string());
    }
    const std::string kb_text = read_file(kb_path);
    const std::string rules_text = read_file(rules_path);

    LoadResult result;
    KnowledgePackage pkg;
    pkg.root_path = root.string();
    pkg.content_hash = fnv1a64_hex(kb_text + "\n" + rules_text);
    pkg.rule_base_source = rules_text;

    Ctx kb_ctx{result.diagnostics, "kb.json"};
    Ctx rules_ctx{result.diagnostics, "rules.frl"};
    parse_kb_json(kb_text, pkg, kb_ctx);
    parse_package_sources(pkg, kb_ctx, rules_ctx);

    if (!has_errors(result.diagnostics)) {
        auto more = validate(pkg, registry);
        result.diagnostics.insert(result.diagnostics.end(), more.begin(), more.end());
    }
    if (!has_errors(result.diagnostics)) {
        result.package = std::move(pkg);
    }
    return result;
}

PackageFragment load_fragment(const std::filesystem::path& root) {
    if (!std::filesystem::is_directory(root)) {
        throw IoError("overlay directory not found: " + root.string());
    }
    PackageFragment fragment;
    const auto kb_path = root / "kb.json";
    const auto rules_path = root / "rules.frl";
    if (std::filesystem::exists(kb_path)) {
        std::vector<Diagnostic> diags;
        Ctx ctx{diags, "kb.json"};
        KnowledgePackage scratch;
        scratch.schema_version = "1";  // sections are all optional in a fragment
        const std::string text = read_file(kb_path);
        json doc;
        try {
            doc = json::parse(text);
        } catch (const json::parse_error& e) {
            throw IoError("overlay kb.json is not valid JSON: " + std::string(e.what()));
        }
        // reuse the full parser on a padded document, then pick the sections
        // that were actually present
        json padded = doc;
        if (!padded.contains("schema_version")) padded["schema_version"] = "1";
        if (!padded.contains("machine")) {
            padded["machine"] = {{"id", "placeholder_machine"}};
        }
        if (!padded.contains("data_points")) padded["data_points"] = json::array();
        if (!padded.contains("window")) {
            padded["window"] = {{"length_s", 3600}};
        }
        parse_kb_json(padded.dump(), scratch, ctx);
        if (has_errors(diags)) {
            throw IoError("overlay kb.json is malformed: " + format_diagnostic(diags.front()));
        }
        if (doc.contains("machine")) fragment.machine = scratch.machine;
        if (doc.contains("window")) fragment.window = scratch.window;
        fragment.data_points = std::move(scratch.data_points);
        fragment.variables = std::move(scratch.variables);
        fragment.enpis = std::move(scratch.enpis);
        fragment.connector_bindings = std::move(scratch.connector_bindings);
    }
    if (std::filesystem::exists(rules_path)) {
        fragment.rules = ruledsl::parse_rules(read_file(rules_path));
    }
    return fragment;
}

namespace {

template <typename T, typename KeyFn>
void merge_entities(std::vector<T>& base, const std::vector<T>& overlay, KeyFn key) {
    for (const auto& entity : overlay) {
        auto it = std::find_if(base.begin(), base.end(),
                               [&](const T& existing) { return key(existing) == key(entity); });
        if (it != base.end()) {
            *it = entity;  // replace-by-id
        } else {
            base.push_back(entity);  // append-if-new
        }
    }
}

json package_to_json(const KnowledgePackage& pkg) {
    json doc;
    doc["schema_version"] = pkg.schema_version;
    doc["machine"] = {{"id", pkg.machine.id},
                      {"label", pkg.machine.label},
                      {"description", pkg.machine.description},
                      {"energy_notes", pkg.machine.energy_notes}};
    doc["data_points"] = json::array();
    for (const auto& dp : pkg.data_points) {
        doc["data_points"].push_back({{"id", dp.id},
                                      {"label", dp.label},
                                      {"unit", dp.unit},
                                      {"kind", std::string(data_point_kind_name(dp.kind))}});
    }
    doc["variables"] = json::array();
    for (const auto& var : pkg.variables) {
        doc["variables"].push_back(variable_to_json(var));
    }
    doc["enpis"] = json::array();
    for (const auto& def : pkg.enpis) {
        doc["enpis"].push_back({{"name", def.name},
                                {"expression_source", def.expression_source},
                                {"unit", def.unit}});
    }
    doc["window"] = {{"length_s", pkg.window.length_s},
                     {"alignment", pkg.window.alignment == procio::Alignment::epoch
                                       ? "epoch"
                                       : "first_sample"}};
    doc["connectors"] = json::array();
    for (const auto& binding : pkg.connector_bindings) {
        doc["connectors"].push_back(connector_to_json(binding));
    }
    doc["norms"] = pkg.engine.norms == fuzzy::Norms::minmax ? "minmax" : "product";
    doc["defuzz_samples"] = pkg.engine.defuzz_samples;
    doc["reporting_threshold"] = pkg.reporting_threshold;
    return doc;
}

}  // namespace

LoadResult merge_temporary(const KnowledgePackage& base, const PackageFragment& overlay,
                           const analytics::AnalyzerRegistry& registry) {
    KnowledgePackage merged = base;
    if (overlay.machine) merged.machine = *overlay.machine;
    if (overlay.window) merged.window = *overlay.window;
    merge_entities(merged.data_points, overlay.data_points,
                   [](const DataPointSpec& d) { return d.id; });
    merge_entities(merged.variables, overlay.variables,
                   [](const fuzzy::LinguisticVariable& v) { return v.name; });
    merge_entities(merged.enpis, overlay.enpis, [](const EnPIDefinition& e) { return e.name; });
    merge_entities(merged.rules, overlay.rules, [](const ruledsl::RuleAst& r) { return r.name; });
    merge_entities(merged.connector_bindings, overlay.connector_bindings,
                   [](const procio::ConnectorBinding& b) { return b.data_point; });
    if (!overlay.rules.empty()) {
        merged.rule_base_source = ruledsl::print_rules(merged.rules);
    }

    LoadResult result;
    Ctx kb_ctx{result.diagnostics, "kb.json"};
    Ctx rules_ctx{result.diagnostics, "rules.frl"};
    for (auto& def : merged.enpis) {
        if (def.expression) continue;
        try {
            def.expression = ruledsl::parse_enpi(def.expression_source);
        } catch (const ruledsl::ParseError& e) {
            kb_ctx.error("enpis/" + def.name, e.what());
        }
    }
    merged.content_hash =
        fnv1a64_hex(package_to_json(merged).dump() + "\n" + merged.rule_base_source);

    if (!has_errors(result.diagnostics)) {
        auto more = validate(merged, registry);
        result.diagnostics.insert(result.diagnostics.end(), more.begin(), more.end());
    }
    if (!has_errors(result.diagnostics)) {
        result.package = std::move(merged);
    }
    return result;
}

void write_package(const KnowledgePackage& pkg, const std::filesystem::path& root) {
    std::error_code ec;
    std::filesystem::create_directories(root, ec);
    if (ec) {
        throw IoError("cannot create package directory: " + root.string());
    }
    {
        std::ofstream out(root / "kb.json", std::ios::binary);
        if (!out) {
            throw IoError("cannot write kb.json under " + root.string());
        }
        out << package_to_json(pkg).dump(2) << '\n';
    }
    {
        std::ofstream out(root / "rules.frl", std::ios::binary);
        if (!out) {
            throw IoError("cannot write rules.frl under " + root.string());
        }
        out << pkg.rule_base_source;
    }
}

}  // namespace ess::kb
