#include <doctest.h>

#include <filesystem>

#include <json.hpp>

#include "ess/explain.hpp"
#include "ess/pipeline.hpp"
#include "ess/procio.hpp"

using namespace ess;
namespace fs = std::filesystem;

namespace {

const fs::path kDemoPackage = fs::path(ESS_SOURCE_DIR) / "demo";
const fs::path kDemoCsv = kDemoPackage / "data" / "demo.csv";

kb::KnowledgePackage demo_package() {
    const auto registry = analytics::AnalyzerRegistry::with_builtins();
    auto result = kb::load_package(kDemoPackage, registry);
    REQUIRE(result.package.has_value());
    return std::move(*result.package);
}

explain::Report demo_report() {
    const auto registry = analytics::AnalyzerRegistry::with_builtins();
    const auto pkg = demo_package();
    const auto loaded = procio::load_csv(kDemoCsv.string());
    return pipeline::analyze_batch(pkg, loaded.series, registry);
}

}  // namespace

TEST_CASE("rules are ordered by descending strength, inactive ones retained") {
    const auto rules = ruledsl::parse_rules(
        "RULE weak: IF x IS a THEN y IS b WITH 0.3;"
        "RULE strong: IF x IS a THEN y IS b WITH 0.7;"
        "RULE silent: IF x IS b THEN y IS b;");
    std::map<std::string, fuzzy::LinguisticVariable> vars;
    vars["x"] = {"x", 0.0, 1.0, "", {{"a", {fuzzy::Trapezoidal{0, 0, 1, 1}}},
                                     {"b", {fuzzy::Triangular{0.9, 1, 1}}}}};
    vars["y"] = {"y", 0.0, 1.0, "", {{"b", {fuzzy::Triangular{0, 0.5, 1}}}}};
    const auto compiled = fuzzy::compile(rules, vars);
    const auto inference = fuzzy::infer(compiled, vars, {{"x", 0.0}});

    analytics::WindowSnapshot snap;
    snap.start_ms = 0;
    snap.end_ms = 1000;
    const auto trace = explain::build_trace(snap, {}, inference, compiled, 0.5);
    REQUIRE(trace.rules.size() == 3);
    CHECK(trace.rules[0].name == "strong");
    CHECK(trace.rules[1].name == "weak");
    CHECK(trace.rules[2].name == "silent");
    CHECK(trace.rules[2].strength == 0.0);
    CHECK(!trace.rules[2].active);
    CHECK(trace.rules[0].active);
}

TEST_CASE("a run where nothing fires reports no activation everywhere") {
    const auto rules = ruledsl::parse_rules("RULE r: IF x IS b THEN y IS b;");
    std::map<std::string, fuzzy::LinguisticVariable> vars;
    vars["x"] = {"x", 0.0, 1.0, "", {{"a", {fuzzy::Trapezoidal{0, 0, 0.4, 0.5}}},
                                     {"b", {fuzzy::Trapezoidal{0.5, 0.6, 1, 1}}}}};
    vars["y"] = {"y", 0.0, 1.0, "", {{"b", {fuzzy::Triangular{0, 0.5, 1}}}}};
    const auto compiled = fuzzy::compile(rules, vars);
    const auto inference = fuzzy::infer(compiled, vars, {{"x", 0.0}});

    analytics::WindowSnapshot snap;
    const auto trace = explain::build_trace(snap, {}, inference, compiled, 0.5);
    for (const auto& rule : trace.rules) {
        CHECK(!rule.active);
    }
    REQUIRE(trace.outputs.size() == 1);
    CHECK(!trace.outputs[0].crisp.has_value());
    CHECK(trace.recommendations.empty());
}

TEST_CASE("demo first window matches the hand computation") {
    // Window [00:00, 01:00): integral = 5000 W * 3600 s = 1.8e7 J, 10 parts
    //   energy_per_part = 1.8e6 J  -> low 0.0, high 1.0
    //   idle_share      = 0.0      -> low 1.0, high 0.0
    //   r1 idle high             -> 0
    //   r2 min(1.0, 1.0) * 0.8   -> 0.8
    //   r3 min(0.0, 1.0)         -> 0
    //   waste: high clipped 0.8, centroid ~0.755; waste high degree 1.0
    //   r4 -> action optimize clipped 1.0, centroid ~0.8444; r5 -> 0
    const auto report = demo_report();
    REQUIRE(report.windows.size() == 3);
    const auto& w1 = report.windows[0];

    REQUIRE(w1.enpis.size() == 2);
    CHECK(w1.enpis[0].name == "energy_per_part");
    CHECK(*w1.enpis[0].value == 1.8e6);
    CHECK(w1.enpis[0].dropped_samples.at("power") == 1);  // the bad 00:15 row
    CHECK(w1.enpis[1].name == "idle_share");
    CHECK(*w1.enpis[1].value == 0.0);

    REQUIRE(w1.rules.size() == 5);
    CHECK(w1.rules[0].name == "r4");
    CHECK(w1.rules[0].strength == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(w1.rules[1].name == "r2");
    CHECK(w1.rules[1].strength == doctest::Approx(0.8).epsilon(1e-9));
    CHECK(w1.rules[2].strength == 0.0);

    REQUIRE(w1.outputs.size() == 2);
    const auto& action = w1.outputs[0];
    const auto& waste = w1.outputs[1];
    CHECK(waste.variable == "waste");
    CHECK(*waste.crisp == doctest::Approx(0.755).epsilon(1e-3));
    CHECK(waste.dominant_term == "high");
    CHECK(action.variable == "action");
    CHECK(*action.crisp == doctest::Approx(0.8444).epsilon(1e-3));
    CHECK(action.dominant_term == "optimize");

    REQUIRE(w1.recommendations.size() == 2);
    CHECK(w1.recommendations[0].variable == "action");
    CHECK(w1.recommendations[0].term == "optimize");
    CHECK(w1.recommendations[1].variable == "waste");
    CHECK(w1.recommendations[1].term == "high");
}

TEST_CASE("no-data EnPI disables its rules but the window still reports") {
    const auto report = demo_report();
    const auto& w2 = report.windows[1];  // idle hour, parts counter flat
    CHECK(!w2.enpis[0].value.has_value());
    CHECK(w2.enpis[0].division_by_zero);
    CHECK(*w2.enpis[1].value == 1.0);
    int inapplicable = 0;
    for (const auto& rule : w2.rules) {
        if (!rule.applicable) ++inapplicable;
    }
    CHECK(inapplicable == 2);  // r2 and r3 need energy_per_part
    CHECK(*w2.outputs[1].crisp == doctest::Approx(0.766667).epsilon(1e-3));
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

TEST_CASE("json output re-serializes byte-identically") {
    const auto report = demo_report();
    const auto pkg = demo_package();
    const auto text = explain::render_report(report, explain::Format::json, pkg.variables);
    const auto parsed = nlohmann::json::parse(text);
    CHECK(parsed.dump(2) + "\n" == text);
    // top-level schema
    CHECK(parsed.contains("package"));
    CHECK(parsed.contains("config"));
    CHECK(parsed.contains("windows"));
    CHECK(parsed["windows"].size() == 3);
    for (const auto& window : parsed["windows"]) {
        CHECK(window.contains("enpis"));
        CHECK(window.contains("inputs"));
        CHECK(window.contains("rules"));
        CHECK(window.contains("outputs"));
        CHECK(window.contains("recommendations"));
    }
}

TEST_CASE("json crisp values equal the trace values exactly") {
    const auto report = demo_report();
    const auto pkg = demo_package();
    const auto text = explain::render_report(report, explain::Format::json, pkg.variables);
    const auto parsed = nlohmann::json::parse(text);
    for (size_t i = 0; i < report.windows.size(); ++i) {
        for (const auto& output : report.windows[i].outputs) {
            const auto& cell = parsed["windows"][i]["outputs"][output.variable]["crisp"];
            if (output.crisp) {
                CHECK(cell.get<double>() == *output.crisp);  // bit-exact via shortest repr
            } else {
                CHECK(cell.is_null());
            }
        }
        for (const auto& enpi : report.windows[i].enpis) {
            const auto& cell = parsed["windows"][i]["enpis"][enpi.name]["value"];
            if (enpi.value) {
                CHECK(cell.get<double>() == *enpi.value);
            } else {
                CHECK(cell.is_null());
            }
        }
    }
}

TEST_CASE("every compiled rule appears exactly once per trace") {
    const auto report = demo_report();
    for (const auto& window : report.windows) {
        CHECK(window.rules.size() == 5);
        std::set<std::string> names;
        for (const auto& rule : window.rules) names.insert(rule.name);
        CHECK(names.size() == 5);
    }
}

TEST_CASE("identical reports render byte-identical json") {
    const auto pkg = demo_package();
    const auto a = demo_report();
    const auto b = demo_report();
    CHECK(explain::render_report(a, explain::Format::json, pkg.variables) ==
          explain::render_report(b, explain::Format::json, pkg.variables));
}

TEST_CASE("markdown has one EnPI table row per EnPI per window") {
    const auto report = demo_report();
    const auto pkg = demo_package();
    const auto text = explain::render_report(report, explain::Format::markdown, pkg.variables);
    size_t rows = 0;
    size_t pos = 0;
    const std::string needle = "| energy_per_part |";
    while ((pos = text.find(needle, pos)) != std::string::npos) {
        ++rows;
        pos += needle.size();
    }
    CHECK(rows == 3);
    CHECK(text.find("## Recommendations") != std::string::npos);
}

TEST_CASE("plotdata membership table samples the declared shapes") {
    explain::Report report;
    report.engine.defuzz_samples = 5;
    std::vector<fuzzy::LinguisticVariable> variables;
    variables.push_back(
        {"level", 0.0, 2.0, "1", {{"mid", {fuzzy::Triangular{0, 1, 2}}}}});
    const auto text = explain::render_report(report, explain::Format::plotdata, variables);
    CHECK(text.find("# enpis.csv") != std::string::npos);
    CHECK(text.find("# membership.csv") != std::string::npos);
    CHECK(text.find("level,mid,0,0\n") != std::string::npos);
    CHECK(text.find("level,mid,0.5,0.5\n") != std::string::npos);
    CHECK(text.find("level,mid,1,1\n") != std::string::npos);
    CHECK(text.find("level,mid,1.5,0.5\n") != std::string::npos);
    CHECK(text.find("level,mid,2,0\n") != std::string::npos);
}

TEST_CASE("plotdata lists EnPI values per window") {
    const auto report = demo_report();
    const auto pkg = demo_package();
    const auto text = explain::render_report(report, explain::Format::plotdata, pkg.variables);
    CHECK(text.find("1704067200000,1704070800000,energy_per_part,1800000\n") !=
          std::string::npos);
    // no-data cell stays empty
    CHECK(text.find("1704070800000,1704074400000,energy_per_part,\n") != std::string::npos);
}

TEST_CASE("joule EnPIs additionally show kWh in markdown") {
    const auto report = demo_report();
    const auto pkg = demo_package();
    const auto text = explain::render_report(report, explain::Format::markdown, pkg.variables);
    // 1.8e6 J per part is 0.5 kWh per part
    CHECK(text.find("1800000 (0.5 kWh)") != std::string::npos);
}
