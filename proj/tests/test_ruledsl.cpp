#include <doctest.h>

#include <algorithm>
#include <cctype>
#include <random>

#include "ess/ruledsl.hpp"
#include "generators.hpp"

using namespace ess::ruledsl;

TEST_CASE("single rule with AND antecedent") {
    const auto rules =
        parse_rules("RULE r1: IF idle_share IS high AND load IS low THEN waste IS high;");
    REQUIRE(rules.size() == 1);
    const auto& r = rules[0];
    CHECK(r.name == "r1");
    CHECK(r.weight == 1.0);
    REQUIRE(r.consequents.size() == 1);
    CHECK(r.consequents[0].variable == "waste");
    CHECK(r.consequents[0].term == "high");
    const auto* and_node = std::get_if<AndNode>(&r.antecedent->node);
    REQUIRE(and_node != nullptr);
    CHECK(and_node->children.size() == 2);
    const auto* lhs = std::get_if<Atom>(&and_node->children[0]->node);
    REQUIRE(lhs != nullptr);
    CHECK(lhs->variable == "idle_share");
    CHECK(lhs->term == "high");
}

TEST_CASE("WITH clause sets the weight") {
    const auto rules = parse_rules("RULE r2: IF x IS a THEN y IS b WITH 0.5;");
    REQUIRE(rules.size() == 1);
    CHECK(rules[0].weight == 0.5);
}

TEST_CASE("missing term is reported at THEN") {
    try {
        parse_rules("RULE r3: IF x IS THEN y IS b;");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.pos.line == 1);
        CHECK(std::string(e.what()).find("THEN") != std::string::npos);
    }
}

TEST_CASE("keywords are case-insensitive, identifiers are not") {
    const auto upper = parse_rules("RULE r1: IF x IS a THEN y IS b;");
    const auto lower = parse_rules("rule r1: if x is a then y is b;");
    const auto mixed = parse_rules("Rule r1: iF x Is a tHeN y iS b;");
    CHECK(rule_equal(upper[0], lower[0]));
    CHECK(rule_equal(upper[0], mixed[0]));
}

TEST_CASE("comments and blank lines are ignored, order preserved") {
    const auto rules = parse_rules(
        "# energy waste rules\n"
        "RULE a: IF x IS a THEN y IS b;\n"
        "\n"
        "RULE b: IF x IS b THEN y IS c;  # trailing note\n");
    REQUIRE(rules.size() == 2);
    CHECK(rules[0].name == "a");
    CHECK(rules[1].name == "b");
    CHECK(rules[1].span.line == 4);
}

TEST_CASE("duplicate rule names are rejected") {
    CHECK_THROWS_AS(parse_rules("RULE r: IF x IS a THEN y IS b; RULE r: IF x IS b THEN y IS c;"),
                    ParseError);
}

TEST_CASE("weights outside (0,1] are rejected") {
    CHECK_THROWS_AS(parse_rules("RULE r: IF x IS a THEN y IS b WITH 0;"), ParseError);
    CHECK_THROWS_AS(parse_rules("RULE r: IF x IS a THEN y IS b WITH 1.5;"), ParseError);
}

TEST_CASE("duplicate consequent variables are rejected") {
    CHECK_THROWS_AS(parse_rules("RULE r: IF x IS a THEN y IS b, y IS c;"), ParseError);
}

TEST_CASE("multiple consequents on distinct variables parse") {
    const auto rules = parse_rules("RULE r: IF x IS a THEN y IS b, z IS c;");
    REQUIRE(rules[0].consequents.size() == 2);
    CHECK(rules[0].consequents[1].variable == "z");
}

// ---------------------------------------------------------------------------
// Printer
// ---------------------------------------------------------------------------

TEST_CASE("canonical print of the grammar example") {
    const std::string source =
        "RULE r1: IF idle_share IS high AND load IS low THEN waste IS high;";
    const auto rules = parse_rules(source);
    CHECK(print_rules(rules) == source + "\n");
}

TEST_CASE("OR of ANDs prints without redundant parentheses") {
    const auto rules =
        parse_rules("RULE r: IF a IS x AND b IS y OR c IS z AND d IS w THEN y IS b;");
    const std::string printed = print_rules(rules);
    CHECK(printed ==
          "RULE r: IF a IS x AND b IS y OR c IS z AND d IS w THEN y IS b;\n");
}

TEST_CASE("NOT over OR keeps its parentheses") {
    const auto rules = parse_rules("RULE r: IF NOT (a IS x OR b IS y) THEN y IS b;");
    const std::string printed = print_rules(rules);
    CHECK(printed.find("NOT (a IS x OR b IS y)") != std::string::npos);
    CHECK(rule_equal(parse_rules(printed)[0], rules[0]));
}

TEST_CASE("explicitly nested same-operator groups survive the round trip") {
    const auto rules = parse_rules("RULE r: IF a IS x AND (b IS y AND c IS z) THEN y IS b;");
    const auto reparsed = parse_rules(print_rules(rules));
    CHECK(rule_equal(rules[0], reparsed[0]));
    // and it is not the same tree as the flat chain
    const auto flat = parse_rules("RULE r: IF a IS x AND b IS y AND c IS z THEN y IS b;");
    CHECK(!expr_equal(*rules[0].antecedent, *flat[0].antecedent));
}

TEST_CASE("round trip holds for 500 random ASTs up to depth 6") {
    gen::Rng rng(20240517);
    for (int i = 0; i < 500; ++i) {
        std::vector<RuleAst> rules;
        rules.push_back(gen::random_rule(rng, 6, "r" + std::to_string(i)));
        const std::string printed = print_rules(rules);
        CAPTURE(printed);
        const auto reparsed = parse_rules(printed);
        REQUIRE(reparsed.size() == 1);
        CHECK(rule_equal(rules[0], reparsed[0]));
    }
}

TEST_CASE("lowercasing a printed source does not change the AST") {
    gen::Rng rng(7);
    for (int i = 0; i < 50; ++i) {
        std::vector<RuleAst> rules{gen::random_rule(rng, 4, "r0")};
        std::string printed = print_rules(rules);
        std::transform(printed.begin(), printed.end(), printed.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        CHECK(rule_equal(parse_rules(printed)[0], rules[0]));
    }
}

TEST_CASE("arbitrary bytes never crash the parser") {
    gen::Rng rng(99);
    std::uniform_int_distribution<int> len_dist(0, 4096);
    std::uniform_int_distribution<int> byte_dist(1, 255);
    // mix raw noise with token soup built from grammar fragments
    const std::vector<std::string> fragments = {"RULE", "IF",  "THEN", "WITH", "AND", "OR",
                                                "NOT",  "IS",  ";",    ":",    "(",   ")",
                                                "x",    "0.5", ",",    "#",    "\n",  "\"s\""};
    for (int i = 0; i < 200; ++i) {
        std::string source;
        if (i == 0) {
            // full 64 KiB of noise
            for (int j = 0; j < 64 * 1024; ++j) {
                source.push_back(static_cast<char>(byte_dist(rng)));
            }
        } else if (i % 2 == 0) {
            const int len = len_dist(rng);
            for (int j = 0; j < len; ++j) {
                source.push_back(static_cast<char>(byte_dist(rng)));
            }
        } else {
            std::uniform_int_distribution<size_t> frag_dist(0, fragments.size() - 1);
            for (int j = 0; j < 200; ++j) {
                source += fragments[frag_dist(rng)];
                source += ' ';
            }
        }
        try {
            parse_rules(source);
        } catch (const ParseError& e) {
            CHECK(e.pos.line >= 1);
            CHECK(e.pos.column >= 1);
        }
    }
}

// ---------------------------------------------------------------------------
// EnPI expressions
// ---------------------------------------------------------------------------

TEST_CASE("EnPI ratio of aggregates") {
    const auto expr = parse_enpi("integral(power) / sum_delta(parts)");
    const auto* bin = std::get_if<Binary>(&expr->node);
    REQUIRE(bin != nullptr);
    CHECK(bin->op == BinOp::div);
    const auto* lhs = std::get_if<Call>(&bin->lhs->node);
    REQUIRE(lhs != nullptr);
    CHECK(lhs->function == "integral");
    CHECK(print_call(*lhs) == "integral(power)");
}

TEST_CASE("EnPI duration ratio") {
    const auto expr = parse_enpi("duration_below(power, 100) / window_length()");
    const auto* bin = std::get_if<Binary>(&expr->node);
    REQUIRE(bin != nullptr);
    const auto* rhs = std::get_if<Call>(&bin->rhs->node);
    REQUIRE(rhs != nullptr);
    CHECK(rhs->function == "window_length");
    CHECK(rhs->args.empty());
}

TEST_CASE("trailing comma is a positioned syntax error") {
    try {
        parse_enpi("mean(power,)");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("expected expression") != std::string::npos);
        CHECK(e.pos.column == 12);
    }
}

TEST_CASE("unknown aggregates and bad arity are rejected") {
    CHECK_THROWS_AS(parse_enpi("median(power)"), ParseError);
    CHECK_THROWS_AS(parse_enpi("mean(power, parts)"), ParseError);
    CHECK_THROWS_AS(parse_enpi("duration_below(power)"), ParseError);
    CHECK_THROWS_AS(parse_enpi("window_length(power)"), ParseError);
    CHECK_THROWS_AS(parse_enpi("custom(power)"), ParseError);
}

TEST_CASE("custom takes a quoted analyzer name plus data points") {
    const auto expr = parse_enpi("custom(\"linreg_slope\", power)");
    const auto* call = std::get_if<Call>(&expr->node);
    REQUIRE(call != nullptr);
    REQUIRE(call->args.size() == 2);
    CHECK(std::get<StringLit>(call->args[0]).value == "linreg_slope");
    CHECK(print_call(*call) == "custom(\"linreg_slope\", power)");
}

TEST_CASE("standard precedence and associativity") {
    const auto expr = parse_enpi("1 + 2 * 3 - 4 / 2");
    CHECK(print_enpi(*expr) == "1 + 2 * 3 - 4 / 2");
    const auto grouped = parse_enpi("(1 + 2) * 3");
    CHECK(print_enpi(*grouped) == "(1 + 2) * 3");
}

TEST_CASE("visit_calls sees every aggregate") {
    const auto expr = parse_enpi("integral(power) / sum_delta(parts) + mean(power)");
    int calls = 0;
    visit_calls(*expr, [&](const Call&) { ++calls; });
    CHECK(calls == 3);
}

TEST_CASE("unterminated string literals are positioned errors") {
    CHECK_THROWS_AS(parse_enpi("custom(\"linreg"), ParseError);
    CHECK_THROWS_AS(parse_enpi("custom(\"a\nb\", power)"), ParseError);
}
