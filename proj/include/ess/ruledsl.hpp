#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace ess::ruledsl {

struct SourcePos {
    int line = 0;    // 1-based
    int column = 0;  // 1-based
};

/// First-error-wins parse failure with the position the parser stopped at.
struct ParseError : std::runtime_error {
    ParseError(SourcePos pos, const std::string& msg);
    SourcePos pos;
};

// ---------------------------------------------------------------------------
// Rule ASTs
// ---------------------------------------------------------------------------

/// `variable IS term`
struct Atom {
    std::string variable;
    std::string term;
};

struct ExprNode;
using ExprPtr = std::shared_ptr<const ExprNode>;

struct NotNode {
    ExprPtr child;
};
/// n-ary conjunction/disjunction; children collected at one syntactic level,
/// so `a AND (b AND c)` keeps its explicit nesting.
struct AndNode {
    std::vector<ExprPtr> children;  // size >= 2
};
struct OrNode {
    std::vector<ExprPtr> children;  // size >= 2
};

struct ExprNode {
    std::variant<Atom, NotNode, AndNode, OrNode> node;
};

ExprPtr make_atom(std::string variable, std::string term);
ExprPtr make_not(ExprPtr child);
ExprPtr make_and(std::vector<ExprPtr> children);
ExprPtr make_or(std::vector<ExprPtr> children);

struct RuleAst {
    std::string name;
    ExprPtr antecedent;                // non-null
    std::vector<Atom> consequents;     // non-empty, pairwise distinct variables
    double weight = 1.0;               // in (0, 1]
    SourcePos span;                    // position of the RULE keyword
};

/// Structural equality; source spans are ignored.
bool expr_equal(const ExprNode& a, const ExprNode& b);
bool rule_equal(const RuleAst& a, const RuleAst& b);

/// Parses a `.frl` source. Keywords are case-insensitive, `#` starts a line
/// comment, statements end with `;`. Throws ParseError on the first problem,
/// including duplicate rule names.
std::vector<RuleAst> parse_rules(std::string_view source);

/// Canonical text form, one rule per line, uppercase keywords, parentheses
/// only where precedence or explicit nesting requires them.
/// parse_rules(print_rules(r)) is structurally equal to r.
std::string print_rules(const std::vector<RuleAst>& rules);
std::string print_expr(const ExprNode& expr);

// ---------------------------------------------------------------------------
// EnPI expression ASTs
// ---------------------------------------------------------------------------

struct EnPIExpr;
using EnPIExprPtr = std::shared_ptr<const EnPIExpr>;

struct Constant {
    double value;
};

enum class BinOp { add, sub, mul, div };

struct Binary {
    BinOp op;
    EnPIExprPtr lhs;
    EnPIExprPtr rhs;
};

struct DataPointRef {
    std::string id;
};
struct StringLit {
    std::string value;
};
using CallArg = std::variant<DataPointRef, double, StringLit>;

/// Aggregate call, e.g. integral(power) or custom("linreg_slope", power).
struct Call {
    std::string function;
    std::vector<CallArg> args;
};

struct EnPIExpr {
    std::variant<Constant, Binary, Call> node;
};

/// Parses an EnPI expression with standard arithmetic precedence. The
/// aggregate name and argument shape are checked against the built-in set
/// (mean, min, max, last, sum_delta, integral, duration_below,
/// duration_above, window_length, custom).
EnPIExprPtr parse_enpi(std::string_view source);

/// Label used in traces, e.g. `duration_below(power, 100)`.
std::string print_call(const Call& call);
std::string print_enpi(const EnPIExpr& expr);

/// Invokes fn for every Call node in the expression tree.
void visit_calls(const EnPIExpr& expr, const std::function<void(const Call&)>& fn);

}  // namespace ess::ruledsl
