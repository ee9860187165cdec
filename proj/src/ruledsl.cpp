#include "ess/ruledsl.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <map>
#include <set>
#include <sstream>

namespace ess::ruledsl {

ParseError::ParseError(SourcePos p, const std::string& msg)
    : std::runtime_error("parse error at " + std::to_string(p.line) + ":" +
                         std::to_string(p.column) + ": " + msg),
      pos(p) {}

ExprPtr make_atom(std::string variable, std::string term) {
    return std::make_shared<ExprNode>(ExprNode{Atom{std::move(variable), std::move(term)}});
}
ExprPtr make_not(ExprPtr child) {
    return std::make_shared<ExprNode>(ExprNode{NotNode{std::move(child)}});
}
ExprPtr make_and(std::vector<ExprPtr> children) {
    return std::make_shared<ExprNode>(ExprNode{AndNode{std::move(children)}});
}
ExprPtr make_or(std::vector<ExprPtr> children) {
    return std::make_shared<ExprNode>(ExprNode{OrNode{std::move(children)}});
}

// ---------------------------------------------------------------------------
// Lexer shared by the rule and EnPI grammars
// ---------------------------------------------------------------------------

namespace {

enum class TokKind { ident, number, string, punct, end };

struct Token {
    TokKind kind = TokKind::end;
    std::string text;    // ident spelling, string contents, punct char(s)
    double number = 0.0; // valid when kind == number
    SourcePos pos;
};

class Lexer {
public:
    explicit Lexer(std::string_view src) : src_(src) {}

    Token next() {
        skip_ws_and_comments();
        Token tok;
        tok.pos = pos();
        if (i_ >= src_.size()) {
            return tok;  // end
        }
        const char c = src_[i_];
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            size_t start = i_;
            while (i_ < src_.size() &&
                   (std::isalnum(static_cast<unsigned char>(src_[i_])) || src_[i_] == '_')) {
                advance();
            }
            tok.kind = TokKind::ident;
            tok.text = std::string(src_.substr(start, i_ - start));
            return tok;
        }
        if (std::isdigit(static_cast<unsigned char>(c))) {
            return lex_number(tok);
        }
        if (c == '"') {
            advance();
            size_t start = i_;
            while (i_ < src_.size() && src_[i_] != '"' && src_[i_] != '\n') {
                advance();
            }
            if (i_ >= src_.size() || src_[i_] != '"') {
                throw ParseError(tok.pos, "unterminated string literal");
            }
            tok.kind = TokKind::string;
            tok.text = std::string(src_.substr(start, i_ - start));
            advance();  // closing quote
            return tok;
        }
        static const std::string punct = ":;,()+-*/";
        if (punct.find(c) != std::string::npos) {
            tok.kind = TokKind::punct;
            tok.text = std::string(1, c);
            advance();
            return tok;
        }
        throw ParseError(tok.pos, std::string("unexpected character '") + c + "'");
    }

    SourcePos pos() const { return {line_, col_}; }

private:
    Token lex_number(Token tok) {
        size_t start = i_;
        while (i_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[i_]))) advance();
        if (i_ < src_.size() && src_[i_] == '.') {
            advance();
            if (i_ >= src_.size() || !std::isdigit(static_cast<unsigned char>(src_[i_]))) {
                throw ParseError(pos(), "digit expected after decimal point");
            }
            while (i_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[i_]))) advance();
        }
        if (i_ < src_.size() && (src_[i_] == 'e' || src_[i_] == 'E')) {
            advance();
            if (i_ < src_.size() && (src_[i_] == '+' || src_[i_] == '-')) advance();
            if (i_ >= src_.size() || !std::isdigit(static_cast<unsigned char>(src_[i_]))) {
                throw ParseError(pos(), "digit expected in exponent");
            }
            while (i_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[i_]))) advance();
        }
        const char* begin = src_.data() + start;
        const char* end = src_.data() + i_;
        double value = 0.0;
        auto [p, ec] = std::from_chars(begin, end, value);
        if (ec != std::errc() || p != end) {
            throw ParseError(tok.pos, "malformed number");
        }
        tok.kind = TokKind::number;
        tok.text = std::string(begin, end);
        tok.number = value;
        return tok;
    }

    void skip_ws_and_comments() {
        while (i_ < src_.size()) {
            const char c = src_[i_];
            if (c == '#') {
                while (i_ < src_.size() && src_[i_] != '\n') advance();
            } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                advance();
            } else {
                break;
            }
        }
    }

    void advance() {
        if (src_[i_] == '\n') {
            ++line_;
            col_ = 1;
        } else {
            ++col_;
        }
        ++i_;
    }

    std::string_view src_;
    size_t i_ = 0;
    int line_ = 1;
    int col_ = 1;
};

std::string to_upper(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return std::toupper(c); });
    return out;
}

bool is_keyword(const Token& t, std::string_view kw) {
    return t.kind == TokKind::ident && to_upper(t.text) == kw;
}

const std::set<std::string> kRuleKeywords = {"RULE", "IF", "THEN", "WITH", "AND", "OR", "NOT", "IS"};

// Pull-parser over the token stream with single-token lookahead.
class TokenStream {
public:
    explicit TokenStream(std::string_view src) : lexer_(src) { cur_ = lexer_.next(); }

    const Token& peek() const { return cur_; }
    Token take() {
        Token t = cur_;
        cur_ = lexer_.next();
        return t;
    }

    Token expect_punct(char c, const std::string& what) {
        if (cur_.kind != TokKind::punct || cur_.text[0] != c) {
            throw ParseError(cur_.pos, "expected '" + std::string(1, c) + "' " + what +
                                           ", got " + describe(cur_));
        }
        return take();
    }

    Token expect_keyword(std::string_view kw) {
        if (!is_keyword(cur_, kw)) {
            throw ParseError(cur_.pos,
                             "expected " + std::string(kw) + ", got " + describe(cur_));
        }
        return take();
    }

    Token expect_identifier(const std::string& what) {
        if (cur_.kind != TokKind::ident) {
            throw ParseError(cur_.pos, "expected " + what + ", got " + describe(cur_));
        }
        if (kRuleKeywords.count(to_upper(cur_.text)) > 0) {
            throw ParseError(cur_.pos,
                             "expected " + what + ", got keyword " + to_upper(cur_.text));
        }
        return take();
    }

    static std::string describe(const Token& t) {
        switch (t.kind) {
            case TokKind::ident:
                return "'" + t.text + "'";
            case TokKind::number:
                return "number " + t.text;
            case TokKind::string:
                return "string \"" + t.text + "\"";
            case TokKind::punct:
                return "'" + t.text + "'";
            case TokKind::end:
                return "end of input";
        }
        return "?";
    }

private:
    Lexer lexer_;
    Token cur_;
};

// ---- rule grammar ----------------------------------------------------------

class RuleParser {
public:
    explicit RuleParser(std::string_view src) : ts_(src) {}

    std::vector<RuleAst> parse_all() {
        std::vector<RuleAst> rules;
        std::set<std::string> names;
        while (ts_.peek().kind != TokKind::end) {
            RuleAst rule = parse_rule();
            if (!names.insert(rule.name).second) {
                throw ParseError(rule.span, "duplicate rule name '" + rule.name + "'");
            }
            rules.push_back(std::move(rule));
        }
        return rules;
    }

private:
    RuleAst parse_rule() {
        RuleAst rule;
        Token kw = ts_.expect_keyword("RULE");
        rule.span = kw.pos;
        rule.name = ts_.expect_identifier("rule name").text;
        ts_.expect_punct(':', "after rule name");
        ts_.expect_keyword("IF");
        rule.antecedent = parse_or();
        ts_.expect_keyword("THEN");
        rule.consequents.push_back(parse_consequent());
        while (ts_.peek().kind == TokKind::punct && ts_.peek().text == ",") {
            ts_.take();
            rule.consequents.push_back(parse_consequent());
        }
        std::set<std::string> vars;
        for (const auto& c : rule.consequents) {
            if (!vars.insert(c.variable).second) {
                throw ParseError(rule.span,
                                 "duplicate consequent variable '" + c.variable + "'");
            }
        }
        if (is_keyword(ts_.peek(), "WITH")) {
            ts_.take();
            if (ts_.peek().kind != TokKind::number) {
                throw ParseError(ts_.peek().pos,
                                 "expected weight after WITH, got " + TokenStream::describe(ts_.peek()));
            }
            Token w = ts_.take();
            if (!(w.number > 0.0 && w.number <= 1.0)) {
                throw ParseError(w.pos, "rule weight must be in (0, 1]");
            }
            rule.weight = w.number;
        }
        ts_.expect_punct(';', "at end of rule");
        return rule;
    }

    Atom parse_consequent() {
        std::string var = ts_.expect_identifier("consequent variable").text;
        ts_.expect_keyword("IS");
        std::string term = ts_.expect_identifier("consequent term").text;
        return Atom{std::move(var), std::move(term)};
    }

    ExprPtr parse_or() {
        std::vector<ExprPtr> children;
        children.push_back(parse_and());
        while (is_keyword(ts_.peek(), "OR")) {
            ts_.take();
            children.push_back(parse_and());
        }
        if (children.size() == 1) {
            return children.front();
        }
        return make_or(std::move(children));
    }

    ExprPtr parse_and() {
        std::vector<ExprPtr> children;
        children.push_back(parse_unary());
        while (is_keyword(ts_.peek(), "AND")) {
            ts_.take();
            children.push_back(parse_unary());
        }
        if (children.size() == 1) {
            return children.front();
        }
        return make_and(std::move(children));
    }

    ExprPtr parse_unary() {
        if (is_keyword(ts_.peek(), "NOT")) {
            ts_.take();
            return make_not(parse_unary());
        }
        if (ts_.peek().kind == TokKind::punct && ts_.peek().text == "(") {
            ts_.take();
            ExprPtr inner = parse_or();
            ts_.expect_punct(')', "to close group");
            return inner;
        }
        std::string var = ts_.expect_identifier("condition variable").text;
        ts_.expect_keyword("IS");
        std::string term = ts_.expect_identifier("condition term").text;
        return make_atom(std::move(var), std::move(term));
    }

    TokenStream ts_;
};

// ---- printer ---------------------------------------------------------------

enum class Prec { or_level = 0, and_level = 1, unary = 2 };

Prec node_prec(const ExprNode& e) {
    if (std::holds_alternative<OrNode>(e.node)) return Prec::or_level;
    if (std::holds_alternative<AndNode>(e.node)) return Prec::and_level;
    return Prec::unary;
}

void print_expr_rec(const ExprNode& e, std::ostringstream& out);

// A child is wrapped when it binds looser than the parent, or when it is the
// same n-ary operator (explicit nesting must not flatten on reparse).
void print_child(const ExprNode& child, Prec parent, bool same_op_needs_parens,
                 std::ostringstream& out) {
    const bool parens = node_prec(child) < parent ||
                        (same_op_needs_parens && node_prec(child) == parent &&
                         parent != Prec::unary);
    if (parens) out << '(';
    print_expr_rec(child, out);
    if (parens) out << ')';
}

void print_expr_rec(const ExprNode& e, std::ostringstream& out) {
    if (const auto* atom = std::get_if<Atom>(&e.node)) {
        out << atom->variable << " IS " << atom->term;
    } else if (const auto* n = std::get_if<NotNode>(&e.node)) {
        out << "NOT ";
        print_child(*n->child, Prec::unary, false, out);
    } else if (const auto* a = std::get_if<AndNode>(&e.node)) {
        for (size_t i = 0; i < a->children.size(); ++i) {
            if (i > 0) out << " AND ";
            print_child(*a->children[i], Prec::and_level, true, out);
        }
    } else if (const auto* o = std::get_if<OrNode>(&e.node)) {
        for (size_t i = 0; i < o->children.size(); ++i) {
            if (i > 0) out << " OR ";
            print_child(*o->children[i], Prec::or_level, true, out);
        }
    }
}

std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, p);
}

}  // namespace

std::string print_expr(const ExprNode& expr) {
    std::ostringstream out;
    print_expr_rec(expr, out);
    return out.str();
}

std::vector<RuleAst> parse_rules(std::string_view source) {
    return RuleParser(source).parse_all();
}

std::string print_rules(const std::vector<RuleAst>& rules) {
    std::ostringstream out;
    for (const auto& rule : rules) {
        out << "RULE " << rule.name << ": IF " << print_expr(*rule.antecedent) << " THEN ";
        for (size_t i = 0; i < rule.consequents.size(); ++i) {
            if (i > 0) out << ", ";
            out << rule.consequents[i].variable << " IS " << rule.consequents[i].term;
        }
        if (rule.weight != 1.0) {
            out << " WITH " << format_double(rule.weight);
        }
        out << ";\n";
    }
    return out.str();
}

bool expr_equal(const ExprNode& a, const ExprNode& b) {
    if (a.node.index() != b.node.index()) return false;
    if (const auto* aa = std::get_if<Atom>(&a.node)) {
        const auto& ba = std::get<Atom>(b.node);
        return aa->variable == ba.variable && aa->term == ba.term;
    }
    if (const auto* an = std::get_if<NotNode>(&a.node)) {
        return expr_equal(*an->child, *std::get<NotNode>(b.node).child);
    }
    const auto get_children = [](const ExprNode& e) -> const std::vector<ExprPtr>& {
        if (const auto* n = std::get_if<AndNode>(&e.node)) return n->children;
        return std::get<OrNode>(e.node).children;
    };
    const auto& ac = get_children(a);
    const auto& bc = get_children(b);
    if (ac.size() != bc.size()) return false;
    for (size_t i = 0; i < ac.size(); ++i) {
        if (!expr_equal(*ac[i], *bc[i])) return false;
    }
    return true;
}

bool rule_equal(const RuleAst& a, const RuleAst& b) {
    if (a.name != b.name || a.weight != b.weight) return false;
    if (a.consequents.size() != b.consequents.size()) return false;
    for (size_t i = 0; i < a.consequents.size(); ++i) {
        if (a.consequents[i].variable != b.consequents[i].variable ||
            a.consequents[i].term != b.consequents[i].term) {
            return false;
        }
    }
    return expr_equal(*a.antecedent, *b.antecedent);
}

// ---------------------------------------------------------------------------
// EnPI expressions
// ---------------------------------------------------------------------------

namespace {

struct AggregateSig {
    int data_points;      // exact number of leading data-point args (-1: one or more trailing)
    int numeric_args;     // numeric args following the data points
    bool leading_string;  // custom("name", ...)
};

const std::map<std::string, AggregateSig>& aggregate_signatures() {
    static const std::map<std::string, AggregateSig> sigs = {
        {"mean", {1, 0, false}},          {"min", {1, 0, false}},
        {"max", {1, 0, false}},           {"last", {1, 0, false}},
        {"sum_delta", {1, 0, false}},     {"integral", {1, 0, false}},
        {"duration_below", {1, 1, false}},{"duration_above", {1, 1, false}},
        {"window_length", {0, 0, false}}, {"custom", {-1, 0, true}},
    };
    return sigs;
}

class EnPIParser {
public:
    explicit EnPIParser(std::string_view src) : ts_(src) {}

    EnPIExprPtr parse() {
        EnPIExprPtr expr = parse_sum();
        if (ts_.peek().kind != TokKind::end) {
            throw ParseError(ts_.peek().pos,
                             "unexpected " + TokenStream::describe(ts_.peek()) +
                                 " after expression");
        }
        return expr;
    }

private:
    EnPIExprPtr parse_sum() {
        EnPIExprPtr lhs = parse_product();
        while (ts_.peek().kind == TokKind::punct &&
               (ts_.peek().text == "+" || ts_.peek().text == "-")) {
            BinOp op = ts_.take().text == "+" ? BinOp::add : BinOp::sub;
            EnPIExprPtr rhs = parse_product();
            lhs = std::make_shared<EnPIExpr>(EnPIExpr{Binary{op, lhs, rhs}});
        }
        return lhs;
    }

    EnPIExprPtr parse_product() {
        EnPIExprPtr lhs = parse_factor();
        while (ts_.peek().kind == TokKind::punct &&
               (ts_.peek().text == "*" || ts_.peek().text == "/")) {
            BinOp op = ts_.take().text == "*" ? BinOp::mul : BinOp::div;
            EnPIExprPtr rhs = parse_factor();
            lhs = std::make_shared<EnPIExpr>(EnPIExpr{Binary{op, lhs, rhs}});
        }
        return lhs;
    }

    EnPIExprPtr parse_factor() {
        const Token& t = ts_.peek();
        if (t.kind == TokKind::number) {
            return std::make_shared<EnPIExpr>(EnPIExpr{Constant{ts_.take().number}});
        }
        if (t.kind == TokKind::punct && t.text == "(") {
            ts_.take();
            EnPIExprPtr inner = parse_sum();
            ts_.expect_punct(')', "to close group");
            return inner;
        }
        if (t.kind == TokKind::ident) {
            return parse_call();
        }
        throw ParseError(t.pos, "expected expression, got " + TokenStream::describe(t));
    }

    EnPIExprPtr parse_call() {
        Token name = ts_.take();
        auto it = aggregate_signatures().find(name.text);
        if (it == aggregate_signatures().end()) {
            throw ParseError(name.pos, "unknown aggregate '" + name.text + "'");
        }
        ts_.expect_punct('(', "after aggregate name");
        Call call;
        call.function = name.text;
        if (!(ts_.peek().kind == TokKind::punct && ts_.peek().text == ")")) {
            call.args.push_back(parse_arg());
            while (ts_.peek().kind == TokKind::punct && ts_.peek().text == ",") {
                ts_.take();
                call.args.push_back(parse_arg());
            }
        }
        ts_.expect_punct(')', "to close argument list");
        check_signature(call, it->second, name.pos);
        return std::make_shared<EnPIExpr>(EnPIExpr{std::move(call)});
    }

    CallArg parse_arg() {
        const Token& t = ts_.peek();
        if (t.kind == TokKind::ident) {
            return DataPointRef{ts_.take().text};
        }
        if (t.kind == TokKind::number) {
            return ts_.take().number;
        }
        if (t.kind == TokKind::string) {
            return StringLit{ts_.take().text};
        }
        throw ParseError(t.pos, "expected expression, got " + TokenStream::describe(t));
    }

    static void check_signature(const Call& call, const AggregateSig& sig, SourcePos pos) {
        size_t i = 0;
        if (sig.leading_string) {
            if (call.args.empty() || !std::holds_alternative<StringLit>(call.args[0])) {
                throw ParseError(pos, call.function + " expects a quoted analyzer name first");
            }
            i = 1;
        }
        size_t dp_count = 0;
        for (; i < call.args.size() && std::holds_alternative<DataPointRef>(call.args[i]); ++i) {
            ++dp_count;
        }
        size_t num_count = 0;
        for (; i < call.args.size() && std::holds_alternative<double>(call.args[i]); ++i) {
            ++num_count;
        }
        if (i != call.args.size()) {
            throw ParseError(pos, "unexpected argument in call to " + call.function);
        }
        if (sig.data_points >= 0 && dp_count != static_cast<size_t>(sig.data_points)) {
            throw ParseError(pos, call.function + " expects " +
                                      std::to_string(sig.data_points) + " data point(s), got " +
                                      std::to_string(dp_count));
        }
        if (num_count != static_cast<size_t>(sig.numeric_args)) {
            throw ParseError(pos, call.function + " expects " +
                                      std::to_string(sig.numeric_args) +
                                      " numeric argument(s), got " + std::to_string(num_count));
        }
    }

    TokenStream ts_;
};

}  // namespace

EnPIExprPtr parse_enpi(std::string_view source) {
    return EnPIParser(source).parse();
}

std::string print_call(const Call& call) {
    std::ostringstream out;
    out << call.function << '(';
    for (size_t i = 0; i < call.args.size(); ++i) {
        if (i > 0) out << ", ";
        if (const auto* dp = std::get_if<DataPointRef>(&call.args[i])) {
            out << dp->id;
        } else if (const auto* num = std::get_if<double>(&call.args[i])) {
            out << format_double(*num);
        } else {
            out << '"' << std::get<StringLit>(call.args[i]).value << '"';
        }
    }
    out << ')';
    return out.str();
}

namespace {

int binop_prec(BinOp op) {
    return (op == BinOp::mul || op == BinOp::div) ? 1 : 0;
}

void print_enpi_rec(const EnPIExpr& e, int parent_prec, bool rhs, std::ostringstream& out) {
    if (const auto* c = std::get_if<Constant>(&e.node)) {
        out << format_double(c->value);
        return;
    }
    if (const auto* call = std::get_if<Call>(&e.node)) {
        out << print_call(*call);
        return;
    }
    const auto& bin = std::get<Binary>(e.node);
    const int prec = binop_prec(bin.op);
    const bool parens = prec < parent_prec || (rhs && prec == parent_prec);
    if (parens) out << '(';
    print_enpi_rec(*bin.lhs, prec, false, out);
    switch (bin.op) {
        case BinOp::add: out << " + "; break;
        case BinOp::sub: out << " - "; break;
        case BinOp::mul: out << " * "; break;
        case BinOp::div: out << " / "; break;
    }
    print_enpi_rec(*bin.rhs, prec, true, out);
    if (parens) out << ')';
}

}  // namespace

std::string print_enpi(const EnPIExpr& expr) {
    std::ostringstream out;
    print_enpi_rec(expr, 0, false, out);
    return out.str();
}

void visit_calls(const EnPIExpr& expr, const std::function<void(const Call&)>& fn) {
    if (const auto* call = std::get_if<Call>(&expr.node)) {
        fn(*call);
        return;
    }
    if (const auto* bin = std::get_if<Binary>(&expr.node)) {
        visit_calls(*bin->lhs, fn);
        visit_calls(*bin->rhs, fn);
    }
}

}  // namespace ess::ruledsl
