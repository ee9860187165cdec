#include "ess/fuzzy.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ess::fuzzy {

double eval_membership(const MembershipFunction& mf, double x) {
    if (std::isnan(x)) {
        return 0.0;
    }
    if (const auto* tri = std::get_if<Triangular>(&mf.shape)) {
        if (x < tri->a || x > tri->c) return 0.0;
        if (x == tri->b) return 1.0;
        if (x < tri->b) return (x - tri->a) / (tri->b - tri->a);
        return (tri->c - x) / (tri->c - tri->b);
    }
    if (const auto* trap = std::get_if<Trapezoidal>(&mf.shape)) {
        if (x < trap->a || x > trap->d) return 0.0;
        if (x >= trap->b && x <= trap->c) return 1.0;
        if (x < trap->b) return (x - trap->a) / (trap->b - trap->a);
        return (trap->d - x) / (trap->d - trap->c);
    }
    const auto& g = std::get<Gaussian>(mf.shape);
    const double t = (x - g.mean) / g.sigma;
    return std::exp(-0.5 * t * t);
}

std::vector<std::pair<std::string, double>> fuzzify(const LinguisticVariable& var, double x) {
    const double clamped = std::clamp(x, var.lo, var.hi);
    std::vector<std::pair<std::string, double>> degrees;
    degrees.reserve(var.terms.size());
    for (const auto& term : var.terms) {
        degrees.emplace_back(term.label, eval_membership(term.mf, clamped));
    }
    return degrees;
}

std::vector<double> sample_membership(const MembershipFunction& mf, double lo, double hi, int n) {
    std::vector<double> out(static_cast<size_t>(n));
    const double step = (hi - lo) / static_cast<double>(n - 1);
    for (int i = 0; i < n; ++i) {
        out[static_cast<size_t>(i)] = eval_membership(mf, lo + i * step);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Firing strength
// ---------------------------------------------------------------------------

namespace {

double eval_expr(const ruledsl::ExprNode& e, const DegreeMap& degrees, Norms norms) {
    if (const auto* atom = std::get_if<ruledsl::Atom>(&e.node)) {
        auto it = degrees.find({atom->variable, atom->term});
        if (it == degrees.end()) {
            throw std::invalid_argument("unresolved atom " + atom->variable + " IS " +
                                        atom->term);
        }
        return it->second;
    }
    if (const auto* n = std::get_if<ruledsl::NotNode>(&e.node)) {
        return 1.0 - eval_expr(*n->child, degrees, norms);
    }
    if (const auto* a = std::get_if<ruledsl::AndNode>(&e.node)) {
        double acc = eval_expr(*a->children[0], degrees, norms);
        for (size_t i = 1; i < a->children.size(); ++i) {
            const double v = eval_expr(*a->children[i], degrees, norms);
            acc = norms == Norms::minmax ? std::min(acc, v) : acc * v;
        }
        return acc;
    }
    const auto& o = std::get<ruledsl::OrNode>(e.node);
    double acc = eval_expr(*o.children[0], degrees, norms);
    for (size_t i = 1; i < o.children.size(); ++i) {
        const double v = eval_expr(*o.children[i], degrees, norms);
        acc = norms == Norms::minmax ? std::max(acc, v) : acc + v - acc * v;
    }
    return acc;
}

void collect_atoms(const ruledsl::ExprNode& e, std::vector<ruledsl::Atom>& out) {
    if (const auto* atom = std::get_if<ruledsl::Atom>(&e.node)) {
        out.push_back(*atom);
    } else if (const auto* n = std::get_if<ruledsl::NotNode>(&e.node)) {
        collect_atoms(*n->child, out);
    } else if (const auto* a = std::get_if<ruledsl::AndNode>(&e.node)) {
        for (const auto& c : a->children) collect_atoms(*c, out);
    } else {
        for (const auto& c : std::get<ruledsl::OrNode>(e.node).children) collect_atoms(*c, out);
    }
}

std::vector<std::string> antecedent_variables(const ruledsl::RuleAst& rule) {
    std::vector<ruledsl::Atom> atoms;
    collect_atoms(*rule.antecedent, atoms);
    std::vector<std::string> vars;
    for (const auto& a : atoms) {
        if (std::find(vars.begin(), vars.end(), a.variable) == vars.end()) {
            vars.push_back(a.variable);
        }
    }
    return vars;
}

}  // namespace

double firing_strength(const ruledsl::RuleAst& rule, const DegreeMap& degrees, Norms norms) {
    return eval_expr(*rule.antecedent, degrees, norms) * rule.weight;
}

// ---------------------------------------------------------------------------
// Compilation
// ---------------------------------------------------------------------------

CycleError::CycleError(std::string path_text, std::vector<std::string> path)
    : std::runtime_error("cyclic variable dependency: " + std::move(path_text)),
      cycle(std::move(path)) {}

namespace {

// DFS cycle search over variable dependencies (antecedent var -> consequent
// var per rule). Returns the cycle path, e.g. {a, b, a}, when one exists.
std::optional<std::vector<std::string>> find_cycle(
    const std::map<std::string, std::set<std::string>>& edges) {
    enum class Mark { unvisited, in_stack, done };
    std::map<std::string, Mark> marks;
    std::vector<std::string> stack;
    std::optional<std::vector<std::string>> cycle;

    std::function<bool(const std::string&)> visit = [&](const std::string& v) {
        marks[v] = Mark::in_stack;
        stack.push_back(v);
        auto it = edges.find(v);
        if (it != edges.end()) {
            for (const auto& next : it->second) {
                const Mark m = marks.count(next) ? marks[next] : Mark::unvisited;
                if (m == Mark::in_stack) {
                    auto begin = std::find(stack.begin(), stack.end(), next);
                    cycle = std::vector<std::string>(begin, stack.end());
                    cycle->push_back(next);
                    return true;
                }
                if (m == Mark::unvisited && visit(next)) {
                    return true;
                }
            }
        }
        stack.pop_back();
        marks[v] = Mark::done;
        return false;
    };

    for (const auto& [v, _] : edges) {
        if ((marks.count(v) ? marks[v] : Mark::unvisited) == Mark::unvisited) {
            if (visit(v)) return cycle;
        }
    }
    return std::nullopt;
}

}  // namespace

CompiledRuleBase compile(std::vector<ruledsl::RuleAst> rules,
                         const std::map<std::string, LinguisticVariable>& variables) {
    for (const auto& rule : rules) {
        std::vector<ruledsl::Atom> atoms;
        collect_atoms(*rule.antecedent, atoms);
        for (const auto& c : rule.consequents) atoms.push_back(c);
        for (const auto& atom : atoms) {
            auto it = variables.find(atom.variable);
            if (it == variables.end()) {
                throw std::invalid_argument("rule '" + rule.name +
                                            "' references undeclared variable '" +
                                            atom.variable + "'");
            }
            const auto& terms = it->second.terms;
            const bool found = std::any_of(terms.begin(), terms.end(), [&](const Term& t) {
                return t.label == atom.term;
            });
            if (!found) {
                throw std::invalid_argument("rule '" + rule.name + "' references unknown term '" +
                                            atom.term + "' of variable '" + atom.variable + "'");
            }
        }
    }

    CompiledRuleBase compiled;
    compiled.rules = std::move(rules);

    // variable -> variable edges: an antecedent variable feeds each consequent
    std::map<std::string, std::set<std::string>> var_edges;
    for (const auto& rule : compiled.rules) {
        for (const auto& var : antecedent_variables(rule)) {
            for (const auto& c : rule.consequents) {
                var_edges[var].insert(c.variable);
            }
        }
        for (const auto& c : rule.consequents) {
            compiled.concluded_variables.insert(c.variable);
        }
    }

    if (auto cycle = find_cycle(var_edges)) {
        std::ostringstream path;
        for (size_t i = 0; i < cycle->size(); ++i) {
            if (i > 0) path << " -> ";
            path << (*cycle)[i];
        }
        throw CycleError(path.str(), *cycle);
    }

    // Variable levels: inputs are level 0; a concluded variable sits one
    // above the deepest variable any of its rules reads.
    std::map<std::string, int> level;
    const std::function<int(const std::string&)> level_of = [&](const std::string& var) -> int {
        auto it = level.find(var);
        if (it != level.end()) return it->second;
        int result = 0;
        if (compiled.concluded_variables.count(var)) {
            for (const auto& rule : compiled.rules) {
                const bool concludes =
                    std::any_of(rule.consequents.begin(), rule.consequents.end(),
                                [&](const ruledsl::Atom& a) { return a.variable == var; });
                if (!concludes) continue;
                for (const auto& in : antecedent_variables(rule)) {
                    result = std::max(result, level_of(in) + 1);
                }
            }
        }
        level[var] = result;
        return result;
    };

    size_t max_stratum = 0;
    std::vector<size_t> rule_stratum(compiled.rules.size(), 0);
    for (size_t i = 0; i < compiled.rules.size(); ++i) {
        size_t stratum = 0;
        for (const auto& var : antecedent_variables(compiled.rules[i])) {
            stratum = std::max(stratum, static_cast<size_t>(level_of(var)));
        }
        rule_stratum[i] = stratum;
        max_stratum = std::max(max_stratum, stratum);
    }
    compiled.strata.resize(max_stratum + 1);
    for (size_t i = 0; i < compiled.rules.size(); ++i) {
        compiled.strata[rule_stratum[i]].push_back(i);
    }
    for (const auto& var : compiled.concluded_variables) {
        compiled.variable_level[var] = level_of(var);
    }

    for (size_t i = 0; i < compiled.rules.size(); ++i) {
        for (const auto& var : antecedent_variables(compiled.rules[i])) {
            if (compiled.concluded_variables.count(var)) {
                compiled.consumers[var].push_back(i);
            } else if (std::find(compiled.required_inputs.begin(),
                                 compiled.required_inputs.end(),
                                 var) == compiled.required_inputs.end()) {
                compiled.required_inputs.push_back(var);
            }
        }
    }
    return compiled;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

std::optional<double> defuzzify_centroid(std::span<const double> membership, double lo,
                                         double hi) {
    const size_t n = membership.size();
    if (n < 2) {
        throw std::invalid_argument("defuzzify_centroid needs at least 2 samples");
    }
    const double step = (hi - lo) / static_cast<double>(n - 1);
    double weighted = 0.0;
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double x = lo + static_cast<double>(i) * step;
        weighted += x * membership[i];
        total += membership[i];
    }
    if (total == 0.0) {
        return std::nullopt;
    }
    return std::clamp(weighted / total, lo, hi);
}

InferenceResult infer(const CompiledRuleBase& rule_base,
                      const std::map<std::string, LinguisticVariable>& variables,
                      const std::map<std::string, double>& inputs,
                      const std::set<std::string>& known_missing, const EngineConfig& config) {
    if (rule_base.rules.empty()) {
        throw std::invalid_argument("empty rule base");
    }
    for (const auto& var : rule_base.required_inputs) {
        if (!inputs.count(var) && !known_missing.count(var)) {
            throw std::invalid_argument("missing input variable '" + var + "'");
        }
    }

    InferenceResult result;
    result.firings.resize(rule_base.rules.size());

    DegreeMap degrees;
    std::set<std::string> unavailable = known_missing;

    // External inputs are fuzzified up front; chained variables join after
    // their stratum completes.
    for (const auto& var : rule_base.required_inputs) {
        auto it = inputs.find(var);
        if (it == inputs.end()) continue;
        const auto& lv = variables.at(var);
        InputRecord rec;
        rec.variable = var;
        rec.value = it->second;
        rec.clamped = it->second < lv.lo || it->second > lv.hi;
        rec.degrees = fuzzify(lv, it->second);
        for (const auto& [term, degree] : rec.degrees) {
            degrees[{var, term}] = degree;
        }
        result.inputs.push_back(std::move(rec));
    }

    const int n = config.defuzz_samples;
    std::map<std::string, FuzzyOutcome> accumulating;

    for (size_t s = 0; s < rule_base.strata.size(); ++s) {
        for (size_t rule_idx : rule_base.strata[s]) {
            const auto& rule = rule_base.rules[rule_idx];
            RuleFiring firing;
            firing.rule_index = rule_idx;

            std::vector<ruledsl::Atom> atoms;
            collect_atoms(*rule.antecedent, atoms);
            const bool applicable =
                std::none_of(atoms.begin(), atoms.end(), [&](const ruledsl::Atom& a) {
                    return unavailable.count(a.variable) > 0;
                });
            firing.applicable = applicable;
            if (applicable) {
                for (const auto& a : atoms) {
                    firing.atom_degrees.emplace_back(a.variable, a.term,
                                                     degrees.at({a.variable, a.term}));
                }
                firing.strength = firing_strength(rule, degrees, config.norms);
            }
            result.firings[rule_idx] = firing;

            for (const auto& consequent : rule.consequents) {
                const auto& lv = variables.at(consequent.variable);
                auto [it, fresh] = accumulating.try_emplace(consequent.variable);
                FuzzyOutcome& outcome = it->second;
                if (fresh) {
                    outcome.variable = consequent.variable;
                    outcome.envelope.assign(static_cast<size_t>(n), 0.0);
                    for (const auto& term : lv.terms) {
                        outcome.clip_levels.emplace_back(term.label, 0.0);
                    }
                }
                if (firing.strength <= 0.0) continue;
                for (auto& [label, clip] : outcome.clip_levels) {
                    if (label == consequent.term) {
                        clip = std::max(clip, firing.strength);
                    }
                }
                const auto& term_it =
                    std::find_if(lv.terms.begin(), lv.terms.end(),
                                 [&](const Term& t) { return t.label == consequent.term; });
                const double step = (lv.hi - lv.lo) / static_cast<double>(n - 1);
                for (int i = 0; i < n; ++i) {
                    const double mu =
                        std::min(firing.strength, eval_membership(term_it->mf, lv.lo + i * step));
                    auto& cell = outcome.envelope[static_cast<size_t>(i)];
                    cell = std::max(cell, mu);
                }
            }
        }

        // A variable closes once every rule that concludes it has fired, i.e.
        // at the end of stratum level-1. Defuzzify and relay the crisp value.
        for (auto it = accumulating.begin(); it != accumulating.end();) {
            const auto& var = it->first;
            if (rule_base.variable_level.at(var) != static_cast<int>(s) + 1) {
                ++it;
                continue;
            }
            FuzzyOutcome& outcome = it->second;
            const auto& lv = variables.at(var);
            outcome.crisp = defuzzify_centroid(outcome.envelope, lv.lo, lv.hi);
            if (outcome.crisp) {
                double best = -1.0;
                for (const auto& [label, clip] : outcome.clip_levels) {
                    if (clip > best) {
                        best = clip;
                        outcome.dominant_term = label;
                    }
                }
                for (const auto& [term, degree] : fuzzify(lv, *outcome.crisp)) {
                    degrees[{var, term}] = degree;
                }
            } else {
                unavailable.insert(var);
            }
            result.outcomes[var] = std::move(outcome);
            it = accumulating.erase(it);
        }
    }
    return result;
}

}  // namespace ess::fuzzy
