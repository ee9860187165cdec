#include "oracle.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace oracle {

using ess::fuzzy::Gaussian;
using ess::fuzzy::LinguisticVariable;
using ess::fuzzy::MembershipFunction;
using ess::fuzzy::Norms;
using ess::fuzzy::Trapezoidal;
using ess::fuzzy::Triangular;
using ess::ruledsl::AndNode;
using ess::ruledsl::Atom;
using ess::ruledsl::ExprNode;
using ess::ruledsl::NotNode;
using ess::ruledsl::OrNode;
using ess::ruledsl::RuleAst;

double membership(const MembershipFunction& mf, double x) {
    if (const auto* tri = std::get_if<Triangular>(&mf.shape)) {
        const double a = tri->a, b = tri->b, c = tri->c;
        if (x < a || x > c) return 0.0;
        if (x == b) return 1.0;
        if (x < b) return (x - a) / (b - a);
        return (c - x) / (c - b);
    }
    if (const auto* trap = std::get_if<Trapezoidal>(&mf.shape)) {
        const double a = trap->a, b = trap->b, c = trap->c, d = trap->d;
        if (x < a || x > d) return 0.0;
        if (x >= b && x <= c) return 1.0;
        if (x < b) return (x - a) / (b - a);
        return (d - x) / (d - c);
    }
    const auto& g = std::get<Gaussian>(mf.shape);
    const double z = (x - g.mean) / g.sigma;
    return std::exp(-z * z / 2.0);
}

std::optional<double> centroid_clipped(const MembershipFunction& mf, double clip, double lo,
                                       double hi, long n) {
    double weighted = 0.0;
    double total = 0.0;
    for (long i = 0; i < n; ++i) {
        const double x = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
        const double mu = std::min(clip, membership(mf, x));
        weighted += x * mu;
        total += mu;
    }
    if (total == 0.0) return std::nullopt;
    return weighted / total;
}

namespace {

void atoms_of(const ExprNode& e, std::vector<Atom>& out) {
    if (const auto* atom = std::get_if<Atom>(&e.node)) {
        out.push_back(*atom);
    } else if (const auto* n = std::get_if<NotNode>(&e.node)) {
        atoms_of(*n->child, out);
    } else if (const auto* a = std::get_if<AndNode>(&e.node)) {
        for (const auto& c : a->children) atoms_of(*c, out);
    } else {
        for (const auto& c : std::get<OrNode>(e.node).children) atoms_of(*c, out);
    }
}

double eval_antecedent(const ExprNode& e,
                       const std::map<std::string, std::map<std::string, double>>& degrees,
                       Norms norms) {
    if (const auto* atom = std::get_if<Atom>(&e.node)) {
        return degrees.at(atom->variable).at(atom->term);
    }
    if (const auto* n = std::get_if<NotNode>(&e.node)) {
        return 1.0 - eval_antecedent(*n->child, degrees, norms);
    }
    if (const auto* a = std::get_if<AndNode>(&e.node)) {
        double acc = eval_antecedent(*a->children[0], degrees, norms);
        for (size_t i = 1; i < a->children.size(); ++i) {
            const double v = eval_antecedent(*a->children[i], degrees, norms);
            acc = norms == Norms::minmax ? std::min(acc, v) : acc * v;
        }
        return acc;
    }
    const auto& o = std::get<OrNode>(e.node);
    double acc = eval_antecedent(*o.children[0], degrees, norms);
    for (size_t i = 1; i < o.children.size(); ++i) {
        const double v = eval_antecedent(*o.children[i], degrees, norms);
        acc = norms == Norms::minmax ? std::max(acc, v) : acc + v - acc * v;
    }
    return acc;
}

}  // namespace

InferenceReference infer_reference(const std::vector<RuleAst>& rules,
                                   const std::map<std::string, LinguisticVariable>& variables,
                                   const std::map<std::string, double>& inputs, Norms norms,
                                   long samples) {
    // variable levels by fixpoint: inputs 0, concluded vars one above the
    // deepest antecedent var of any rule concluding them
    std::set<std::string> concluded;
    for (const auto& rule : rules) {
        for (const auto& c : rule.consequents) concluded.insert(c.variable);
    }
    std::map<std::string, long> level;
    for (const auto& [name, _] : variables) {
        if (!concluded.count(name)) level[name] = 0;
    }
    bool changed = true;
    while (changed) {
        changed = false;
        for (const auto& rule : rules) {
            std::vector<Atom> atoms;
            atoms_of(*rule.antecedent, atoms);
            long deepest = 0;
            bool known = true;
            for (const auto& a : atoms) {
                auto it = level.find(a.variable);
                if (it == level.end()) {
                    known = false;
                    break;
                }
                deepest = std::max(deepest, it->second);
            }
            if (!known) continue;
            for (const auto& c : rule.consequents) {
                auto it = level.find(c.variable);
                const long candidate = deepest + 1;
                if (it == level.end() || it->second < candidate) {
                    level[c.variable] = candidate;
                    changed = true;
                }
            }
        }
    }

    long max_level = 0;
    for (const auto& [_, l] : level) max_level = std::max(max_level, l);

    InferenceReference result;
    std::map<std::string, std::map<std::string, double>> degrees;
    std::set<std::string> unavailable;

    const auto fuzzify_into = [&](const std::string& var, double value) {
        const auto& lv = variables.at(var);
        const double x = std::clamp(value, lv.lo, lv.hi);
        for (const auto& term : lv.terms) {
            degrees[var][term.label] = membership(term.mf, x);
        }
    };
    for (const auto& [name, l] : level) {
        if (l != 0) continue;
        auto it = inputs.find(name);
        if (it != inputs.end()) {
            fuzzify_into(name, it->second);
        } else {
            unavailable.insert(name);
        }
    }

    // strengths per rule; each output variable resolves at its level
    std::vector<double> strengths(rules.size(), 0.0);
    for (long current = 1; current <= max_level; ++current) {
        for (size_t i = 0; i < rules.size(); ++i) {
            std::vector<Atom> atoms;
            atoms_of(*rules[i].antecedent, atoms);
            long deepest = 0;
            bool blocked = false;
            for (const auto& a : atoms) {
                deepest = std::max(deepest, level.at(a.variable));
                if (unavailable.count(a.variable)) blocked = true;
            }
            if (deepest != current - 1) continue;  // fires at another level
            strengths[i] =
                blocked ? 0.0 : eval_antecedent(*rules[i].antecedent, degrees, norms) *
                                    rules[i].weight;
        }
        for (const auto& [var, l] : level) {
            if (l != current) continue;
            const auto& lv = variables.at(var);
            double weighted = 0.0;
            double total = 0.0;
            for (long s = 0; s < samples; ++s) {
                const double x = lv.lo + (lv.hi - lv.lo) * static_cast<double>(s) /
                                             static_cast<double>(samples - 1);
                double mu = 0.0;
                for (size_t i = 0; i < rules.size(); ++i) {
                    if (strengths[i] <= 0.0) continue;
                    for (const auto& c : rules[i].consequents) {
                        if (c.variable != var) continue;
                        const auto& terms = lv.terms;
                        for (const auto& term : terms) {
                            if (term.label == c.term) {
                                mu = std::max(mu,
                                              std::min(strengths[i], membership(term.mf, x)));
                            }
                        }
                    }
                }
                weighted += x * mu;
                total += mu;
            }
            if (total == 0.0) {
                result.crisp[var] = std::nullopt;
                unavailable.insert(var);
            } else {
                const double crisp = weighted / total;
                result.crisp[var] = crisp;
                fuzzify_into(var, crisp);
            }
        }
    }
    return result;
}

std::optional<double> least_squares_slope(const std::vector<double>& t_seconds,
                                          const std::vector<double>& values) {
    if (t_seconds.size() != values.size() || t_seconds.size() < 2) {
        return std::nullopt;
    }
    const double n = static_cast<double>(t_seconds.size());
    double sum_t = 0.0, sum_v = 0.0, sum_tt = 0.0, sum_tv = 0.0;
    for (size_t i = 0; i < t_seconds.size(); ++i) {
        sum_t += t_seconds[i];
        sum_v += values[i];
        sum_tt += t_seconds[i] * t_seconds[i];
        sum_tv += t_seconds[i] * values[i];
    }
    const double denom = n * sum_tt - sum_t * sum_t;
    if (denom == 0.0) return std::nullopt;
    return (n * sum_tv - sum_t * sum_v) / denom;
}

}  // namespace oracle
