#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include "ess/ruledsl.hpp"

namespace ess::fuzzy {

// ---------------------------------------------------------------------------
// Membership functions and linguistic variables
// ---------------------------------------------------------------------------

struct Triangular {
    double a, b, c;  // a <= b <= c, a < c
};
struct Trapezoidal {
    double a, b, c, d;  // a <= b <= c <= d, a < d
};
struct Gaussian {
    double mean, sigma;  // sigma > 0
};

struct MembershipFunction {
    std::variant<Triangular, Trapezoidal, Gaussian> shape;
};

/// Degree of membership of x, always in [0,1]. Total over the reals;
/// degenerate vertical edges (coinciding parameters) take the peak-side value.
double eval_membership(const MembershipFunction& mf, double x);

struct Term {
    std::string label;
    MembershipFunction mf;
};

struct LinguisticVariable {
    std::string name;
    double lo = 0.0;
    double hi = 1.0;       // universe [lo, hi], lo < hi
    std::string unit;
    std::vector<Term> terms;  // declaration order is the tie-break order
};

/// One degree per declared term, in declaration order. Values outside the
/// universe are clamped to [lo, hi] before evaluation.
std::vector<std::pair<std::string, double>> fuzzify(const LinguisticVariable& var, double x);

/// Samples a membership function at n uniform points over [lo, hi], endpoints
/// included.
std::vector<double> sample_membership(const MembershipFunction& mf, double lo, double hi, int n);

// ---------------------------------------------------------------------------
// Rule base compilation (forward-chaining strata)
// ---------------------------------------------------------------------------

enum class Norms { minmax, product };

struct EngineConfig {
    Norms norms = Norms::minmax;
    int defuzz_samples = 1001;  // odd keeps symmetric cases exact
};

/// Degrees per (variable, term) available to a rule's antecedent.
using DegreeMap = std::map<std::pair<std::string, std::string>, double>;

/// Evaluates the antecedent under the configured norms (AND = min or product,
/// OR = max or probabilistic sum, NOT = 1-x) and scales by the rule weight.
/// Throws std::invalid_argument if an atom is missing from degrees.
double firing_strength(const ruledsl::RuleAst& rule, const DegreeMap& degrees, Norms norms);

struct CycleError : std::runtime_error {
    CycleError(std::string path_text, std::vector<std::string> path);
    std::vector<std::string> cycle;  // e.g. {"a", "b", "a"}
};

struct CompiledRuleBase {
    std::vector<ruledsl::RuleAst> rules;                       // declaration order
    std::vector<std::vector<size_t>> strata;                   // rule indices per stratum
    std::map<std::string, std::vector<size_t>> consumers;      // concluded var -> rules reading it
    std::set<std::string> concluded_variables;
    std::map<std::string, int> variable_level;                 // concluded var -> 1-based level
    std::vector<std::string> required_inputs;                  // antecedent vars never concluded
};

/// Builds the variable dependency DAG and topological strata. Rules keep
/// declaration order within a stratum. Throws CycleError on cyclic variable
/// dependencies. Referenced variables/terms are assumed validated.
CompiledRuleBase compile(std::vector<ruledsl::RuleAst> rules,
                         const std::map<std::string, LinguisticVariable>& variables);

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

struct FuzzyOutcome {
    std::string variable;
    std::vector<double> envelope;                           // aggregated set, defuzz_samples long
    std::optional<double> crisp;                            // nullopt = no activation
    std::string dominant_term;                              // empty when no activation
    std::vector<std::pair<std::string, double>> clip_levels;  // per term, declaration order
};

struct RuleFiring {
    size_t rule_index = 0;
    double strength = 0.0;
    bool applicable = true;  // false when an atom references an unavailable variable
    std::vector<std::tuple<std::string, std::string, double>> atom_degrees;
};

struct InputRecord {
    std::string variable;
    double value = 0.0;
    bool clamped = false;
    std::vector<std::pair<std::string, double>> degrees;
};

struct InferenceResult {
    std::map<std::string, FuzzyOutcome> outcomes;  // one per concluded variable
    std::vector<RuleFiring> firings;               // declaration order
    std::vector<InputRecord> inputs;               // external inputs, as consumed
};

/// Mamdani pipeline per stratum: fuzzify, fire, clip (min implication),
/// aggregate (max), defuzzify (centroid). Chained variables relay their
/// defuzzified value to later strata. Variables in `known_missing` (e.g.
/// no-data EnPIs) make the rules that reference them inapplicable instead of
/// failing the run; variables with zero total activation behave the same way
/// downstream and yield a no-activation outcome.
/// Throws std::invalid_argument if a required input is neither provided nor
/// declared missing, or if the rule base is empty.
InferenceResult infer(const CompiledRuleBase& rule_base,
                      const std::map<std::string, LinguisticVariable>& variables,
                      const std::map<std::string, double>& inputs,
                      const std::set<std::string>& known_missing = {},
                      const EngineConfig& config = {});

/// Centroid sum(x_i * mu_i) / sum(mu_i) over the sampled set; nullopt when
/// every sample is zero (no activation).
std::optional<double> defuzzify_centroid(std::span<const double> membership, double lo, double hi);

}  // namespace ess::fuzzy
