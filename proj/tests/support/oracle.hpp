#pragma once

// Brute-force reference implementations used as test oracles. Everything here
// recomputes results from first principles with naive dense sampling and no
// shared logic with the library code it checks.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ess/fuzzy.hpp"
#include "ess/ruledsl.hpp"

namespace oracle {

/// Naive membership evaluation, written independently of the library.
double membership(const ess::fuzzy::MembershipFunction& mf, double x);

/// Centroid of min(clip, mf(x)) over [lo, hi] with a dense plain-sum loop.
/// n defaults to 10^7 for high-resolution cross-checks.
std::optional<double> centroid_clipped(const ess::fuzzy::MembershipFunction& mf, double clip,
                                       double lo, double hi, long n = 10'000'000);

struct InferenceReference {
    std::map<std::string, std::optional<double>> crisp;  // nullopt = no activation
};

/// Full Mamdani pipeline recomputed naively: variable levels by fixpoint,
/// antecedents by direct recursion, clipping/aggregation/centroid by a dense
/// grid of `samples` points per output variable. Rules referencing
/// unavailable variables (missing inputs or no-activation intermediates) do
/// not fire.
InferenceReference infer_reference(const std::vector<ess::ruledsl::RuleAst>& rules,
                                   const std::map<std::string, ess::fuzzy::LinguisticVariable>& variables,
                                   const std::map<std::string, double>& inputs,
                                   ess::fuzzy::Norms norms, long samples = 100'000);

/// Closed-form least-squares slope via the normal equations.
std::optional<double> least_squares_slope(const std::vector<double>& t_seconds,
                                          const std::vector<double>& values);

}  // namespace oracle
