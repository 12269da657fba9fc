#pragma once
// Budget control via the dual variable: expected spend of a shading policy on
// a replay set as a function of the control signal mu0, and bisection for the
// mu0* that exhausts a budget.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bidshade/dataset.hpp"
#include "bidshade/mebs.hpp"

namespace bidshade {

// Shaded bid (currency units) for one record given the scaled unshaded bid.
using ShadePolicyFn = std::function<double(const AuctionRecord&, double mu0v_units)>;

ShadePolicyFn ratio_policy_fn(double ratio);
ShadePolicyFn shading_model_policy_fn(const ShadingModel& model);

// Sum over the replay of P(x,b)·pCTR_k(x,b)·r_cb·b with b = policy(x, mu0·V).
// calib == nullptr uses the raw upstream pCTR. Deterministic for any thread
// count (blocked reduction).
double expected_cost(const std::vector<AuctionRecord>& replay, double mu0,
                     const ShadePolicyFn& policy, const WinRateModel& wr,
                     const CalibrationModel* calib, const CostBidRatio& rcb, int threads = 1);

struct Mu0Bracket {
    double lo = 0.1;
    double hi = 10.0;
};

struct SolverReport {
    double mu0_star = 1.0;
    double cost_units = 0.0;      // expected spend at mu0*
    double residual_frac = 0.0;   // |cost - B| / B
    int iterations = 0;
    Mu0Bracket bracket;           // after any widening
    std::vector<std::pair<double, double>> history;  // (mu0, cost) evaluations

    std::string to_json() const;
};

// Bisection for expected_cost(mu0*) = budget within tol·budget (or bracket
// width < 1e-6). The bracket is widened geometrically while the budget falls
// outside its cost range; a budget outside the widened range raises a
// configuration error naming the achievable interval. Every evaluation is
// checked for cost monotonicity in mu0; a violation aborts with a diagnostic.
SolverReport solve_mu0(const std::vector<AuctionRecord>& replay, Money budget,
                       const ShadePolicyFn& policy, const WinRateModel& wr,
                       const CalibrationModel* calib, const CostBidRatio& rcb,
                       Mu0Bracket bracket = {}, double tol = 0.01, int threads = 1);

}  // namespace bidshade
