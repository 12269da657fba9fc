#include "bidshade/campaign.hpp"

#include <algorithm>
#include <cmath>

#include "bidshade/parallel.hpp"
#include "json.hpp"

namespace bidshade {

ShadePolicyFn ratio_policy_fn(double ratio) {
    return [ratio](const AuctionRecord&, double mu0v_units) { return ratio * mu0v_units; };
}

ShadePolicyFn shading_model_policy_fn(const ShadingModel& model) {
    return [&model](const AuctionRecord& rec, double mu0v_units) {
        thread_local Tape tape;
        return model.ratio(rec.features, mu0v_units, tape) * mu0v_units;
    };
}

double expected_cost(const std::vector<AuctionRecord>& replay, double mu0,
                     const ShadePolicyFn& policy, const WinRateModel& wr,
                     const CalibrationModel* calib, const CostBidRatio& rcb, int threads) {
    if (replay.empty()) return 0.0;
    return blocked_sum(static_cast<std::int64_t>(replay.size()), threads, [&](std::int64_t i) {
        thread_local Tape wr_tape, calib_tape;
        const AuctionRecord& rec = replay[static_cast<std::size_t>(i)];
        const double mu0v = mu0 * money_units(rec.value);
        const double b = policy(rec, mu0v);
        if (!(b > 0.0)) return 0.0;
        const double p = wr.prob(rec.features, b, wr_tape);
        const double pctr =
            calib ? calib->pctr(rec.features, b, rec.upstream_pctr, calib_tape) : rec.upstream_pctr;
        return p * pctr * rcb.scene_marginal(rec.scene_id) * b;
    });
}

std::string SolverReport::to_json() const {
    nlohmann::json j;
    j["mu0_star"] = mu0_star;
    j["cost_units"] = cost_units;
    j["residual_frac"] = residual_frac;
    j["iterations"] = iterations;
    j["bracket"] = {{"lo", bracket.lo}, {"hi", bracket.hi}};
    nlohmann::json h = nlohmann::json::array();
    for (const auto& [mu, cost] : history) h.push_back({{"mu0", mu}, {"cost", cost}});
    j["history"] = h;
    return j.dump(2);
}

SolverReport solve_mu0(const std::vector<AuctionRecord>& replay, Money budget,
                       const ShadePolicyFn& policy, const WinRateModel& wr,
                       const CalibrationModel* calib, const CostBidRatio& rcb, Mu0Bracket bracket,
                       double tol, int threads) {
    if (replay.empty()) throw ConfigError("solve_mu0: empty replay");
    if (budget <= 0) throw ConfigError("solve_mu0: budget must be positive");
    if (!(bracket.lo > 0.0) || !(bracket.lo < bracket.hi))
        throw ConfigError("solve_mu0: need 0 < bracket.lo < bracket.hi");

    SolverReport report;
    const double b_units = money_units(budget);

    auto cost_at = [&](double mu0) {
        const double c = expected_cost(replay, mu0, policy, wr, calib, rcb, threads);
        // The proof's monotone-cost argument: every evaluation must respect
        // the ordering of the ones already made. Learned models can break
        // this; report it instead of returning a meaningless root.
        for (const auto& [mu, cost] : report.history) {
            const double slack = 1e-9 * (1.0 + std::abs(cost));
            if ((mu < mu0 && cost > c + slack) || (mu > mu0 && cost + slack < c))
                throw DataError("solve_mu0: expected cost is not monotone in mu0 (C(" +
                                std::to_string(mu) + ")=" + std::to_string(cost) + " vs C(" +
                                std::to_string(mu0) + ")=" + std::to_string(c) + ")");
        }
        report.history.emplace_back(mu0, c);
        return c;
    };

    double cost_lo = cost_at(bracket.lo);
    double cost_hi = cost_at(bracket.hi);
    for (int widen = 0; widen < 10 && b_units < cost_lo; ++widen) {
        bracket.lo *= 0.5;
        cost_lo = cost_at(bracket.lo);
    }
    for (int widen = 0; widen < 10 && b_units > cost_hi; ++widen) {
        bracket.hi *= 2.0;
        cost_hi = cost_at(bracket.hi);
    }
    if (b_units < cost_lo || b_units > cost_hi)
        throw ConfigError("solve_mu0: budget " + std::to_string(b_units) +
                          " outside the achievable expected-cost interval [" +
                          std::to_string(cost_lo) + ", " + std::to_string(cost_hi) +
                          "] over mu0 in [" + std::to_string(bracket.lo) + ", " +
                          std::to_string(bracket.hi) + "]");

    report.bracket = bracket;
    double lo = bracket.lo, hi = bracket.hi;
    double mid = 0.5 * (lo + hi), cost_mid = cost_at(mid);
    while (std::abs(cost_mid - b_units) > tol * b_units && hi - lo > 1e-6) {
        if (cost_mid < b_units)
            lo = mid;
        else
            hi = mid;
        mid = 0.5 * (lo + hi);
        cost_mid = cost_at(mid);
        ++report.iterations;
    }

    report.mu0_star = mid;
    report.cost_units = cost_mid;
    report.residual_frac = std::abs(cost_mid - b_units) / b_units;
    return report;
}

}  // namespace bidshade
