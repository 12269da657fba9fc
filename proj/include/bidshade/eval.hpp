#pragma once
// Offline evaluation: paired counterfactual replay against the simulator, the
// two realized-surplus metrics (position& scene / position-only slot factors),
// PCOC, the control-theorem property audit, and the single-threaded inference
// benchmark.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bidshade/baselines.hpp"
#include "bidshade/campaign.hpp"
#include "bidshade/dataset.hpp"
#include "bidshade/landscape.hpp"
#include "bidshade/mebs.hpp"
#include "bidshade/slot_factors.hpp"

namespace bidshade {

// --------------------------------------------------------------- surplus (S)

// Realized surplus of one replayed auction:
//   S = (mu0*V - C(b)) * I(b >= wp) * upstream * u(post_slot) / u(orig_slot)
// with u from the empirical SlotFactorTable; _ps uses (position, scene)
// cells, _p position-only cells.
struct SurplusSample {
    std::int64_t auction_id = 0;
    int scene_id = 0;
    bool won = false;
    int slot_won = 0;       // post-shading position; 0 = lost
    int original_slot = 0;  // pre-shading position
    double s_ps = 0.0;
    double s_p = 0.0;
};

std::vector<SurplusSample> surplus_samples(const std::vector<AuctionRecord>& records,
                                           const SlotFactorTable& factors);

struct Replay {
    Dataset ds;
    std::vector<SurplusSample> samples;
};

// Replays `policy` against freshly simulated auctions. Identical (landscape,
// mu0, n, seed) face identical features, values, competitors, and click
// randomness for every policy, so surplus differences are policy-caused.
Replay replay_policy(const LandscapeSpec& spec, const BiddingPolicy& policy, double mu0,
                     std::int64_t n_auctions, std::uint64_t seed, const SlotFactorTable& factors,
                     int threads = 1);

enum class SurplusVariant { kPositionScene, kPosition };

// Total realized surplus normalized per 1000 auctions.
double surplus_metric(const std::vector<SurplusSample>& samples, SurplusVariant variant);

// ---------------------------------------------------------------------- PCOC

// Mean predicted CTR over empirical CTR on won records.
double pcoc(const std::vector<AuctionRecord>& records,
            const std::function<double(const AuctionRecord&)>& pctr_source);

std::function<double(const AuctionRecord&)> upstream_pctr_source();
// Calibrated pCTR at the logged shaded bid.
std::function<double(const AuctionRecord&)> calibrated_pctr_source(const CalibrationModel& calib);

// Mean per-auction ground-truth expected surplus at the logged shaded bids,
// impression-cost form (mu0*V*P_win - E[cost*I_win]) * upstream: the Eq. 7
// side of the coherence check on flat-u landscapes.
double mean_true_expected_surplus(const LandscapeSpec& spec,
                                  const std::vector<AuctionRecord>& records);

// -------------------------------------------------------------- eval reports

struct PolicyEval {
    std::string policy;
    double surplus_ps = 0.0;  // per 1000 auctions
    double surplus_p = 0.0;
    double win_rate = 0.0;
    std::optional<double> pcoc;
    std::map<int, double> surplus_ps_by_slot;   // per-1000 contributions
    std::map<int, double> surplus_ps_by_scene;
};

PolicyEval evaluate_policy(const std::string& name, const Replay& replay,
                           const std::function<double(const AuctionRecord&)>& pctr_source = nullptr);

struct EvalReport {
    std::string landscape_fingerprint;
    std::uint64_t seed = 0;
    std::int64_t n_auctions = 0;
    double mu0 = 1.0;
    int threads = 1;
    std::vector<PolicyEval> rows;

    std::string to_json() const;
    std::string to_text() const;       // aligned method x metric table
    std::string breakdown_csv() const; // per-slot / per-scene rows
};

// Bundle/landscape compatibility gate for counterfactual evaluation.
void require_same_landscape(const MebsBundle& bundle, const LandscapeSpec& spec);

// ------------------------------------------------------------- Theorem audit

struct BudgetCheck {
    const std::vector<AuctionRecord>* replay = nullptr;
    Money budget = 0;
    const WinRateModel* wr = nullptr;
    const CalibrationModel* calib = nullptr;  // may stay null
    const CostBidRatio* rcb = nullptr;
    Mu0Bracket bracket;
    double tol = 0.01;
};

struct TheoremReport {
    int samples = 0;
    int resolution = 0;
    std::vector<double> mu0_grid;
    std::int64_t scans = 0;
    std::int64_t unimodal_violations = 0;
    std::int64_t plateaus = 0;  // degenerate argmax ties, reported not failed
    std::int64_t bid_monotone_violations = 0;
    std::vector<double> cumulative_cost;  // expected spend curve over mu0_grid
    bool cost_strictly_increasing = false;
    // solve_mu0 branch (run only when a BudgetCheck is supplied)
    bool budget_checked = false;
    double budget_units = 0.0;
    double mu0_star = 0.0;
    double cost_at_star = 0.0;
    double residual_frac = 0.0;
    bool budget_within_tol = false;

    bool pass() const {
        return unimodal_violations == 0 && bid_monotone_violations == 0 &&
               cost_strictly_increasing && (!budget_checked || budget_within_tol);
    }
    std::string to_json() const;
};

// Property audit of the closed-form surplus landscape: per-sample scan
// unimodality, optimal-bid monotonicity in mu0, strict growth of cumulative
// expected cost, and (optionally) the budget residual of solve_mu0.
TheoremReport verify_theorem(const LandscapeSpec& spec, const std::vector<double>& mu0_grid,
                             int n_samples, std::uint64_t seed, int resolution, double rcb,
                             const BudgetCheck* budget = nullptr);

// ------------------------------------------------------------ inference bench

// One benchmarked policy: `model_step` runs the per-record forward pass(es),
// `search_step` (may be empty) the candidate scan. Steps may cache into
// captured scratch; index is the record position.
struct BenchPolicy {
    std::string name;
    std::function<void(std::size_t)> model_step;
    std::function<void(std::size_t)> search_step;
};

struct BenchRow {
    std::string policy;
    double model_seconds = 0.0;   // mean per batch
    double search_seconds = 0.0;  // mean per batch; 0 for single-pass methods
    double total_seconds() const { return model_seconds + search_seconds; }
};

struct BenchReport {
    std::int64_t batch = 0;
    int repetitions = 0;
    int threads = 1;  // pinned single-threaded
    std::vector<BenchRow> rows;

    std::string to_json() const;
    std::string to_text() const;
};

// Mean wall-clock seconds per batch over `repetitions` timed runs after one
// untimed warm-up.
BenchReport bench_inference(std::int64_t batch, int repetitions,
                            const std::vector<BenchPolicy>& policies);

// Standard benchmark entries over a fixed record set; null models are
// skipped. `tsbs_calib` supplies the per-candidate pCTR net (null -> raw
// upstream), `grid_size` the TSBS candidate count.
std::vector<BenchPolicy> make_bench_policies(const std::vector<AuctionRecord>& records,
                                             const ShadingModel* mebs, const SrrModel* srr,
                                             const WinPriceDistModel* tsbs,
                                             const CalibrationModel* tsbs_calib,
                                             const NpmTable* npm, double rcb, int grid_size,
                                             double r_min);

}  // namespace bidshade
