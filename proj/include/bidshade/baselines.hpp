#pragma once
// Reference bid-shading baselines and the brute-force oracle:
//   SRR  — supervised ratio regression against clip(wp / unshaded_bid, r_min, 1).
//   TSBS — two-stage search: a G-head win-price distribution model plus a
//          per-candidate surplus scan that reuses the calibration network.
//   NPM  — non-parametric per-bin best fixed ratio from counterfactual replay
//          of logged win prices.
//   Oracle — exhaustive grid argmax of the closed-form expected surplus.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bidshade/dataset.hpp"
#include "bidshade/landscape.hpp"
#include "bidshade/mebs.hpp"
#include "bidshade/model.hpp"
#include "bidshade/slot_factors.hpp"
#include "bidshade/train_driver.hpp"

namespace bidshade {

// ---------------------------------------------------------------------------
// SRR: supervised ratio regression.
// ---------------------------------------------------------------------------

// Owns its embedding; numeric input is the unshaded bid (currency units).
struct SrrModel {
    BaseModel net;
    double r_min = 0.1;

    // Predicted shading ratio in [r_min, 1].
    double ratio(const FeatureVec& x, double unshaded_units, Tape& tape) const;
};

SrrModel train_srr(const std::vector<AuctionRecord>& records, const FeatureSchema& schema,
                   const MebsHyper& hyper, StageReport* report = nullptr);

Money shade_srr(const SrrModel& model, const FeatureVec& x, Money unshaded_bid);

void save_srr(const SrrModel& model, const std::string& path);
SrrModel load_srr(const std::string& path);

// ---------------------------------------------------------------------------
// TSBS: win-price distribution model + surplus search.
// ---------------------------------------------------------------------------

// One head per candidate bid on a fixed, strictly increasing grid (currency
// units). A single forward pass yields the win probability at every grid
// point; arbitrary bids interpolate linearly between neighbours.
struct WinPriceDistModel {
    BaseModel net;
    std::vector<double> grid;

    // Win probability at each grid candidate (one forward pass).
    std::vector<double> grid_probs(const FeatureVec& x, Tape& tape) const;
    // Piecewise-linear interpolation of grid probabilities at `bid_units`.
    double win_prob_at(double bid_units, const std::vector<double>& probs) const;
};

WinPriceDistModel train_tsbs(const std::vector<AuctionRecord>& records,
                             const FeatureSchema& schema, const MebsHyper& hyper, int grid_size,
                             StageReport* report = nullptr);

void save_tsbs(const WinPriceDistModel& model, const std::string& path);
WinPriceDistModel load_tsbs(const std::string& path);

struct TsbsResult {
    Money bid = 0;
    int argmax_index = 0;
    double best_surplus = 0.0;
    // Per-candidate model evaluations performed by the search loop.
    std::int64_t forward_passes = 0;
};

// Evenly spaced candidate bids spanning [r_min * unshaded, unshaded].
std::vector<Money> tsbs_candidates(Money unshaded_bid, double r_min, int count);

// Generic candidate scan: surplus(b) = (mu0v - rcb * b) * win_prob(b) *
// pctr(b), argmax with ties resolved to the lowest bid. `win_prob` and `pctr`
// take the bid in currency units. Each pctr evaluation counts as one forward
// pass in the returned result.
TsbsResult tsbs_search(const std::vector<Money>& candidates,
                       const std::function<double(double)>& win_prob,
                       const std::function<double(double)>& pctr, double mu0v_units, double rcb);

// Full TSBS inference for one request. `calib` may be null (raw upstream
// pCTR is used instead). Forward passes = candidate count.
TsbsResult infer_tsbs(const WinPriceDistModel& dist, const CalibrationModel* calib,
                      const FeatureVec& x, Money unshaded_bid, double upstream_pctr,
                      double mu0v_units, double rcb, int grid_size, double r_min);

// ---------------------------------------------------------------------------
// NPM: non-parametric per-bin ratio table.
// ---------------------------------------------------------------------------

struct NpmTable {
    struct Bin {
        double ratio = 1.0;
        std::int64_t n = 0;
    };

    std::vector<std::string> binning_fields;
    std::vector<int> field_slots;  // schema indices of binning_fields
    int min_support = 50;
    double default_ratio = 1.0;
    std::map<std::vector<int>, Bin> bins;

    double ratio_for(const FeatureVec& x) const;

    std::string to_json() const;
    static NpmTable from_json(const std::string& text, const FeatureSchema& schema);
};

NpmTable train_npm(const std::vector<AuctionRecord>& records, const FeatureSchema& schema,
                   const std::vector<std::string>& binning_fields, int min_support,
                   const SlotFactorTable& slot_factors, double r_min = 0.1);

Money shade_npm(const NpmTable& table, const FeatureVec& x, Money unshaded_bid);

void save_npm(const NpmTable& table, const std::string& path);
NpmTable load_npm(const std::string& path, const FeatureSchema& schema);

// ---------------------------------------------------------------------------
// Oracle: exhaustive scan of the closed-form expected surplus.
// ---------------------------------------------------------------------------

struct OracleScan {
    std::vector<Money> bids;
    std::vector<double> surplus;
    std::size_t argmax = 0;
    bool plateau = false;  // best surplus attained at more than one bid
    Money best_bid = 0;
};

// Scans `resolution` bids over (0, mu0v] against the exact landscape win and
// slot probabilities: surplus(b) = (mu0v - rcb*b) * q(x) * sum_j P(slot j | b)
// * u_j. Ties resolve to the lowest bid.
OracleScan oracle_optimal_bid(const LandscapeSpec& spec, const FeatureVec& x, double mu0v_units,
                              int resolution, double rcb);

}  // namespace bidshade
