#pragma once
// The three-model shading pipeline: win-rate estimation P(x,b), bid-aware
// pCTR calibration, and an end-to-end surplus-maximized shading ratio, with
// the win-rate model's embedding table frozen and shared downstream. Training
// order is fixed: win rate -> calibration -> shading.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bidshade/dataset.hpp"
#include "bidshade/model.hpp"
#include "bidshade/train_driver.hpp"

namespace bidshade {

// Numeric-input layouts (fixed conventions):
//   win rate:    [bid]                      P(x,b) = sigmoid(logit)
//   calibration: [bid, upstream_pctr]       pCTR_k = sigmoid(f + logit(upstream))
//   shading:     [unshaded_bid]             r = r_min + (1-r_min)*sigmoid(logit)

struct WinRateModel {
    BaseModel net;

    double prob(const FeatureVec& x, double bid_units, Tape& tape) const;
};

struct CalibrationModel {
    BaseModel net;

    // Learned logit offset f(x,b).
    double factor(const FeatureVec& x, double bid_units, double upstream, Tape& tape) const;
    double pctr(const FeatureVec& x, double bid_units, double upstream, Tape& tape) const;
};

struct ShadingModel {
    BaseModel net;
    double r_min = 0.1;

    double ratio(const FeatureVec& x, double unshaded_units, Tape& tape) const;
};

// Reference (non-learned) slot recalibration: pCTR(x) * u_k / u_i.
double slot_calibrated_pctr(double upstream, double u_target, double u_ref);

// Statistical mean of cost/bid on won records, per (scene, slot) with
// scene-marginal and global fallbacks under the support threshold.
struct CostBidRatio {
    int min_support = 50;

    struct Cell {
        double mean = 0.0;
        std::int64_t n = 0;
    };
    std::map<std::pair<int, int>, Cell> per_slot;  // (scene, slot)
    std::map<int, Cell> per_scene;
    Cell global;

    double at(int scene, int slot) const;   // per-slot with fallbacks
    double scene_marginal(int scene) const;  // slot-marginal (training-time lookup)

    std::string to_json() const;
    static CostBidRatio from_json(const std::string& text);
};

CostBidRatio estimate_cost_bid_ratio(const std::vector<AuctionRecord>& records,
                                     int min_support = 50);

// ------------------------------------------------------------- hyperparameters

struct MebsHyper {
    int embed_dim = 8;
    std::vector<int> hidden = {64, 32, 16};
    double r_min = 0.1;
    int rcb_min_support = 50;
    double surplus_eps = 1e-8;  // Eq. 8 degenerate-surplus guard
    TrainHyper win_rate;
    TrainHyper calibration;
    TrainHyper shading;
};

struct MebsAblation {
    bool no_share_embedding = false;  // calibration/shading own trainable tables
    bool mse_shading_loss = false;    // squared error to the wp ratio label
    bool no_calibration = false;      // raw upstream pCTR in the surplus
};

// --------------------------------------------------------------- expected Eq.7

struct SurplusParts {
    double p = 0.0;       // P(x,b)
    double pctr = 0.0;    // pCTR_k(x,b), or upstream when calib == nullptr
    double margin = 0.0;  // mu0*V - r_cb*b
    double es = 0.0;      // product
};

// calib == nullptr evaluates the no-calibration variant.
SurplusParts expected_surplus(const WinRateModel& wr, const CalibrationModel* calib,
                              double rcb, const FeatureVec& x, double upstream,
                              double mu0v_units, double bid_units, Tape& wr_tape,
                              Tape& calib_tape);

// One winnable sample under the current shading model: ratio, bid, Eq. 7
// surplus, Eq. 8 loss term, and dloss/d(shading logit) with the full chain
// through the frozen models' bid inputs.
struct ShadingSampleEval {
    double r = 0.0;
    double bid_units = 0.0;
    SurplusParts parts;
    double loss = 0.0;
    double dloss_dz = 0.0;
};

// `shade_tape` receives the shading model's forward pass (its backward is the
// caller's responsibility; dloss_dz is the head gradient to feed it).
ShadingSampleEval eval_shading_sample(const ShadingModel& shade, const WinRateModel& wr,
                                      const CalibrationModel* calib, const FeatureVec& x,
                                      double upstream, double mu0v_units, double rcb, double eps,
                                      Tape& shade_tape);

// ------------------------------------------------------------------- training

WinRateModel train_win_rate(const std::vector<AuctionRecord>& records,
                            const FeatureSchema& schema, const MebsHyper& hyper,
                            StageReport* report = nullptr);

// Trains on the winnable set; shares wr's (frozen) embedding unless
// own_embedding.
CalibrationModel train_calibration(const std::vector<AuctionRecord>& records,
                                   const FeatureSchema& schema, const WinRateModel& wr,
                                   const MebsHyper& hyper, bool own_embedding = false,
                                   StageReport* report = nullptr);

// Trains on the winnable set; calib == nullptr runs the no-calibration
// ablation, mse_loss the squared-error ablation.
ShadingModel train_shading(const std::vector<AuctionRecord>& records, const FeatureSchema& schema,
                           const WinRateModel& wr, const CalibrationModel* calib,
                           const CostBidRatio& rcb, const MebsHyper& hyper,
                           bool own_embedding = false, bool mse_loss = false,
                           StageReport* report = nullptr);

// ----------------------------------------------------------------- the bundle

struct MebsTrainLog {
    StageReport win_rate, calibration, shading;
};

struct MebsBundle {
    WinRateModel wr;
    std::optional<CalibrationModel> calib;  // absent under --no-calibration
    ShadingModel shade;
    CostBidRatio rcb;
    bool shared_embedding = true;
    std::uint64_t landscape_fingerprint = 0;
    std::uint64_t dataset_seed = 0;

    const CalibrationModel* calib_ptr() const { return calib ? &*calib : nullptr; }
};

MebsBundle train_mebs(const Dataset& ds, const FeatureSchema& schema, const MebsHyper& hyper,
                      std::uint64_t landscape_fingerprint, const MebsAblation& ablation = {},
                      MebsTrainLog* log = nullptr);

// Inference: one forward pass, no search.
std::pair<double, Money> shade(const ShadingModel& model, const FeatureVec& x,
                               Money unshaded_bid);

// Bundle directory: win_rate.json, calibration.json, shading.json,
// manifest.json (fingerprints + r_cb + flags).
void save_bundle(const MebsBundle& bundle, const std::string& dir);
MebsBundle load_bundle(const std::string& dir);

}  // namespace bidshade
