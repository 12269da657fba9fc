#include <cmath>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "bidshade/mebs.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace bidshade;
using testutil::make_record;
using testutil::temp_dir;
using testutil::tiny_landscape;

namespace {

MebsHyper fast_hyper() {
    MebsHyper hyper;
    hyper.embed_dim = 4;
    hyper.hidden = {16, 8};
    for (TrainHyper* th : {&hyper.win_rate, &hyper.calibration, &hyper.shading}) {
        th->epochs = 3;
        th->batch = 512;
        th->adam.lr = 0.01;
        th->patience = 5;
    }
    hyper.win_rate.seed = 1;
    hyper.calibration.seed = 2;
    hyper.shading.seed = 3;
    return hyper;
}

Dataset training_dataset(std::uint64_t seed = 101, std::int64_t n = 6000) {
    return generate_dataset(tiny_landscape(), explore_policy(0.1, seed), 1.0, n, seed, 4);
}

// Moves the head bias of a model and reports the raw expected surplus either
// side.  The self-normalized loss is constant (-1) whenever the surplus clears
// the epsilon guard, so finite differences must probe the un-normalized
// surplus; the bias enters the logit additively, so dES/d(bias) == dES/dz.
double shade_surplus_at_bias(ShadingModel& shade, const WinRateModel& wr,
                             const CalibrationModel* calib, const FeatureVec& x, double upstream,
                             double mu0v, double rcb, double eps, double bias) {
    for (auto& t : shade.net.tensors()) {
        if (t.name == "out.b") (*t.data)[0] = bias;
    }
    Tape tape;
    return eval_shading_sample(shade, wr, calib, x, upstream, mu0v, rcb, eps, tape).parts.es;
}

}  // namespace

TEST_CASE("slot calibrated pctr rescales by the factor ratio") {
    CHECK(slot_calibrated_pctr(0.05, 0.04, 0.10) == doctest::Approx(0.02));
    CHECK(slot_calibrated_pctr(0.05, 0.10, 0.10) == doctest::Approx(0.05));  // same slot
    CHECK(slot_calibrated_pctr(0.2, 0.06, 0.10) == doctest::Approx(0.12));
}

TEST_CASE("cost-bid ratio statistics with support fallbacks") {
    std::vector<AuctionRecord> records;
    const FeatureVec x{0, 0, 0, 0, 0, 0};
    // (scene 0, slot 1): ratios 0.5 and 0.7.
    records.push_back(make_record(0, x, 0, 10, 10, 10, 5, true, 1, 5.0, 1, false));
    records.push_back(make_record(1, x, 0, 10, 10, 10, 7, true, 1, 7.0, 1, false));
    // (scene 0, slot 2): single record, ratio 0.2.
    records.push_back(make_record(2, x, 0, 10, 10, 10, 2, true, 2, 2.0, 2, false));
    // A lost record must not contribute.
    records.push_back(make_record(3, x, 0, 10, 10, 4, 5, false, 0, 0.0, 0, false));

    SUBCASE("support satisfied uses per-slot means") {
        const CostBidRatio rcb = estimate_cost_bid_ratio(records, 1);
        CHECK(rcb.at(0, 1) == doctest::Approx(0.6));
        CHECK(rcb.at(0, 2) == doctest::Approx(0.2));
        // Unseen slot falls back to the scene marginal, unseen scene to global.
        CHECK(rcb.at(0, 3) == doctest::Approx((0.5 + 0.7 + 0.2) / 3.0));
        CHECK(rcb.at(5, 1) == doctest::Approx((0.5 + 0.7 + 0.2) / 3.0));
        CHECK(rcb.scene_marginal(0) == doctest::Approx((0.5 + 0.7 + 0.2) / 3.0));
    }
    SUBCASE("support threshold forces the global fallback") {
        const CostBidRatio rcb = estimate_cost_bid_ratio(records, 50);
        CHECK(rcb.at(0, 1) == doctest::Approx((0.5 + 0.7 + 0.2) / 3.0));
    }
    SUBCASE("round trip through json") {
        const CostBidRatio rcb = estimate_cost_bid_ratio(records, 1);
        const CostBidRatio back = CostBidRatio::from_json(rcb.to_json());
        CHECK(back.min_support == rcb.min_support);
        CHECK(back.at(0, 1) == rcb.at(0, 1));
        CHECK(back.at(0, 3) == rcb.at(0, 3));
        CHECK(back.at(9, 9) == rcb.at(9, 9));
    }
    SUBCASE("no won records is a data error") {
        std::vector<AuctionRecord> lost(1, records[3]);
        CHECK_THROWS_AS(estimate_cost_bid_ratio(lost, 1), DataError);
    }
}

TEST_CASE("cost-bid ratios from generated logs stay inside (0, 1]") {
    const Dataset ds = training_dataset(55, 4000);
    const CostBidRatio rcb = estimate_cost_bid_ratio(ds.records, 50);
    CHECK(rcb.global.mean > 0.0);
    CHECK(rcb.global.mean <= 1.0);
    for (int scene = 0; scene < 2; ++scene)
        for (int slot = 1; slot <= 3; ++slot) {
            CHECK(rcb.at(scene, slot) > 0.0);
            CHECK(rcb.at(scene, slot) <= 1.0);
        }
}

TEST_CASE("expected surplus multiplies its parts") {
    const FeatureSchema schema = tiny_landscape().schema;
    MebsHyper hyper = fast_hyper();
    const Dataset ds = training_dataset(7, 3000);
    const WinRateModel wr = train_win_rate(ds.records, schema, hyper);
    const CalibrationModel calib = train_calibration(ds.records, schema, wr, hyper);

    const FeatureVec x = ds.records.front().features;
    Tape t1, t2;
    const SurplusParts parts = expected_surplus(wr, &calib, 0.8, x, 0.12, 3.0, 2.0, t1, t2);
    CHECK(parts.margin == doctest::Approx(3.0 - 0.8 * 2.0));
    CHECK(parts.es == doctest::Approx(parts.p * parts.pctr * parts.margin));
    CHECK(parts.p > 0.0);
    CHECK(parts.p < 1.0);
    CHECK(parts.pctr > 0.0);
    CHECK(parts.pctr < 1.0);

    // Without a calibration model the upstream estimate is used untouched.
    const SurplusParts raw = expected_surplus(wr, nullptr, 0.8, x, 0.12, 3.0, 2.0, t1, t2);
    CHECK(raw.pctr == doctest::Approx(0.12));
}

TEST_CASE("win-rate training freezes its embedding and orders probabilities") {
    const FeatureSchema schema = tiny_landscape().schema;
    MebsHyper hyper = fast_hyper();
    hyper.win_rate.epochs = 4;
    const Dataset ds = training_dataset(11, 8000);
    StageReport report;
    const WinRateModel wr = train_win_rate(ds.records, schema, hyper, &report);

    CHECK(wr.net.embedding()->frozen);
    CHECK(report.holdout_history.size() >= 2);
    CHECK(report.best_loss <= report.holdout_history[0]);

    // After training, a far higher bid must win far more often.
    Tape tape;
    int ordered = 0, total = 0;
    for (std::size_t i = 0; i < 50; ++i) {
        const FeatureVec& x = ds.records[i * 7].features;
        const double lo = wr.prob(x, 0.4, tape);
        const double hi = wr.prob(x, 8.0, tape);
        CHECK(lo > 0.0);
        CHECK(hi < 1.0);
        ordered += (hi > lo) ? 1 : 0;
        ++total;
    }
    CHECK(ordered > total * 0.9);

    std::vector<AuctionRecord> empty;
    CHECK_THROWS_AS(train_win_rate(empty, schema, hyper), TrainError);
}

TEST_CASE("calibration shares the frozen table and requires it frozen") {
    const FeatureSchema schema = tiny_landscape().schema;
    MebsHyper hyper = fast_hyper();
    const Dataset ds = training_dataset(13, 5000);
    const WinRateModel wr = train_win_rate(ds.records, schema, hyper);

    const CalibrationModel shared = train_calibration(ds.records, schema, wr, hyper);
    CHECK(shared.net.embedding().get() == wr.net.embedding().get());
    CHECK_FALSE(shared.net.owns_embedding());

    const CalibrationModel own = train_calibration(ds.records, schema, wr, hyper, true);
    CHECK(own.net.embedding().get() != wr.net.embedding().get());

    Tape tape;
    const auto& r = ds.records.front();
    const double p = shared.pctr(r.features, 1.5, 0.2, tape);
    CHECK(p > 0.0);
    CHECK(p < 1.0);
    // The learned factor enters additively on the logit scale.
    const double f = shared.factor(r.features, 1.5, 0.2, tape);
    CHECK(p == doctest::Approx(sigmoid(f + logit(0.2))));

    WinRateModel unfrozen{BaseModel(wr.net.config(), nullptr, 9)};
    CHECK_THROWS_AS(train_calibration(ds.records, schema, unfrozen, hyper), UsageError);
}

TEST_CASE("shading loss is the normalized negative surplus with live gradients") {
    const FeatureSchema schema = tiny_landscape().schema;
    MebsHyper hyper = fast_hyper();
    const Dataset ds = training_dataset(17, 5000);
    const WinRateModel wr = train_win_rate(ds.records, schema, hyper);
    const CalibrationModel calib = train_calibration(ds.records, schema, wr, hyper);
    const CostBidRatio rcb = estimate_cost_bid_ratio(ds.records, 50);
    ShadingModel shade =
        train_shading(ds.records, schema, wr, &calib, rcb, hyper);

    const auto& rec = ds.records.front();
    const double mu0v = money_units(rec.unshaded_bid);
    const double rcb_s = rcb.scene_marginal(rec.scene_id);
    Tape tape;
    const ShadingSampleEval ev = eval_shading_sample(shade, wr, &calib, rec.features,
                                                     rec.upstream_pctr, mu0v, rcb_s,
                                                     hyper.surplus_eps, tape);
    CHECK(ev.r >= shade.r_min);
    CHECK(ev.r <= 1.0);
    CHECK(ev.bid_units == doctest::Approx(ev.r * mu0v));
    REQUIRE(ev.parts.es > hyper.surplus_eps);
    // Normalization by the detached surplus pins the loss value at -1...
    CHECK(ev.loss == doctest::Approx(-1.0).epsilon(1e-12));
    // ...while the gradient still sees the un-normalized objective.
    CHECK(ev.dloss_dz != 0.0);
}

TEST_CASE("shading gradient matches finite differences through both frozen nets") {
    const FeatureSchema schema = tiny_landscape().schema;
    MebsHyper hyper = fast_hyper();
    const Dataset ds = training_dataset(19, 5000);
    const WinRateModel wr = train_win_rate(ds.records, schema, hyper);
    const CalibrationModel calib = train_calibration(ds.records, schema, wr, hyper);
    const CostBidRatio rcb = estimate_cost_bid_ratio(ds.records, 50);
    ShadingModel shade = train_shading(ds.records, schema, wr, &calib, rcb, hyper);

    int checked = 0;
    for (std::size_t i = 0; i < ds.records.size() && checked < 5; i += 97) {
        const auto& rec = ds.records[i];
        if (!winnable(rec)) continue;
        const double mu0v = money_units(rec.unshaded_bid);
        const double rcb_s = rcb.scene_marginal(rec.scene_id);

        Tape tape;
        const ShadingSampleEval ev = eval_shading_sample(shade, wr, &calib, rec.features,
                                                         rec.upstream_pctr, mu0v, rcb_s,
                                                         hyper.surplus_eps, tape);
        REQUIRE(ev.parts.es > hyper.surplus_eps);
        double bias0 = 0.0;
        for (auto& t : shade.net.tensors())
            if (t.name == "out.b") bias0 = (*t.data)[0];

        const double h = 1e-6;
        const double up = shade_surplus_at_bias(shade, wr, &calib, rec.features, rec.upstream_pctr,
                                                mu0v, rcb_s, hyper.surplus_eps, bias0 + h);
        const double dn = shade_surplus_at_bias(shade, wr, &calib, rec.features, rec.upstream_pctr,
                                                mu0v, rcb_s, hyper.surplus_eps, bias0 - h);
        shade_surplus_at_bias(shade, wr, &calib, rec.features, rec.upstream_pctr, mu0v, rcb_s,
                              hyper.surplus_eps, bias0);  // restore
        const double fd = (up - dn) / (2.0 * h);
        // loss = -ES / detach(ES)  =>  dES/dz = -detach(ES) * dloss/dz.
        const double analytic = -ev.parts.es * ev.dloss_dz;
        INFO("sample ", i, ": analytic ", analytic, " fd ", fd);
        CHECK(rel_err(analytic, fd) < 1e-4);
        ++checked;
    }
    CHECK(checked == 5);
}

TEST_CASE("degenerate surplus falls back to the epsilon guard") {
    const FeatureSchema schema = tiny_landscape().schema;
    MebsHyper hyper = fast_hyper();
    const Dataset ds = training_dataset(23, 4000);
    const WinRateModel wr = train_win_rate(ds.records, schema, hyper);
    const CostBidRatio rcb = estimate_cost_bid_ratio(ds.records, 50);
    ShadingModel shade = train_shading(ds.records, schema, wr, nullptr, rcb, hyper);

    const auto& rec = ds.records.front();
    const double mu0v = money_units(rec.unshaded_bid);
    Tape tape;
    // Vanishing upstream pCTR drives the expected surplus under epsilon.
    const ShadingSampleEval ev = eval_shading_sample(shade, wr, nullptr, rec.features, 1e-12,
                                                     mu0v, rcb.scene_marginal(rec.scene_id),
                                                     hyper.surplus_eps, tape);
    CHECK(ev.parts.es < hyper.surplus_eps);
    CHECK(ev.loss == doctest::Approx(-ev.parts.es / hyper.surplus_eps));
    CHECK(ev.loss > -1.0);
}

TEST_CASE("full pipeline trains, shades sanely, and round trips its bundle") {
    const LandscapeSpec spec = tiny_landscape();
    MebsHyper hyper = fast_hyper();
    const Dataset ds = training_dataset(29, 6000);
    MebsTrainLog log;
    const MebsBundle bundle = train_mebs(ds, spec.schema, hyper, spec.fingerprint(), {}, &log);

    CHECK(bundle.calib.has_value());
    CHECK(bundle.shared_embedding);
    CHECK(bundle.landscape_fingerprint == spec.fingerprint());
    CHECK(bundle.dataset_seed == ds.meta.seed);
    CHECK(log.win_rate.holdout_history.size() >= 2);
    CHECK(log.shading.holdout_history.size() >= 2);

    // Shading outputs respect the ratio band and the money bracket.
    Tape tape;
    for (std::size_t i = 0; i < 200; ++i) {
        const auto& r = ds.records[i * 13];
        const auto [ratio, bid] = shade(bundle.shade, r.features, r.unshaded_bid);
        CHECK(ratio >= bundle.shade.r_min - 1e-12);
        CHECK(ratio <= 1.0 + 1e-12);
        CHECK(bid >= 1);
        CHECK(bid <= r.unshaded_bid);
    }

    const std::string dir = temp_dir("bundle");
    save_bundle(bundle, dir);
    const MebsBundle loaded = load_bundle(dir);
    CHECK(loaded.calib.has_value());
    CHECK(loaded.shared_embedding == bundle.shared_embedding);
    CHECK(loaded.landscape_fingerprint == bundle.landscape_fingerprint);
    CHECK(loaded.dataset_seed == bundle.dataset_seed);
    CHECK(loaded.shade.r_min == doctest::Approx(bundle.shade.r_min));
    CHECK(loaded.rcb.global.mean == doctest::Approx(bundle.rcb.global.mean));
    // The loaded calibration shares the loaded win-rate table.
    CHECK(loaded.calib->net.embedding().get() == loaded.wr.net.embedding().get());
    CHECK(loaded.wr.net.embedding()->frozen);

    // Reloading is exact: a second load produces bit-identical behavior,
    // and the float32 storage keeps ratios within quantization error.
    const MebsBundle loaded2 = load_bundle(dir);
    for (std::size_t i = 0; i < 100; ++i) {
        const auto& r = ds.records[i * 31];
        const auto [r1, b1] = shade(loaded.shade, r.features, r.unshaded_bid);
        const auto [r2, b2] = shade(loaded2.shade, r.features, r.unshaded_bid);
        CHECK(r1 == r2);
        CHECK(b1 == b2);
        const auto [r0, b0] = shade(bundle.shade, r.features, r.unshaded_bid);
        CHECK(r1 == doctest::Approx(r0).epsilon(1e-4));
    }

    CHECK_THROWS_AS(load_bundle(dir + "/nope"), DataError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("training is deterministic given the hyper seeds") {
    const LandscapeSpec spec = tiny_landscape();
    const MebsHyper hyper = fast_hyper();
    const Dataset ds = training_dataset(31, 5000);
    const MebsBundle a = train_mebs(ds, spec.schema, hyper, spec.fingerprint());
    const MebsBundle b = train_mebs(ds, spec.schema, hyper, spec.fingerprint());
    CHECK(a.wr.net.parameter_fingerprint() == b.wr.net.parameter_fingerprint());
    CHECK(a.calib->net.parameter_fingerprint() == b.calib->net.parameter_fingerprint());
    CHECK(a.shade.net.parameter_fingerprint() == b.shade.net.parameter_fingerprint());
}

TEST_CASE("ablations change exactly what they claim") {
    const LandscapeSpec spec = tiny_landscape();
    const MebsHyper hyper = fast_hyper();
    const Dataset ds = training_dataset(37, 5000);

    MebsAblation no_calib;
    no_calib.no_calibration = true;
    const MebsBundle nc = train_mebs(ds, spec.schema, hyper, spec.fingerprint(), no_calib);
    CHECK_FALSE(nc.calib.has_value());
    CHECK(nc.calib_ptr() == nullptr);

    MebsAblation own;
    own.no_share_embedding = true;
    const MebsBundle oe = train_mebs(ds, spec.schema, hyper, spec.fingerprint(), own);
    CHECK_FALSE(oe.shared_embedding);
    CHECK(oe.shade.net.embedding().get() != oe.wr.net.embedding().get());

    MebsAblation mse;
    mse.mse_shading_loss = true;
    const MebsBundle ms = train_mebs(ds, spec.schema, hyper, spec.fingerprint(), mse);
    Tape tape;
    const auto& r = ds.records.front();
    const double ratio = ms.shade.ratio(r.features, money_units(r.unshaded_bid), tape);
    CHECK(ratio >= ms.shade.r_min);
    CHECK(ratio <= 1.0);

    // Bundles saved from ablated runs reload with the same shape.
    const std::string dir = temp_dir("bundle_nc");
    save_bundle(nc, dir);
    const MebsBundle back = load_bundle(dir);
    CHECK_FALSE(back.calib.has_value());
    std::filesystem::remove_all(dir);
}
