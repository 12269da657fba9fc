#include <atomic>
#include <cmath>
#include <string>
#include <vector>

#include "bidshade/baselines.hpp"
#include "bidshade/campaign.hpp"
#include "bidshade/dataset.hpp"
#include "bidshade/eval.hpp"
#include "bidshade/mebs.hpp"
#include "bidshade/model.hpp"
#include "bidshade/slot_factors.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace bidshade;
using testutil::flat_landscape;
using testutil::make_record;
using testutil::tiny_landscape;

namespace {

// Slot factors with every cell at full support so lookups are predictable:
// slot 1 has CTR 0.5, slot 2 has CTR 0.25 (Laplace-smoothed exactly).
SlotFactorTable hand_factors() {
    SlotFactorTable t;
    t.min_support = 2;
    t.by_pos[1] = {198, 99};  // (99+1)/(198+2) = 0.5
    t.by_pos[2] = {198, 49};  // (49+1)/(198+2) = 0.25
    t.by_pos_scene[{1, 0}] = {198, 99};
    t.by_pos_scene[{2, 0}] = {198, 49};
    t.global = {396, 148};
    return t;
}

}  // namespace

TEST_CASE("slot factor table estimates and falls back on support") {
    std::vector<AuctionRecord> records;
    const FeatureVec x{0, 0, 0, 0, 0, 0};
    for (int i = 0; i < 60; ++i)
        records.push_back(make_record(i, x, 0, 10, 10, 10, 5, true, 1, 5, 1, i < 30));
    for (int i = 0; i < 3; ++i)
        records.push_back(make_record(100 + i, x, 1, 10, 10, 10, 5, true, 2, 5, 2, false));
    records.push_back(make_record(999, x, 0, 10, 10, 4, 5, false, 0, 0, 0, false));

    const SlotFactorTable t = build_slot_factors(records, 50);
    // (slot 1, scene 0): 60 shown, 30 clicked -> (30+1)/(60+2).
    CHECK(t.at(1, 0) == doctest::Approx(31.0 / 62.0));
    CHECK(t.at_pos(1) == doctest::Approx(31.0 / 62.0));
    // (slot 2, scene 1) has 3 < 50 impressions: falls to position, also 3,
    // then to the global cell: 63 shown, 30 clicked.
    CHECK(t.at(2, 1) == doctest::Approx(31.0 / 65.0));
    CHECK(t.global.shown == 63);  // the lost record never counts
    CHECK(t.last_slot(0) == 1);
    CHECK(t.last_slot(1) == 2);
}

TEST_CASE("surplus samples implement the margin-times-factor form") {
    const SlotFactorTable t = hand_factors();
    std::vector<AuctionRecord> records;
    const FeatureVec x{0, 0, 0, 0, 0, 0};
    // Won at slot 2 after shading from original slot 1: factor ratio 0.5.
    records.push_back(make_record(1, x, 0, 10.0, 10.0, 7.0, 6.0, true, 2, 6.0, 1, true, 0.02));
    // Lost after shading: zero surplus.
    records.push_back(make_record(2, x, 0, 10.0, 10.0, 4.0, 6.0, false, 0, 0.0, 1, false, 0.02));

    const auto samples = surplus_samples(records, t);
    REQUIRE(samples.size() == 2);
    // (mu0*V - C) * pCTR * u(2)/u(1) = (10 - 6) * 0.02 * 0.5 = 0.04.
    CHECK(samples[0].s_ps == doctest::Approx(4.0 * 0.02 * 0.5));
    CHECK(samples[0].s_p == doctest::Approx(4.0 * 0.02 * 0.5));
    CHECK(samples[0].won);
    CHECK(samples[0].slot_won == 2);
    CHECK(samples[0].original_slot == 1);
    CHECK(samples[1].s_ps == 0.0);
    CHECK(samples[1].s_p == 0.0);

    // Same-slot win: the factor ratio cancels to one -> margin times pCTR.
    std::vector<AuctionRecord> same;
    same.push_back(make_record(3, x, 0, 10.0, 10.0, 10.0, 6.0, true, 1, 6.0, 1, true, 0.02));
    const auto s2 = surplus_samples(same, t);
    CHECK(s2[0].s_ps == doctest::Approx((10.0 - 6.0) * 0.02));

    // A record that won without an original slot is inconsistent data.
    std::vector<AuctionRecord> bad;
    bad.push_back(make_record(4, x, 0, 10.0, 10.0, 10.0, 6.0, true, 1, 6.0, 0, false, 0.02));
    CHECK_THROWS_AS(surplus_samples(bad, t), DataError);
}

TEST_CASE("surplus metric normalizes per thousand and adds up") {
    const SlotFactorTable t = hand_factors();
    const FeatureVec x{0, 0, 0, 0, 0, 0};
    std::vector<AuctionRecord> a, b;
    a.push_back(make_record(1, x, 0, 10.0, 10.0, 10.0, 6.0, true, 1, 6.0, 1, true, 0.02));
    b.push_back(make_record(2, x, 0, 8.0, 8.0, 8.0, 5.0, true, 1, 5.0, 1, true, 0.03));
    b.push_back(make_record(3, x, 0, 8.0, 8.0, 3.0, 5.0, false, 0, 0.0, 1, false, 0.03));

    const auto sa = surplus_samples(a, t);
    const auto sb = surplus_samples(b, t);
    std::vector<SurplusSample> both = sa;
    both.insert(both.end(), sb.begin(), sb.end());

    const double ma = surplus_metric(sa, SurplusVariant::kPositionScene);
    const double mb = surplus_metric(sb, SurplusVariant::kPositionScene);
    const double mboth = surplus_metric(both, SurplusVariant::kPositionScene);
    CHECK(ma == doctest::Approx(1000.0 * (10.0 - 6.0) * 0.02 / 1.0));
    CHECK(mboth * 3.0 == doctest::Approx(ma * 1.0 + mb * 2.0));

    CHECK_THROWS_AS(surplus_metric({}, SurplusVariant::kPosition), DataError);
}

TEST_CASE("pcoc is the predicted-over-observed click ratio") {
    const FeatureVec x{0, 0, 0, 0, 0, 0};
    std::vector<AuctionRecord> records;
    // 10 won records, 2 clicked: empirical CTR 0.2.
    for (int i = 0; i < 10; ++i)
        records.push_back(make_record(i, x, 0, 10, 10, 10, 5, true, 1, 5, 1, i < 2, 0.2));
    CHECK(pcoc(records, upstream_pctr_source()) == doctest::Approx(1.0));

    for (auto& r : records) r.upstream_pctr = 0.4;  // doubled predictions
    CHECK(pcoc(records, upstream_pctr_source()) == doctest::Approx(2.0));

    // Lost records are ignored entirely.
    records.push_back(make_record(99, x, 0, 10, 10, 1, 5, false, 0, 0, 0, false, 0.9));
    CHECK(pcoc(records, upstream_pctr_source()) == doctest::Approx(2.0));

    std::vector<AuctionRecord> unclicked;
    for (int i = 0; i < 5; ++i)
        unclicked.push_back(make_record(i, x, 0, 10, 10, 10, 5, true, 1, 5, 1, false, 0.2));
    CHECK_THROWS_AS(pcoc(unclicked, upstream_pctr_source()), DataError);
    CHECK_THROWS_AS(pcoc({}, upstream_pctr_source()), DataError);
}

TEST_CASE("replay is paired and deterministic across policies") {
    const LandscapeSpec spec = tiny_landscape();
    const SlotFactorTable factors =
        build_slot_factors(generate_dataset(spec, unshaded_policy(), 1.0, 8000, 501, 4).records, 50);

    const Replay full = replay_policy(spec, unshaded_policy(), 1.0, 3000, 502, factors, 4);
    const Replay again = replay_policy(spec, unshaded_policy(), 1.0, 3000, 502, factors, 1);
    REQUIRE(full.samples.size() == 3000);
    for (std::size_t i = 0; i < 100; ++i) {
        CHECK(full.samples[i].s_ps == again.samples[i].s_ps);
        CHECK(full.ds.records[i].value == again.ds.records[i].value);
    }

    const Replay shaded = replay_policy(spec, fixed_ratio_policy(0.8), 1.0, 3000, 502, factors, 4);
    for (std::size_t i = 0; i < full.ds.records.size(); ++i) {
        CHECK(full.ds.records[i].features == shaded.ds.records[i].features);
        CHECK(full.ds.records[i].outcome.min_win_price ==
              shaded.ds.records[i].outcome.min_win_price);
    }

    // Unshaded replay never loses surplus: cost <= unshaded bid = mu0 V and
    // the slot factors cancel, so every sample is non-negative.
    for (const auto& s : full.samples) CHECK(s.s_ps >= -1e-12);
}

TEST_CASE("position and scene variants coincide on a single-scene world") {
    const LandscapeSpec spec = flat_landscape();
    const SlotFactorTable factors =
        build_slot_factors(generate_dataset(spec, unshaded_policy(), 1.0, 10000, 503, 4).records,
                           50);
    const Replay rp = replay_policy(spec, fixed_ratio_policy(0.85), 1.0, 4000, 504, factors, 4);
    for (const auto& s : rp.samples) CHECK(s.s_ps == s.s_p);
    CHECK(surplus_metric(rp.samples, SurplusVariant::kPositionScene) ==
          surplus_metric(rp.samples, SurplusVariant::kPosition));
}

TEST_CASE("realized surplus agrees with the closed-form expectation on flat slots") {
    // Flat slot factors remove the position dependence, so the empirical
    // factor ratio is exactly one and the realized surplus is an unbiased
    // estimate of (mu0 V - E[cost]) * upstream restricted to wins.
    const LandscapeSpec spec = flat_landscape();
    const SlotFactorTable factors =
        build_slot_factors(generate_dataset(spec, unshaded_policy(), 1.0, 20000, 505, 4).records,
                           50);
    const Replay rp = replay_policy(spec, fixed_ratio_policy(0.9), 1.0, 60000, 506, factors, 4);

    const double mean_realized =
        surplus_metric(rp.samples, SurplusVariant::kPositionScene) / 1000.0;
    const double mean_true = mean_true_expected_surplus(spec, rp.ds.records);

    double var = 0.0;
    for (const auto& s : rp.samples) {
        const double d = s.s_ps - mean_realized;
        var += d * d;
    }
    var /= static_cast<double>(rp.samples.size());
    const double stderr_mean = std::sqrt(var / static_cast<double>(rp.samples.size()));
    // 5 sigma plus 2% slack for the empirical-factor wobble.
    CHECK(std::abs(mean_realized - mean_true) < 5.0 * stderr_mean + 0.02 * std::abs(mean_true));
}

TEST_CASE("policy rows aggregate wins, surplus, and breakdowns") {
    const LandscapeSpec spec = tiny_landscape();
    const SlotFactorTable factors =
        build_slot_factors(generate_dataset(spec, unshaded_policy(), 1.0, 8000, 507, 4).records, 50);
    const Replay rp = replay_policy(spec, unshaded_policy(), 1.0, 4000, 508, factors, 4);
    const PolicyEval row = evaluate_policy("unshaded", rp, upstream_pctr_source());

    CHECK(row.policy == "unshaded");
    CHECK(row.surplus_ps == doctest::Approx(surplus_metric(rp.samples, SurplusVariant::kPositionScene)));
    double wins = 0;
    for (const auto& r : rp.ds.records) wins += r.outcome.won ? 1.0 : 0.0;
    CHECK(row.win_rate == doctest::Approx(wins / 4000.0));
    REQUIRE(row.pcoc.has_value());
    CHECK(*row.pcoc > 0.5);
    CHECK(*row.pcoc < 2.5);  // upstream bias 1.1 plus noise, nowhere near off-scale

    double slot_total = 0.0, scene_total = 0.0;
    for (const auto& [slot, v] : row.surplus_ps_by_slot) slot_total += v;
    for (const auto& [scene, v] : row.surplus_ps_by_scene) scene_total += v;
    CHECK(slot_total == doctest::Approx(row.surplus_ps).epsilon(1e-9));
    CHECK(scene_total == doctest::Approx(row.surplus_ps).epsilon(1e-9));

    const PolicyEval no_pcoc = evaluate_policy("bare", rp);
    CHECK_FALSE(no_pcoc.pcoc.has_value());

    EvalReport report;
    report.landscape_fingerprint = hex64(spec.fingerprint());
    report.seed = 508;
    report.n_auctions = 4000;
    report.rows = {row, no_pcoc};
    const std::string text = report.to_text();
    CHECK(text.find("unshaded") != std::string::npos);
    CHECK(text.find("bare") != std::string::npos);
    const std::string csv = report.breakdown_csv();
    CHECK(csv.find("slot") != std::string::npos);
    CHECK(csv.find("scene") != std::string::npos);
    CHECK(report.to_json().find("surplus_ps") != std::string::npos);
}

TEST_CASE("landscape gate rejects bundles trained elsewhere") {
    ModelConfig cfg;
    cfg.fields = tiny_landscape().schema.fields;
    cfg.numerics = {{"bid", NumericTransform::kIdentity, 0.0, 1.0}};
    cfg.embed_dim = 2;
    cfg.hidden = {4};
    MebsBundle bundle{WinRateModel{BaseModel(cfg, nullptr, 1)}, std::nullopt,
                      ShadingModel{BaseModel(cfg, nullptr, 2), 0.1}};
    bundle.landscape_fingerprint = tiny_landscape().fingerprint();
    CHECK_NOTHROW(require_same_landscape(bundle, tiny_landscape()));
    CHECK_THROWS_AS(require_same_landscape(bundle, flat_landscape()), DataError);
}

TEST_CASE("theorem audit passes on the default world") {
    const LandscapeSpec spec = tiny_landscape();
    const TheoremReport report = verify_theorem(spec, {0.5, 1.0, 2.0}, 25, 509, 250, 0.8);
    CHECK(report.samples == 25);
    CHECK(report.scans == 75);
    CHECK(report.unimodal_violations == 0);
    CHECK(report.bid_monotone_violations == 0);
    CHECK(report.cost_strictly_increasing);
    CHECK_FALSE(report.budget_checked);
    CHECK(report.pass());
    REQUIRE(report.cumulative_cost.size() == 3);
    CHECK(report.cumulative_cost[0] < report.cumulative_cost[1]);
    CHECK(report.cumulative_cost[1] < report.cumulative_cost[2]);
    CHECK(report.to_json().find("unimodal_violations") != std::string::npos);

    CHECK_THROWS_AS(verify_theorem(spec, {}, 5, 1, 100, 0.8), UsageError);
    CHECK_THROWS_AS(verify_theorem(spec, {1.0}, 0, 1, 100, 0.8), UsageError);
}

TEST_CASE("theorem audit exercises the budget branch") {
    const LandscapeSpec spec = tiny_landscape();
    const Dataset ds = generate_dataset(spec, unshaded_policy(), 1.0, 1200, 510, 4);

    ModelConfig cfg;
    cfg.fields = spec.schema.fields;
    cfg.numerics = {{"bid", NumericTransform::kLog1p, 0.0, 1.0}};
    cfg.embed_dim = 2;
    cfg.hidden = {4};
    WinRateModel wr{BaseModel(cfg, nullptr, 0)};
    for (auto& t : wr.net.tensors())
        for (auto& v : *t.data) v = 0.0;
    wr.net.embedding()->frozen = true;
    CostBidRatio rcb;
    rcb.min_support = 1;
    rcb.global = {0.8, 100};

    const double c1 = expected_cost(ds.records, 1.0, ratio_policy_fn(1.0), wr, nullptr, rcb, 1);
    BudgetCheck check;
    check.replay = &ds.records;
    check.budget = to_money(1.7 * c1);
    check.wr = &wr;
    check.rcb = &rcb;
    check.tol = 0.01;

    const TheoremReport report = verify_theorem(spec, {1.0, 2.0}, 5, 511, 150, 0.8, &check);
    CHECK(report.budget_checked);
    CHECK(report.budget_within_tol);
    CHECK(report.mu0_star == doctest::Approx(1.7).epsilon(0.02));
    CHECK(report.residual_frac <= 0.01 + 1e-12);
    CHECK(report.pass());
}

TEST_CASE("inference bench times model and search phases separately") {
    std::atomic<long> model_calls{0}, search_calls{0};
    std::vector<BenchPolicy> policies(2);
    policies[0].name = "single_pass";
    policies[0].model_step = [&](std::size_t) { model_calls.fetch_add(1); };
    policies[1].name = "search_based";
    policies[1].model_step = [&](std::size_t) { model_calls.fetch_add(1); };
    policies[1].search_step = [&](std::size_t) { search_calls.fetch_add(1); };

    const BenchReport report = bench_inference(500, 3, policies);
    CHECK(report.batch == 500);
    CHECK(report.repetitions == 3);
    CHECK(report.threads == 1);
    REQUIRE(report.rows.size() == 2);
    CHECK(report.rows[0].policy == "single_pass");
    CHECK(report.rows[0].search_seconds == 0.0);
    CHECK(report.rows[0].model_seconds >= 0.0);
    CHECK(report.rows[1].search_seconds >= 0.0);
    CHECK(report.rows[1].total_seconds() ==
          doctest::Approx(report.rows[1].model_seconds + report.rows[1].search_seconds));
    // Warm-up plus three timed repetitions touch every record each time.
    CHECK(model_calls.load() == 2 * 4 * 500);
    CHECK(search_calls.load() == 4 * 500);
    CHECK(report.to_text().find("search_based") != std::string::npos);
    CHECK(report.to_json().find("model_seconds") != std::string::npos);
}

TEST_CASE("standard bench policies run every configured method") {
    const LandscapeSpec spec = tiny_landscape();
    const Dataset ds = generate_dataset(spec, explore_policy(0.1, 513), 1.0, 3000, 513, 4);
    MebsHyper hyper;
    hyper.embed_dim = 4;
    hyper.hidden = {8};
    for (TrainHyper* th : {&hyper.win_rate, &hyper.calibration, &hyper.shading}) {
        th->epochs = 2;
        th->batch = 512;
    }
    const MebsBundle bundle = train_mebs(ds, spec.schema, hyper, spec.fingerprint());
    const SrrModel srr = train_srr(ds.records, spec.schema, hyper);
    const WinPriceDistModel tsbs = train_tsbs(ds.records, spec.schema, hyper, 6);
    const SlotFactorTable factors = build_slot_factors(ds.records, 50);
    const NpmTable npm = train_npm(ds.records, spec.schema, {"scene"}, 50, factors, 0.1);

    const auto policies =
        make_bench_policies(ds.records, &bundle.shade, &srr, &tsbs, bundle.calib_ptr(), &npm,
                            bundle.rcb.global.mean, 8, 0.1);
    REQUIRE(policies.size() == 4);
    const BenchReport report = bench_inference(400, 2, policies);
    REQUIRE(report.rows.size() == 4);
    for (const auto& row : report.rows) {
        CHECK(row.model_seconds >= 0.0);
        CHECK(std::isfinite(row.total_seconds()));
    }
    // Single-pass methods have no search phase; TSBS does.
    CHECK(report.rows[0].policy == "mebs");
    CHECK(report.rows[0].search_seconds == 0.0);
    bool tsbs_found = false;
    for (const auto& row : report.rows)
        if (row.policy == "tsbs") {
            tsbs_found = true;
            CHECK(row.search_seconds > 0.0);
        }
    CHECK(tsbs_found);
}
