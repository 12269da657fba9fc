#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "bidshade/dataset.hpp"
#include "doctest.h"
#include "json.hpp"
#include "test_util.hpp"

using namespace bidshade;
using testutil::temp_dir;
using testutil::tiny_landscape;

namespace {

bool records_equal(const std::vector<AuctionRecord>& a, const std::vector<AuctionRecord>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto& x = a[i];
        const auto& y = b[i];
        if (x.auction_id != y.auction_id || x.features != y.features ||
            x.scene_id != y.scene_id || x.value != y.value || x.mu0 != y.mu0 ||
            x.unshaded_bid != y.unshaded_bid || x.shaded_bid != y.shaded_bid ||
            x.upstream_pctr != y.upstream_pctr || !(x.outcome == y.outcome) ||
            x.original_slot != y.original_slot || x.clicked != y.clicked)
            return false;
    }
    return true;
}

// Single-scene world where the focal bidder dwarfs every competitor and the
// teacher propensity is pinned to ~0.2 with flat slot factors of 0.5.
LandscapeSpec click_rate_landscape() {
    LandscapeSpec spec = testutil::flat_landscape();
    spec.scenes[0].bid_mu = -4.0;  // competitors bid ~0.018 units
    spec.scenes[0].value_mu = 1.5;
    spec.scenes[0].value_sigma = 0.3;
    spec.q_lo = 0.1999;
    spec.q_hi = 0.2001;
    spec.validate();
    return spec;
}

}  // namespace

TEST_CASE("generation is deterministic and shard-count independent") {
    const LandscapeSpec spec = tiny_landscape();
    const Dataset a = generate_dataset(spec, unshaded_policy(), 1.0, 4000, 42, 4);
    const Dataset b = generate_dataset(spec, unshaded_policy(), 1.0, 4000, 42, 4);
    const Dataset serial = generate_dataset_serial(spec, unshaded_policy(), 1.0, 4000, 42);
    CHECK(records_equal(a.records, b.records));
    CHECK(records_equal(a.records, serial.records));
    const Dataset other = generate_dataset(spec, unshaded_policy(), 1.0, 4000, 43, 4);
    CHECK_FALSE(records_equal(a.records, other.records));
}

TEST_CASE("meta counts are consistent with the records") {
    const LandscapeSpec spec = tiny_landscape();
    const Dataset ds = generate_dataset(spec, unshaded_policy(), 1.0, 6000, 7, 4);
    std::int64_t n_plus = 0, n_won = 0, n_clicked = 0;
    for (const auto& r : ds.records) {
        if (winnable(r)) ++n_plus;
        if (r.outcome.won) ++n_won;
        if (r.clicked) {
            ++n_clicked;
            CHECK(r.outcome.won);  // clicks only on shown ads
        }
        CHECK(r.shaded_bid > 0);
        CHECK(r.shaded_bid <= r.unshaded_bid);
        CHECK(r.unshaded_bid == to_money(r.mu0 * money_units(r.value)));
        CHECK(winnable(r) == (r.unshaded_bid >= r.outcome.min_win_price));
        if (r.outcome.won) CHECK(r.outcome.cost <= r.shaded_bid);
        CHECK(r.outcome.won == (r.shaded_bid >= r.outcome.min_win_price));
    }
    CHECK(ds.meta.n == 6000);
    CHECK(ds.meta.n_plus == n_plus);
    CHECK(ds.meta.n_won == n_won);
    CHECK(ds.meta.n_clicked == n_clicked);
    CHECK(ds.meta.rejected == 0);
    CHECK(ds.meta.n >= ds.meta.n_plus);
    CHECK(ds.meta.n_plus >= ds.meta.n_won);
    CHECK(ds.meta.n_won >= ds.meta.n_clicked);
    // Unshaded logging: winnable and won coincide.
    CHECK(ds.meta.n_plus == ds.meta.n_won);
}

TEST_CASE("fixed ratio and exploring policies respect their ranges") {
    const LandscapeSpec spec = tiny_landscape();
    const Dataset half = generate_dataset(spec, fixed_ratio_policy(0.5), 1.0, 3000, 11, 4);
    for (const auto& r : half.records)
        CHECK(r.shaded_bid == to_money(0.5 * money_units(r.unshaded_bid)));

    const Dataset expl = generate_dataset(spec, explore_policy(0.25, 5), 1.0, 3000, 11, 4);
    bool varies = false;
    double first_ratio = -1.0;
    for (const auto& r : expl.records) {
        // Ratios live in [r_min, 1] up to one milli-unit of rounding.
        CHECK(r.shaded_bid >= to_money(0.25 * money_units(r.unshaded_bid)) - 1);
        CHECK(r.shaded_bid <= r.unshaded_bid);
        const double ratio = money_units(r.shaded_bid) / money_units(r.unshaded_bid);
        if (first_ratio < 0.0)
            first_ratio = ratio;
        else if (std::abs(ratio - first_ratio) > 1e-6)
            varies = true;
    }
    CHECK(varies);
    // The exploring logger is itself deterministic given its seed.
    const Dataset expl2 = generate_dataset(spec, explore_policy(0.25, 5), 1.0, 3000, 11, 4);
    CHECK(records_equal(expl.records, expl2.records));
}

TEST_CASE("click randomness is paired across policies on one seed") {
    const LandscapeSpec spec = tiny_landscape();
    const Dataset full = generate_dataset(spec, unshaded_policy(), 1.0, 8000, 13, 4);
    const Dataset shaded = generate_dataset(spec, fixed_ratio_policy(0.97), 1.0, 8000, 13, 4);
    REQUIRE(full.records.size() == shaded.records.size());
    int compared = 0;
    for (std::size_t i = 0; i < full.records.size(); ++i) {
        const auto& a = full.records[i];
        const auto& b = shaded.records[i];
        CHECK(a.features == b.features);  // identical auction stream
        CHECK(a.value == b.value);
        CHECK(a.outcome.min_win_price == b.outcome.min_win_price);
        if (a.outcome.won && b.outcome.won && a.outcome.slot_won == b.outcome.slot_won) {
            CHECK(a.clicked == b.clicked);  // same click coin at the same slot
            ++compared;
        }
    }
    CHECK(compared > 100);
}

TEST_CASE("click frequency matches the propensity-times-factor product") {
    // q ~= 0.2 and u = 0.5 in every slot: click|win frequency ~= 0.10.
    const LandscapeSpec spec = click_rate_landscape();
    const Dataset ds = generate_dataset(spec, unshaded_policy(), 1.0, 100000, 31, 4);
    REQUIRE(ds.meta.n_won > 99000);  // dominant bidder wins essentially always
    const double rate = static_cast<double>(ds.meta.n_clicked) / ds.meta.n_won;
    const double sigma = std::sqrt(0.1 * 0.9 / static_cast<double>(ds.meta.n_won));
    CHECK(std::abs(rate - 0.10) < 3.0 * sigma + 0.001);
}

TEST_CASE("dominant bidder wins every auction") {
    const LandscapeSpec spec = click_rate_landscape();
    const Dataset ds = generate_dataset(spec, unshaded_policy(), 1.0, 20000, 3, 4);
    CHECK(ds.meta.n_won == ds.meta.n);
}

TEST_CASE("non-positive policy bids are rejected and counted") {
    const LandscapeSpec spec = tiny_landscape();
    const Dataset ds =
        generate_dataset(spec, [](const BidRequest&) -> Money { return 0; }, 1.0, 500, 1, 2);
    CHECK(ds.records.empty());
    CHECK(ds.meta.n == 0);
    CHECK(ds.meta.rejected == 500);
}

TEST_CASE("dataset files round trip byte for byte") {
    const LandscapeSpec spec = tiny_landscape();
    const Dataset ds = generate_dataset(spec, explore_policy(0.3, 9), 1.0, 2500, 77, 4);
    const std::string dir = temp_dir("dataset_rt");
    const std::string data1 = dir + "/a.jsonl", meta1 = dir + "/a.meta.json";
    write_dataset(ds, spec.schema, spec.fingerprint(), data1, meta1);

    const Dataset back = read_dataset(data1, spec.schema);
    CHECK(records_equal(ds.records, back.records));
    std::uint64_t fp = 0;
    const DatasetMeta meta = read_meta(meta1, &fp);
    CHECK(fp == spec.fingerprint());
    CHECK(meta.n == ds.meta.n);
    CHECK(meta.n_plus == ds.meta.n_plus);
    CHECK(meta.n_won == ds.meta.n_won);
    CHECK(meta.n_clicked == ds.meta.n_clicked);
    CHECK(meta.seed == ds.meta.seed);

    const std::string data2 = dir + "/b.jsonl", meta2 = dir + "/b.meta.json";
    write_dataset(back, spec.schema, spec.fingerprint(), data2, meta2);
    CHECK(testutil::slurp(data1) == testutil::slurp(data2));
    std::filesystem::remove_all(dir);
}

TEST_CASE("record lines carry the documented field names") {
    const LandscapeSpec spec = tiny_landscape();
    const Dataset ds = generate_dataset(spec, unshaded_policy(), 1.0, 50, 21, 1);
    const std::string dir = temp_dir("dataset_keys");
    write_dataset(ds, spec.schema, spec.fingerprint(), dir + "/d.jsonl", dir + "/d.meta.json");
    std::ifstream in(dir + "/d.jsonl");
    std::string line;
    REQUIRE(std::getline(in, line));
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"auction_id", "features", "scene_id", "value", "mu0", "unshaded_bid",
                            "shaded_bid", "upstream_pctr", "won", "wp", "original_slot", "clicked"})
        CHECK(j.contains(key));
    for (const auto& f : spec.schema.fields) CHECK(j.at("features").contains(f.name));
    std::filesystem::remove_all(dir);
}
