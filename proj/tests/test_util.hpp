#pragma once
// Shared helpers for the unit tests: small landscapes that generate and
// train in well under a second, hand-built records, and temp directories.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bidshade/dataset.hpp"
#include "bidshade/landscape.hpp"

namespace testutil {

using namespace bidshade;

// Two-scene world with small vocabularies and frequent wins, so a few
// thousand auctions carry usable training signal.
inline LandscapeSpec tiny_landscape() {
    LandscapeSpec spec;
    spec.structure_seed = 7;
    spec.schema.fields = {{"user_segment", 8}, {"scene", 4},       {"ad_bucket", 12},
                          {"hour", 6},         {"ad_category", 5}, {"device", 2}};
    SceneConfig s0;
    s0.profile = {0, 3, {0.70, 0.45, 0.28}};
    s0.competitors = 6;
    s0.bid_mu = 0.9;
    s0.bid_mu_bucket_amp = 0.2;
    s0.bid_sigma = 0.5;
    s0.value_mu = 0.9;
    s0.value_sigma = 0.5;
    SceneConfig s1;
    s1.profile = {1, 2, {0.80, 0.50}};
    s1.competitors = 5;
    s1.bid_mu = 0.7;
    s1.bid_mu_bucket_amp = 0.2;
    s1.bid_sigma = 0.5;
    s1.value_mu = 0.7;
    s1.value_sigma = 0.5;
    spec.scenes = {s0, s1};
    spec.q_lo = 0.05;
    spec.q_hi = 0.60;
    spec.teacher_amp = 1.2;
    spec.upstream_bias = 1.10;
    spec.upstream_noise = 0.20;
    spec.ref_slot = 1;
    spec.mu0 = 1.0;
    spec.validate();
    return spec;
}

// Single-scene world whose slot profile has identical CTR factors for every
// slot. All records share one scene, so empirical position and
// position&scene factors aggregate exactly the same impressions.
inline LandscapeSpec flat_landscape() {
    LandscapeSpec spec;
    spec.structure_seed = 11;
    spec.schema.fields = {{"user_segment", 8}, {"scene", 2},       {"ad_bucket", 12},
                          {"hour", 6},         {"ad_category", 5}, {"device", 2}};
    SceneConfig s0;
    s0.profile = {0, 3, {0.50, 0.50, 0.50}};
    s0.competitors = 6;
    s0.bid_mu = 0.9;
    s0.bid_mu_bucket_amp = 0.2;
    s0.bid_sigma = 0.5;
    s0.value_mu = 0.9;
    s0.value_sigma = 0.5;
    spec.scenes = {s0};
    spec.q_lo = 0.05;
    spec.q_hi = 0.60;
    spec.teacher_amp = 1.2;
    spec.upstream_bias = 1.0;
    spec.upstream_noise = 0.0;
    spec.ref_slot = 1;
    spec.mu0 = 1.0;
    spec.validate();
    return spec;
}

// Hand-built record; features sized for tiny_landscape's six-field schema.
inline AuctionRecord make_record(std::int64_t id, FeatureVec x, int scene, double value_units,
                                 double unshaded_units, double shaded_units, double wp_units,
                                 bool won, int slot_won, double cost_units, int original_slot,
                                 bool clicked, double upstream = 0.1, double mu0 = 1.0) {
    AuctionRecord r;
    r.auction_id = id;
    r.features = std::move(x);
    r.scene_id = scene;
    r.value = to_money(value_units);
    r.mu0 = mu0;
    r.unshaded_bid = to_money(unshaded_units);
    r.shaded_bid = to_money(shaded_units);
    r.upstream_pctr = upstream;
    r.outcome.won = won;
    r.outcome.slot_won = slot_won;
    r.outcome.cost = to_money(cost_units);
    r.outcome.min_win_price = to_money(wp_units);
    r.original_slot = original_slot;
    r.clicked = clicked;
    return r;
}

// Fresh directory under the system temp root, unique per call.
inline std::string temp_dir(const std::string& tag) {
    static std::atomic<int> counter{0};
    const auto dir = std::filesystem::temp_directory_path() /
                     ("bidshade_test_" + tag + "_" + std::to_string(counter.fetch_add(1)));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace testutil
