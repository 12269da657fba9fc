#pragma once
// Synthetic bid landscape: the ground-truth world the simulator samples from
// and every brute-force oracle integrates over. Competitor bids are log-normal
// per (scene, ad-bucket); clicks follow a deterministic teacher propensity
// q(x) scaled by the slot CTR factor.

#include <cstdint>
#include <string>
#include <vector>

#include "bidshade/auction.hpp"
#include "bidshade/common.hpp"

namespace bidshade {

struct FieldDef {
    std::string name;
    int vocab = 0;
};

struct FeatureSchema {
    std::vector<FieldDef> fields;

    int index_of(const std::string& name) const;  // -1 when absent
    void validate() const;
    // user_segment/50, scene/8, ad_bucket/200, hour/24, ad_category/30, device/4
    static FeatureSchema defaults();
};

// Feature vector: one category id per schema field, schema order.
using FeatureVec = std::vector<int>;

struct SceneConfig {
    SlotProfile profile;              // scene_id, K, u_1..u_K
    int competitors = 10;             // M, iid bids per auction
    double bid_mu = 1.6;              // log-space location of competitor bids
    double bid_mu_bucket_amp = 0.25;  // per-ad-bucket offset amplitude (log-space)
    double bid_sigma = 0.5;           // log-space scale
    double value_mu = 1.0;            // log-space location of ad value V
    double value_sigma = 0.4;
};

// Ground truth for generation and oracles. Structural randomness (teacher
// weights, per-bucket bid offsets) is a pure function of structure_seed, so
// two specs with equal fields define the identical world.
struct LandscapeSpec {
    std::uint64_t structure_seed = 17;
    FeatureSchema schema;
    std::vector<SceneConfig> scenes;

    double q_lo = 0.005;        // teacher propensity range
    double q_hi = 0.35;
    double teacher_amp = 1.2;   // hashed-weight amplitude
    double upstream_bias = 1.10;   // multiplicative miscalibration of upstream pCTR
    double upstream_noise = 0.25;  // log-space noise sigma of upstream pCTR
    int ref_slot = 1;           // upstream pCTR predicts the CTR at this slot
    double mu0 = 1.0;           // default control signal at generation time

    void validate() const;
    const SceneConfig& scene(int scene_id) const;
    int n_scenes() const { return static_cast<int>(scenes.size()); }
    int scene_field() const;   // schema index of the scene field
    int bucket_field() const;  // schema index of the ad_bucket field
    int bucket_of(const FeatureVec& x) const { return x[static_cast<std::size_t>(bucket_field())]; }
    int scene_of(const FeatureVec& x) const { return x[static_cast<std::size_t>(scene_field())]; }

    // --- deterministic structure -------------------------------------------
    double teacher_q(const FeatureVec& x) const;           // click propensity in (q_lo, q_hi)
    double bid_log_mu(int scene_id, int bucket) const;      // per-context log-location
    double upstream_mean(const FeatureVec& x) const;        // q(x)·u_ref·bias

    // --- sampling ----------------------------------------------------------
    FeatureVec sample_features(Rng& rng) const;
    double sample_value(int scene_id, Rng& rng) const;
    void sample_competitors(int scene_id, int bucket, Rng& rng, std::vector<Money>& out) const;
    double sample_upstream_pctr(const FeatureVec& x, Rng& rng) const;

    // --- closed forms (bid arguments in currency units) --------------------
    // P(single competitor bid <= b)
    double bid_cdf(int scene_id, int bucket, double bid) const;
    // P(focal wins a slot) = P(at most K-1 of M competitors above b)
    double win_prob(int scene_id, int bucket, double bid) const;
    // P(focal lands exactly in slot j), j in 1..K
    double slot_prob(int scene_id, int bucket, int slot, double bid) const;
    // sum_j slot_prob(j,b)·u_j = E[u_slot·I(win)]
    double expected_u_win(int scene_id, int bucket, double bid) const;
    // E[u_slot | win]; safe fallback u_K when win_prob underflows
    double expected_u_given_win(int scene_id, int bucket, double bid) const;
    // E[cost·I(win)] via exact conditional-maximum integral (Gauss-Legendre)
    double expected_cost_exact(int scene_id, int bucket, double bid) const;

    // --- serialization -----------------------------------------------------
    std::string to_json() const;  // canonical: sorted keys, round-trip floats
    static LandscapeSpec from_json(const std::string& text);
    std::uint64_t fingerprint() const;

    // "trainable" (~5% win, ~10% click|win) or "paper-sparsity" (~0.83% win,
    // ~1.81% click|win)
    static LandscapeSpec make_preset(const std::string& name);
};

}  // namespace bidshade
