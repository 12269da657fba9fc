#pragma once
// Labeled bid logs: one AuctionRecord per simulated auction, generated from a
// LandscapeSpec under a bidding policy. Generation is deterministic given
// (landscape, policy, mu0, seed) and independent of worker count: every
// auction owns an RNG derived from (seed, auction_id), and click randomness
// uses a separate stream so policies replayed on the same seed face identical
// auctions AND identical click draws.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bidshade/auction.hpp"
#include "bidshade/landscape.hpp"

namespace bidshade {

struct AuctionRecord {
    std::int64_t auction_id = 0;
    FeatureVec features;
    int scene_id = 0;
    Money value = 0;          // ad value V if clicked
    double mu0 = 1.0;         // control signal at logging time
    Money unshaded_bid = 0;   // mu0 * V
    Money shaded_bid = 0;     // policy output b, clipped into (0, unshaded]
    double upstream_pctr = 0.0;
    AuctionOutcome outcome;
    int original_slot = 0;    // slot the UNSHADED bid wins; 0 = none
    bool clicked = false;
};

// A record is winnable when the unshaded bid meets the minimum winning price.
inline bool winnable(const AuctionRecord& r) { return r.original_slot > 0; }

struct DatasetMeta {
    std::int64_t n = 0;          // records kept
    std::int64_t n_plus = 0;     // winnable
    std::int64_t n_won = 0;
    std::int64_t n_clicked = 0;
    std::int64_t rejected = 0;   // policy emitted a non-positive bid
    std::uint64_t seed = 0;
};

struct Dataset {
    std::vector<AuctionRecord> records;
    DatasetMeta meta;
};

struct BidRequest {
    std::int64_t auction_id = 0;
    const FeatureVec* features = nullptr;
    int scene_id = 0;
    Money value = 0;
    double mu0 = 1.0;
    Money unshaded_bid = 0;
    double upstream_pctr = 0.0;
};

// Returns the shaded bid. Non-positive output rejects the record (counted);
// output above the unshaded bid is clipped to it.
using BiddingPolicy = std::function<Money(const BidRequest&)>;

BiddingPolicy unshaded_policy();
BiddingPolicy fixed_ratio_policy(double ratio);
// Exploring logger: an independent uniform ratio in [r_min, 1] per auction.
BiddingPolicy explore_policy(double r_min, std::uint64_t seed);

// One auction end to end; `rejected` (optional) reports a non-positive
// policy bid, in which case the returned record is not meaningful.
AuctionRecord sample_auction(const LandscapeSpec& spec, const BiddingPolicy& policy, double mu0,
                             std::uint64_t seed, std::int64_t auction_id, bool* rejected = nullptr);

// OpenMP-parallel across auctions; `threads` as in parallel_for.
Dataset generate_dataset(const LandscapeSpec& spec, const BiddingPolicy& policy, double mu0,
                         std::int64_t n_auctions, std::uint64_t seed, int threads = 1);
// Reference implementation the parallel path is tested against.
Dataset generate_dataset_serial(const LandscapeSpec& spec, const BiddingPolicy& policy, double mu0,
                                std::int64_t n_auctions, std::uint64_t seed);

DatasetMeta compute_meta(const std::vector<AuctionRecord>& records, std::uint64_t seed,
                         std::int64_t rejected);

// --- files -----------------------------------------------------------------
// Dataset: JSON lines, one record per line; meta: JSON object holding
// DatasetMeta plus the landscape fingerprint.
void write_dataset(const Dataset& ds, const FeatureSchema& schema,
                   std::uint64_t landscape_fingerprint, const std::string& data_path,
                   const std::string& meta_path);
Dataset read_dataset(const std::string& data_path, const FeatureSchema& schema);
DatasetMeta read_meta(const std::string& meta_path, std::uint64_t* landscape_fingerprint = nullptr);

}  // namespace bidshade
