#pragma once

#include <span>
#include <vector>

#include "bidshade/common.hpp"

namespace bidshade {

// One scene's slot layout: K ranked slots with non-increasing average CTR
// factors u_1 >= ... >= u_K > 0.
struct SlotProfile {
    int scene_id = 0;
    int slots = 0;
    std::vector<double> ctr_factors;

    void validate() const;
};

struct AuctionOutcome {
    bool won = false;
    int slot_won = 0;  // 1-based; 0 when lost
    Money cost = 0;    // next-position bid; meaningful only when won
    Money min_win_price = 0;

    bool operator==(const AuctionOutcome&) const = default;
};

// K-th highest competitor bid: the lowest bid that still takes a slot.
Money min_winning_price(std::span<const Money> competitor_bids, int slots);

// Ranks the focal bid against the competitors. Ties go to the focal
// bidder, both for slot assignment and for payment (a tied competitor does
// not set the price; the next strictly lower bid does).
AuctionOutcome run_auction(Money focal_bid, std::span<const Money> competitor_bids,
                           const SlotProfile& profile);

}  // namespace bidshade
