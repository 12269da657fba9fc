#include "bidshade/auction.hpp"

#include <algorithm>
#include <limits>

namespace bidshade {

void SlotProfile::validate() const {
    if (slots < 1) throw ConfigError("SlotProfile: slot count must be >= 1");
    if (static_cast<int>(ctr_factors.size()) != slots)
        throw ConfigError("SlotProfile: ctr_factors size must equal slot count");
    double prev = 1.0 + 1e-12;
    for (double u : ctr_factors) {
        if (!(u > 0.0) || u > 1.0) throw ConfigError("SlotProfile: ctr factors must lie in (0,1]");
        if (u > prev) throw ConfigError("SlotProfile: ctr factors must be non-increasing");
        prev = u;
    }
}

Money min_winning_price(std::span<const Money> competitor_bids, int slots) {
    if (slots < 1) throw ConfigError("min_winning_price: slot count must be >= 1");
    if (static_cast<int>(competitor_bids.size()) < slots)
        throw ConfigError("min_winning_price: need at least one competitor bid per slot");
    std::vector<Money> sorted(competitor_bids.begin(), competitor_bids.end());
    std::nth_element(sorted.begin(), sorted.begin() + (slots - 1), sorted.end(),
                     std::greater<Money>());
    return sorted[static_cast<std::size_t>(slots - 1)];
}

AuctionOutcome run_auction(Money focal_bid, std::span<const Money> competitor_bids,
                           const SlotProfile& profile) {
    const int k = profile.slots;
    if (static_cast<int>(competitor_bids.size()) < k + 1)
        throw ConfigError("run_auction: need at least slots+1 competitor bids");
    if (focal_bid <= 0) throw ConfigError("run_auction: focal bid must be positive");

    AuctionOutcome out;
    out.min_win_price = min_winning_price(competitor_bids, k);

    int above = 0;
    Money below = std::numeric_limits<Money>::min();
    bool tied = false;
    for (Money c : competitor_bids) {
        if (c > focal_bid) {
            ++above;
        } else if (c == focal_bid) {
            tied = true;
        } else {
            below = std::max(below, c);
        }
    }

    int rank = above + 1;
    if (rank > k) return out;  // lost; won ⟺ focal >= min_win_price

    out.won = true;
    out.slot_won = rank;
    // Tied competitors rank below the focal bid and do not set the price
    // unless nothing strictly lower exists.
    out.cost = (below != std::numeric_limits<Money>::min()) ? below : (tied ? focal_bid : Money{0});
    return out;
}

}  // namespace bidshade
