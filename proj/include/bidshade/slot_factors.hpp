#pragma once
// Empirical per-position CTR factors estimated from won impressions, with
// (position, scene) cells falling back to position-only cells (then to the
// global CTR) below the support threshold. Laplace-smoothed so every entry
// stays inside (0,1).

#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "bidshade/dataset.hpp"

namespace bidshade {

struct SlotFactorTable {
    struct Cell {
        std::int64_t shown = 0;
        std::int64_t clicked = 0;

        double ctr() const {
            return (static_cast<double>(clicked) + 1.0) / (static_cast<double>(shown) + 2.0);
        }
    };

    int min_support = 50;
    std::map<int, Cell> by_pos;
    std::map<std::pair<int, int>, Cell> by_pos_scene;
    Cell global;

    // Position-only factor (the Surplus(P) variant).
    double at_pos(int pos) const {
        const auto it = by_pos.find(pos);
        if (it != by_pos.end() && it->second.shown >= min_support) return it->second.ctr();
        return global.ctr();
    }

    // (position, scene) factor with fallback (the Surplus(P&S) variant).
    double at(int pos, int scene) const {
        const auto it = by_pos_scene.find({pos, scene});
        if (it != by_pos_scene.end() && it->second.shown >= min_support) return it->second.ctr();
        return at_pos(pos);
    }

    // Highest position observed for a scene (the wp anchor slot).
    int last_slot(int scene) const {
        int last = 1;
        for (const auto& [key, cell] : by_pos_scene)
            if (key.second == scene && key.first > last) last = key.first;
        return last;
    }
};

inline SlotFactorTable build_slot_factors(const std::vector<AuctionRecord>& records,
                                          int min_support = 50) {
    SlotFactorTable table;
    table.min_support = min_support;
    for (const auto& r : records) {
        if (!r.outcome.won) continue;
        const std::int64_t c = r.clicked ? 1 : 0;
        auto& pos = table.by_pos[r.outcome.slot_won];
        ++pos.shown;
        pos.clicked += c;
        auto& ps = table.by_pos_scene[{r.outcome.slot_won, r.scene_id}];
        ++ps.shown;
        ps.clicked += c;
        ++table.global.shown;
        table.global.clicked += c;
    }
    return table;
}

}  // namespace bidshade
