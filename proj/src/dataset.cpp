#include "bidshade/dataset.hpp"

#include <algorithm>
#include <fstream>

#include "bidshade/parallel.hpp"
#include "json.hpp"

namespace bidshade {

namespace {
constexpr std::uint64_t kClickSalt = 0xc11c4a11dull;
}

BiddingPolicy unshaded_policy() {
    return [](const BidRequest& req) { return req.unshaded_bid; };
}

BiddingPolicy fixed_ratio_policy(double ratio) {
    return [ratio](const BidRequest& req) {
        return to_money(ratio * money_units(req.unshaded_bid));
    };
}

BiddingPolicy explore_policy(double r_min, std::uint64_t seed) {
    constexpr std::uint64_t kExploreSalt = 0xeb1043ull;
    return [r_min, seed](const BidRequest& req) {
        Rng rng(mix_seed(seed ^ kExploreSalt, static_cast<std::uint64_t>(req.auction_id)));
        return to_money(rng.uniform(r_min, 1.0) * money_units(req.unshaded_bid));
    };
}

AuctionRecord sample_auction(const LandscapeSpec& spec, const BiddingPolicy& policy, double mu0,
                             std::uint64_t seed, std::int64_t auction_id, bool* rejected) {
    if (rejected) *rejected = false;
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(auction_id)));

    AuctionRecord rec;
    rec.auction_id = auction_id;
    rec.features = spec.sample_features(rng);
    rec.scene_id = spec.scene_of(rec.features);
    rec.mu0 = mu0;
    rec.value = std::max<Money>(1, to_money(spec.sample_value(rec.scene_id, rng)));
    rec.upstream_pctr = spec.sample_upstream_pctr(rec.features, rng);

    std::vector<Money> competitors;
    spec.sample_competitors(rec.scene_id, spec.bucket_of(rec.features), rng, competitors);

    rec.unshaded_bid = std::max<Money>(1, to_money(mu0 * money_units(rec.value)));
    Money bid = policy(BidRequest{auction_id, &rec.features, rec.scene_id, rec.value, mu0,
                                  rec.unshaded_bid, rec.upstream_pctr});
    if (bid <= 0) {
        if (rejected) *rejected = true;
        return rec;
    }
    rec.shaded_bid = std::min(bid, rec.unshaded_bid);

    const SlotProfile& profile = spec.scene(rec.scene_id).profile;
    rec.outcome = run_auction(rec.shaded_bid, competitors, profile);
    rec.original_slot = run_auction(rec.unshaded_bid, competitors, profile).slot_won;

    if (rec.outcome.won) {
        // Click randomness lives on its own stream so replays with different
        // bids (hence different slots) stay paired on the same draw.
        Rng click(mix_seed(seed ^ kClickSalt, static_cast<std::uint64_t>(auction_id)));
        const double u = spec.scene(rec.scene_id)
                             .profile.ctr_factors[static_cast<std::size_t>(rec.outcome.slot_won - 1)];
        rec.clicked = click.uniform() < spec.teacher_q(rec.features) * u;
    }
    return rec;
}

DatasetMeta compute_meta(const std::vector<AuctionRecord>& records, std::uint64_t seed,
                         std::int64_t rejected) {
    DatasetMeta meta;
    meta.n = static_cast<std::int64_t>(records.size());
    meta.seed = seed;
    meta.rejected = rejected;
    for (const auto& r : records) {
        if (winnable(r)) ++meta.n_plus;
        if (r.outcome.won) ++meta.n_won;
        if (r.clicked) ++meta.n_clicked;
    }
    return meta;
}

Dataset generate_dataset(const LandscapeSpec& spec, const BiddingPolicy& policy, double mu0,
                         std::int64_t n_auctions, std::uint64_t seed, int threads) {
    if (n_auctions < 1) throw ConfigError("generate_dataset: n_auctions must be >= 1");
    spec.validate();

    std::vector<AuctionRecord> records(static_cast<std::size_t>(n_auctions));
    std::vector<unsigned char> keep(static_cast<std::size_t>(n_auctions), 0);
    parallel_for(n_auctions, threads, [&](std::int64_t i) {
        bool rejected = false;
        records[static_cast<std::size_t>(i)] = sample_auction(spec, policy, mu0, seed, i, &rejected);
        keep[static_cast<std::size_t>(i)] = rejected ? 0 : 1;
    });

    Dataset ds;
    ds.records.reserve(records.size());
    std::int64_t rejected = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (keep[i])
            ds.records.push_back(std::move(records[i]));
        else
            ++rejected;
    }
    ds.meta = compute_meta(ds.records, seed, rejected);
    return ds;
}

Dataset generate_dataset_serial(const LandscapeSpec& spec, const BiddingPolicy& policy, double mu0,
                                std::int64_t n_auctions, std::uint64_t seed) {
    if (n_auctions < 1) throw ConfigError("generate_dataset: n_auctions must be >= 1");
    spec.validate();
    Dataset ds;
    ds.records.reserve(static_cast<std::size_t>(n_auctions));
    std::int64_t rejected = 0;
    for (std::int64_t i = 0; i < n_auctions; ++i) {
        bool rej = false;
        AuctionRecord rec = sample_auction(spec, policy, mu0, seed, i, &rej);
        if (rej)
            ++rejected;
        else
            ds.records.push_back(std::move(rec));
    }
    ds.meta = compute_meta(ds.records, seed, rejected);
    return ds;
}

// ------------------------------------------------------------------- file I/O

void write_dataset(const Dataset& ds, const FeatureSchema& schema,
                   std::uint64_t landscape_fingerprint, const std::string& data_path,
                   const std::string& meta_path) {
    std::ofstream out(data_path);
    if (!out) throw DataError("cannot write " + data_path);
    for (const auto& r : ds.records) {
        if (r.features.size() != schema.fields.size())
            throw DataError("write_dataset: record does not match schema");
        nlohmann::json j;
        j["auction_id"] = r.auction_id;
        nlohmann::json feats;
        for (std::size_t f = 0; f < r.features.size(); ++f) feats[schema.fields[f].name] = r.features[f];
        j["features"] = feats;
        j["scene_id"] = r.scene_id;
        j["value"] = r.value;
        j["mu0"] = r.mu0;
        j["unshaded_bid"] = r.unshaded_bid;
        j["shaded_bid"] = r.shaded_bid;
        j["upstream_pctr"] = r.upstream_pctr;
        j["won"] = r.outcome.won;
        j["slot_won"] = r.outcome.won ? nlohmann::json(r.outcome.slot_won) : nlohmann::json(nullptr);
        j["cost"] = r.outcome.won ? nlohmann::json(r.outcome.cost) : nlohmann::json(nullptr);
        j["wp"] = r.outcome.min_win_price;
        j["original_slot"] =
            r.original_slot > 0 ? nlohmann::json(r.original_slot) : nlohmann::json(nullptr);
        j["clicked"] = r.clicked;
        out << j.dump() << '\n';
    }
    if (!out) throw DataError("write failed for " + data_path);
    out.close();

    std::ofstream mout(meta_path);
    if (!mout) throw DataError("cannot write " + meta_path);
    nlohmann::json m;
    m["n"] = ds.meta.n;
    m["n_plus"] = ds.meta.n_plus;
    m["n_won"] = ds.meta.n_won;
    m["n_clicked"] = ds.meta.n_clicked;
    m["rejected"] = ds.meta.rejected;
    m["seed"] = ds.meta.seed;
    m["landscape_fingerprint"] = hex64(landscape_fingerprint);
    mout << m.dump(2) << '\n';
    if (!mout) throw DataError("write failed for " + meta_path);
}

Dataset read_dataset(const std::string& data_path, const FeatureSchema& schema) {
    std::ifstream in(data_path);
    if (!in) throw DataError("cannot read " + data_path);
    Dataset ds;
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(data_path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        try {
            AuctionRecord r;
            r.auction_id = j.at("auction_id").get<std::int64_t>();
            const auto& feats = j.at("features");
            r.features.resize(schema.fields.size());
            for (std::size_t f = 0; f < schema.fields.size(); ++f)
                r.features[f] = feats.at(schema.fields[f].name).get<int>();
            r.scene_id = j.at("scene_id").get<int>();
            r.value = j.at("value").get<Money>();
            r.mu0 = j.at("mu0").get<double>();
            r.unshaded_bid = j.at("unshaded_bid").get<Money>();
            r.shaded_bid = j.at("shaded_bid").get<Money>();
            r.upstream_pctr = j.at("upstream_pctr").get<double>();
            r.outcome.won = j.at("won").get<bool>();
            r.outcome.slot_won = j.at("slot_won").is_null() ? 0 : j.at("slot_won").get<int>();
            r.outcome.cost = j.at("cost").is_null() ? 0 : j.at("cost").get<Money>();
            r.outcome.min_win_price = j.at("wp").get<Money>();
            r.original_slot = j.at("original_slot").is_null() ? 0 : j.at("original_slot").get<int>();
            r.clicked = j.at("clicked").get<bool>();
            ds.records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(data_path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    ds.meta = compute_meta(ds.records, 0, 0);
    return ds;
}

DatasetMeta read_meta(const std::string& meta_path, std::uint64_t* landscape_fingerprint) {
    std::ifstream in(meta_path);
    if (!in) throw DataError("cannot read " + meta_path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(meta_path + ": " + e.what());
    }
    DatasetMeta meta;
    try {
        meta.n = j.at("n").get<std::int64_t>();
        meta.n_plus = j.at("n_plus").get<std::int64_t>();
        meta.n_won = j.at("n_won").get<std::int64_t>();
        meta.n_clicked = j.at("n_clicked").get<std::int64_t>();
        meta.rejected = j.at("rejected").get<std::int64_t>();
        meta.seed = j.at("seed").get<std::uint64_t>();
        if (landscape_fingerprint) {
            const std::string hex = j.at("landscape_fingerprint").get<std::string>();
            *landscape_fingerprint = std::stoull(hex, nullptr, 16);
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(meta_path + ": " + e.what());
    }
    return meta;
}

}  // namespace bidshade
