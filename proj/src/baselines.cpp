#include "bidshade/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"

namespace bidshade {

namespace {

std::vector<std::int64_t> winnable_indices(const std::vector<AuctionRecord>& records) {
    std::vector<std::int64_t> idx;
    for (std::size_t i = 0; i < records.size(); ++i)
        if (winnable(records[i])) idx.push_back(static_cast<std::int64_t>(i));
    return idx;
}

}  // namespace

// ----------------------------------------------------------------------- SRR

double SrrModel::ratio(const FeatureVec& x, double unshaded_units, Tape& tape) const {
    const double nums[1] = {unshaded_units};
    return r_min + (1.0 - r_min) * sigmoid(net.logit1(x.data(), nums, tape));
}

SrrModel train_srr(const std::vector<AuctionRecord>& records, const FeatureSchema& schema,
                   const MebsHyper& hyper, StageReport* report) {
    const std::vector<std::int64_t> idx = winnable_indices(records);
    if (idx.empty()) throw TrainError("train_srr: no winnable records");

    std::vector<double> unshaded;
    unshaded.reserve(idx.size());
    for (std::int64_t i : idx)
        unshaded.push_back(money_units(records[static_cast<std::size_t>(i)].unshaded_bid));

    ModelConfig cfg;
    cfg.fields = schema.fields;
    cfg.numerics = {fit_numeric("unshaded_bid", NumericTransform::kLog1p, unshaded)};
    cfg.embed_dim = hyper.embed_dim;
    cfg.hidden = hyper.hidden;

    SrrModel srr{BaseModel(cfg, nullptr, mix_seed(hyper.shading.seed, 0x55a1)), hyper.r_min};
    TrainDriver driver(srr.net, hyper.shading);
    StageReport stage = driver.run(
        static_cast<std::int64_t>(idx.size()),
        [&](std::int64_t k, Tape& tape, double* dlogits) {
            const AuctionRecord& r =
                records[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])];
            const double nums[1] = {money_units(r.unshaded_bid)};
            const double z = srr.net.logit1(r.features.data(), nums, tape);
            const double s = sigmoid(z);
            const double ratio = srr.r_min + (1.0 - srr.r_min) * s;
            const double label = std::clamp(static_cast<double>(r.outcome.min_win_price) /
                                                static_cast<double>(r.unshaded_bid),
                                            srr.r_min, 1.0);
            const double diff = ratio - label;
            dlogits[0] = 2.0 * diff * (1.0 - srr.r_min) * s * (1.0 - s);
            return diff * diff;
        });
    if (report) *report = stage;
    srr.net.embedding()->frozen = true;
    return srr;
}

Money shade_srr(const SrrModel& model, const FeatureVec& x, Money unshaded_bid) {
    if (unshaded_bid <= 0) throw ConfigError("shade_srr: unshaded bid must be positive");
    Tape tape;
    const double r = model.ratio(x, money_units(unshaded_bid), tape);
    return std::clamp<Money>(to_money(r * money_units(unshaded_bid)), 1, unshaded_bid);
}

void save_srr(const SrrModel& model, const std::string& path) {
    nlohmann::json extra = {{"r_min", model.r_min}};
    save_checkpoint(model.net, "srr", extra.dump(), path);
}

SrrModel load_srr(const std::string& path) {
    LoadedCheckpoint ck = load_checkpoint(path);
    if (ck.model_kind != "srr") throw DataError(path + ": unexpected model kind");
    double r_min = 0.1;
    try {
        r_min = nlohmann::json::parse(ck.extra_json).at("r_min").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
    return SrrModel{std::move(*ck.model), r_min};
}

// ---------------------------------------------------------------------- TSBS

std::vector<double> WinPriceDistModel::grid_probs(const FeatureVec& x, Tape& tape) const {
    net.forward(x.data(), nullptr, tape);
    std::vector<double> probs(tape.logits.size());
    for (std::size_t g = 0; g < probs.size(); ++g) probs[g] = sigmoid(tape.logits[g]);
    return probs;
}

double WinPriceDistModel::win_prob_at(double bid_units, const std::vector<double>& probs) const {
    if (bid_units <= grid.front()) return probs.front();
    if (bid_units >= grid.back()) return probs.back();
    const auto hi = std::upper_bound(grid.begin(), grid.end(), bid_units);
    const std::size_t j = static_cast<std::size_t>(hi - grid.begin());
    const double t = (bid_units - grid[j - 1]) / (grid[j] - grid[j - 1]);
    return probs[j - 1] + (probs[j] - probs[j - 1]) * t;
}

WinPriceDistModel train_tsbs(const std::vector<AuctionRecord>& records,
                             const FeatureSchema& schema, const MebsHyper& hyper, int grid_size,
                             StageReport* report) {
    if (records.empty()) throw TrainError("train_tsbs: empty dataset");
    if (grid_size < 2) throw UsageError("train_tsbs: grid_size must be >= 2");

    std::vector<double> wp(records.size());
    for (std::size_t i = 0; i < records.size(); ++i)
        wp[i] = money_units(records[i].outcome.min_win_price);
    std::vector<double> sorted = wp;
    std::sort(sorted.begin(), sorted.end());
    const auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(sorted.size() - 1);
        const std::size_t j = static_cast<std::size_t>(pos);
        const std::size_t j1 = std::min(j + 1, sorted.size() - 1);
        return sorted[j] + (sorted[j1] - sorted[j]) * (pos - static_cast<double>(j));
    };
    const double lo = std::max(quantile(0.01), 1e-3);
    const double hi = quantile(0.99);
    if (!(hi > lo)) throw DataError("train_tsbs: degenerate win-price distribution");

    std::vector<double> grid(static_cast<std::size_t>(grid_size));
    for (int g = 0; g < grid_size; ++g)
        grid[static_cast<std::size_t>(g)] =
            std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * g / (grid_size - 1));

    ModelConfig cfg;
    cfg.fields = schema.fields;
    cfg.embed_dim = hyper.embed_dim;
    cfg.hidden = hyper.hidden;
    cfg.heads = grid_size;
    WinPriceDistModel dist{BaseModel(cfg, nullptr, mix_seed(hyper.win_rate.seed, 0x7b5b)),
                           std::move(grid)};

    // Per-head bias starts at the head's own base rate.
    {
        std::vector<double> rate(static_cast<std::size_t>(grid_size), 0.0);
        for (double w : wp)
            for (int g = 0; g < grid_size; ++g)
                rate[static_cast<std::size_t>(g)] += (w <= dist.grid[static_cast<std::size_t>(g)]) ? 1.0 : 0.0;
        for (auto& t : dist.net.tensors())
            if (t.name == "out.b")
                for (int g = 0; g < grid_size; ++g)
                    (*t.data)[static_cast<std::size_t>(g)] = logit(std::clamp(
                        rate[static_cast<std::size_t>(g)] / static_cast<double>(records.size()),
                        1e-4, 1.0 - 1e-4));
    }

    const double head_scale = 1.0 / static_cast<double>(grid_size);
    TrainDriver driver(dist.net, hyper.win_rate);
    StageReport stage = driver.run(
        static_cast<std::int64_t>(records.size()),
        [&](std::int64_t i, Tape& tape, double* dlogits) {
            dist.net.forward(records[static_cast<std::size_t>(i)].features.data(), nullptr, tape);
            double loss = 0.0;
            for (int g = 0; g < grid_size; ++g) {
                const double z = tape.logits[static_cast<std::size_t>(g)];
                const double y =
                    (wp[static_cast<std::size_t>(i)] <= dist.grid[static_cast<std::size_t>(g)])
                        ? 1.0
                        : 0.0;
                dlogits[g] = (sigmoid(z) - y) * head_scale;
                loss += bce_with_logit(z, y) * head_scale;
            }
            return loss;
        });
    if (report) *report = stage;
    dist.net.embedding()->frozen = true;
    return dist;
}

void save_tsbs(const WinPriceDistModel& model, const std::string& path) {
    nlohmann::json extra = {{"grid", model.grid}};
    save_checkpoint(model.net, "tsbs_dist", extra.dump(), path);
}

WinPriceDistModel load_tsbs(const std::string& path) {
    LoadedCheckpoint ck = load_checkpoint(path);
    if (ck.model_kind != "tsbs_dist") throw DataError(path + ": unexpected model kind");
    std::vector<double> grid;
    try {
        grid = nlohmann::json::parse(ck.extra_json).at("grid").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
    if (static_cast<int>(grid.size()) != ck.model->config().heads)
        throw DataError(path + ": grid size does not match head count");
    return WinPriceDistModel{std::move(*ck.model), std::move(grid)};
}

std::vector<Money> tsbs_candidates(Money unshaded_bid, double r_min, int count) {
    if (unshaded_bid <= 0) throw ConfigError("tsbs_candidates: unshaded bid must be positive");
    if (count < 2) throw UsageError("tsbs_candidates: need at least two candidates");
    const Money lo = std::max<Money>(1, to_money(r_min * money_units(unshaded_bid)));
    std::vector<Money> out(static_cast<std::size_t>(count));
    for (int g = 0; g < count; ++g)
        out[static_cast<std::size_t>(g)] =
            lo + static_cast<Money>(std::llround(static_cast<double>(unshaded_bid - lo) *
                                                 static_cast<double>(g) /
                                                 static_cast<double>(count - 1)));
    return out;
}

TsbsResult tsbs_search(const std::vector<Money>& candidates,
                       const std::function<double(double)>& win_prob,
                       const std::function<double(double)>& pctr, double mu0v_units, double rcb) {
    if (candidates.empty()) throw UsageError("tsbs_search: empty candidate grid");
    TsbsResult best;
    best.best_surplus = -std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < candidates.size(); ++g) {
        const double b = money_units(candidates[g]);
        const double surplus = (mu0v_units - rcb * b) * win_prob(b) * pctr(b);
        ++best.forward_passes;
        if (surplus > best.best_surplus) {
            best.best_surplus = surplus;
            best.argmax_index = static_cast<int>(g);
            best.bid = candidates[g];
        }
    }
    return best;
}

TsbsResult infer_tsbs(const WinPriceDistModel& dist, const CalibrationModel* calib,
                      const FeatureVec& x, Money unshaded_bid, double upstream_pctr,
                      double mu0v_units, double rcb, int grid_size, double r_min) {
    const std::vector<Money> candidates = tsbs_candidates(unshaded_bid, r_min, grid_size);
    Tape dist_tape, calib_tape;
    const std::vector<double> probs = dist.grid_probs(x, dist_tape);
    return tsbs_search(
        candidates, [&](double b) { return dist.win_prob_at(b, probs); },
        [&](double b) { return calib ? calib->pctr(x, b, upstream_pctr, calib_tape) : upstream_pctr; },
        mu0v_units, rcb);
}

// ----------------------------------------------------------------------- NPM

double NpmTable::ratio_for(const FeatureVec& x) const {
    std::vector<int> key(field_slots.size());
    for (std::size_t k = 0; k < field_slots.size(); ++k)
        key[k] = x[static_cast<std::size_t>(field_slots[k])];
    const auto it = bins.find(key);
    if (it == bins.end() || it->second.n < min_support) return default_ratio;
    return it->second.ratio;
}

std::string NpmTable::to_json() const {
    nlohmann::json j;
    j["binning_fields"] = binning_fields;
    j["min_support"] = min_support;
    j["default_ratio"] = default_ratio;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& [key, bin] : bins)
        rows.push_back({{"key", key}, {"ratio", bin.ratio}, {"n", bin.n}});
    j["bins"] = rows;
    return j.dump(2);
}

NpmTable NpmTable::from_json(const std::string& text, const FeatureSchema& schema) {
    NpmTable table;
    try {
        const nlohmann::json j = nlohmann::json::parse(text);
        table.binning_fields = j.at("binning_fields").get<std::vector<std::string>>();
        table.min_support = j.at("min_support").get<int>();
        table.default_ratio = j.at("default_ratio").get<double>();
        for (const auto& row : j.at("bins"))
            table.bins[row.at("key").get<std::vector<int>>()] = {
                row.at("ratio").get<double>(), row.at("n").get<std::int64_t>()};
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("npm table: ") + e.what());
    }
    for (const auto& name : table.binning_fields) {
        const int slot = schema.index_of(name);
        if (slot < 0) throw DataError("npm table: unknown binning field '" + name + "'");
        table.field_slots.push_back(slot);
    }
    return table;
}

NpmTable train_npm(const std::vector<AuctionRecord>& records, const FeatureSchema& schema,
                   const std::vector<std::string>& binning_fields, int min_support,
                   const SlotFactorTable& slot_factors, double r_min) {
    NpmTable table;
    table.binning_fields = binning_fields;
    table.min_support = min_support;
    for (const auto& name : binning_fields) {
        const int slot = schema.index_of(name);
        if (slot < 0) throw ConfigError("train_npm: unknown binning field '" + name + "'");
        table.field_slots.push_back(slot);
    }

    // Candidate ratio ladder r_min, r_min+0.05, ..., 1.0 (exact hundredths).
    std::vector<double> ratios;
    for (int c = static_cast<int>(std::llround(r_min * 100.0)); c <= 100; c += 5)
        ratios.push_back(static_cast<double>(c) / 100.0);
    const std::size_t n_ratio = ratios.size();

    // Counterfactual surplus of one logged record at a candidate bid, from
    // logged quantities only: win flag from the logged minimum winning price,
    // cost capped by the logged clearing price (exact whenever the lower bid
    // still clears it), and the position factor interpolated between the wp
    // anchor (last slot) and the originally won slot.
    const auto surplus_at = [&](const AuctionRecord& r, double rho) {
        const Money bid = std::clamp<Money>(to_money(rho * money_units(r.unshaded_bid)), 1,
                                            r.unshaded_bid);
        if (bid < r.outcome.min_win_price) return 0.0;
        const double b = money_units(bid);
        const double cost_cap =
            r.outcome.won ? money_units(r.outcome.cost) : std::numeric_limits<double>::infinity();
        const double cost = std::min(b, cost_cap);
        const double u_orig = slot_factors.at(r.original_slot, r.scene_id);
        const double u_last = slot_factors.at(slot_factors.last_slot(r.scene_id), r.scene_id);
        const double wp = money_units(r.outcome.min_win_price);
        const double unshaded = money_units(r.unshaded_bid);
        const double t =
            (unshaded > wp) ? std::clamp((b - wp) / (unshaded - wp), 0.0, 1.0) : 1.0;
        const double u_cf = u_last + (u_orig - u_last) * t;
        const double pctr = r.upstream_pctr * u_cf / u_orig;
        const double mu0v = r.mu0 * money_units(r.value);
        return (mu0v - cost) * pctr;
    };

    std::map<std::vector<int>, std::vector<double>> sums;
    std::map<std::vector<int>, std::int64_t> counts;
    std::vector<double> global_sum(n_ratio, 0.0);
    std::int64_t global_n = 0;
    std::vector<int> key(table.field_slots.size());
    for (const auto& r : records) {
        if (!winnable(r)) continue;
        for (std::size_t k = 0; k < table.field_slots.size(); ++k)
            key[k] = r.features[static_cast<std::size_t>(table.field_slots[k])];
        auto& bin_sum = sums[key];
        if (bin_sum.empty()) bin_sum.assign(n_ratio, 0.0);
        for (std::size_t j = 0; j < n_ratio; ++j) {
            const double s = surplus_at(r, ratios[j]);
            bin_sum[j] += s;
            global_sum[j] += s;
        }
        ++counts[key];
        ++global_n;
    }
    if (global_n == 0) throw TrainError("train_npm: no winnable records");

    const auto best_ratio = [&](const std::vector<double>& sum) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < n_ratio; ++j)
            if (sum[j] > sum[best]) best = j;  // ties keep the lower ratio
        return ratios[best];
    };
    table.default_ratio = best_ratio(global_sum);
    for (const auto& [k, sum] : sums) table.bins[k] = {best_ratio(sum), counts[k]};
    return table;
}

Money shade_npm(const NpmTable& table, const FeatureVec& x, Money unshaded_bid) {
    if (unshaded_bid <= 0) throw ConfigError("shade_npm: unshaded bid must be positive");
    const double r = table.ratio_for(x);
    return std::clamp<Money>(to_money(r * money_units(unshaded_bid)), 1, unshaded_bid);
}

void save_npm(const NpmTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << table.to_json() << '\n';
}

NpmTable load_npm(const std::string& path, const FeatureSchema& schema) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return NpmTable::from_json(text, schema);
}

// -------------------------------------------------------------------- oracle

OracleScan oracle_optimal_bid(const LandscapeSpec& spec, const FeatureVec& x, double mu0v_units,
                              int resolution, double rcb) {
    if (resolution < 2) throw UsageError("oracle_optimal_bid: resolution must be >= 2");
    if (!(mu0v_units > 0.0)) throw ConfigError("oracle_optimal_bid: non-positive value");
    const int scene = spec.scene_of(x);
    const int bucket = spec.bucket_of(x);
    const double q = spec.teacher_q(x);

    OracleScan scan;
    scan.bids.reserve(static_cast<std::size_t>(resolution));
    scan.surplus.reserve(static_cast<std::size_t>(resolution));
    double best = -std::numeric_limits<double>::infinity();
    for (int i = 1; i <= resolution; ++i) {
        const Money bid = std::max<Money>(
            1, to_money(mu0v_units * static_cast<double>(i) / static_cast<double>(resolution)));
        const double b = money_units(bid);
        const double s = (mu0v_units - rcb * b) * q * spec.expected_u_win(scene, bucket, b);
        scan.bids.push_back(bid);
        scan.surplus.push_back(s);
        if (s > best) {
            best = s;
            scan.argmax = scan.bids.size() - 1;
        }
    }
    scan.best_bid = scan.bids[scan.argmax];
    for (std::size_t i = 0; i < scan.surplus.size(); ++i)
        if (i != scan.argmax && scan.surplus[i] == best) scan.plateau = true;
    return scan;
}

}  // namespace bidshade
