#include "bidshade/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <memory>
#include <sstream>

#include "json.hpp"

namespace bidshade {

// --------------------------------------------------------------- surplus (S)

std::vector<SurplusSample> surplus_samples(const std::vector<AuctionRecord>& records,
                                           const SlotFactorTable& factors) {
    std::vector<SurplusSample> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        SurplusSample s;
        s.auction_id = r.auction_id;
        s.scene_id = r.scene_id;
        s.won = r.outcome.won;
        s.slot_won = r.outcome.slot_won;
        s.original_slot = r.original_slot;
        if (r.outcome.won) {
            if (r.original_slot == 0)
                throw DataError("surplus: record " + std::to_string(r.auction_id) +
                                " won with a losing unshaded bid (non-monotone auction?)");
            const double margin =
                r.mu0 * money_units(r.value) - money_units(r.outcome.cost);
            const double u_orig_ps = factors.at(r.original_slot, r.scene_id);
            const double u_post_ps = factors.at(r.outcome.slot_won, r.scene_id);
            s.s_ps = margin * r.upstream_pctr * u_post_ps / u_orig_ps;
            const double u_orig_p = factors.at_pos(r.original_slot);
            const double u_post_p = factors.at_pos(r.outcome.slot_won);
            s.s_p = margin * r.upstream_pctr * u_post_p / u_orig_p;
        }
        out.push_back(s);
    }
    return out;
}

Replay replay_policy(const LandscapeSpec& spec, const BiddingPolicy& policy, double mu0,
                     std::int64_t n_auctions, std::uint64_t seed, const SlotFactorTable& factors,
                     int threads) {
    Replay replay;
    replay.ds = generate_dataset(spec, policy, mu0, n_auctions, seed, threads);
    replay.samples = surplus_samples(replay.ds.records, factors);
    return replay;
}

double surplus_metric(const std::vector<SurplusSample>& samples, SurplusVariant variant) {
    if (samples.empty()) throw DataError("surplus_metric: no samples");
    double total = 0.0;
    for (const auto& s : samples)
        total += (variant == SurplusVariant::kPositionScene) ? s.s_ps : s.s_p;
    return total * 1000.0 / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------- PCOC

double pcoc(const std::vector<AuctionRecord>& records,
            const std::function<double(const AuctionRecord&)>& pctr_source) {
    double pred = 0.0;
    std::int64_t won = 0, clicked = 0;
    for (const auto& r : records) {
        if (!r.outcome.won) continue;
        pred += pctr_source(r);
        ++won;
        clicked += r.clicked ? 1 : 0;
    }
    if (won == 0) throw DataError("pcoc: no won records");
    if (clicked == 0) throw DataError("pcoc: zero clicks, empirical CTR undefined");
    const double empirical = static_cast<double>(clicked) / static_cast<double>(won);
    return (pred / static_cast<double>(won)) / empirical;
}

std::function<double(const AuctionRecord&)> upstream_pctr_source() {
    return [](const AuctionRecord& r) { return r.upstream_pctr; };
}

std::function<double(const AuctionRecord&)> calibrated_pctr_source(const CalibrationModel& calib) {
    return [model = &calib, tape = std::make_shared<Tape>()](const AuctionRecord& r) {
        return model->pctr(r.features, money_units(r.shaded_bid), r.upstream_pctr, *tape);
    };
}

double mean_true_expected_surplus(const LandscapeSpec& spec,
                                  const std::vector<AuctionRecord>& records) {
    if (records.empty()) throw DataError("mean_true_expected_surplus: no records");
    double total = 0.0;
    for (const auto& r : records) {
        const int bucket = spec.bucket_of(r.features);
        const double b = money_units(r.shaded_bid);
        const double mu0v = r.mu0 * money_units(r.value);
        const double p_win = spec.win_prob(r.scene_id, bucket, b);
        const double cost = spec.expected_cost_exact(r.scene_id, bucket, b);
        total += (mu0v * p_win - cost) * r.upstream_pctr;
    }
    return total / static_cast<double>(records.size());
}

// -------------------------------------------------------------- eval reports

PolicyEval evaluate_policy(const std::string& name, const Replay& replay,
                           const std::function<double(const AuctionRecord&)>& pctr_source) {
    const auto& records = replay.ds.records;
    if (records.empty()) throw DataError("evaluate_policy: empty replay");
    PolicyEval row;
    row.policy = name;
    row.surplus_ps = surplus_metric(replay.samples, SurplusVariant::kPositionScene);
    row.surplus_p = surplus_metric(replay.samples, SurplusVariant::kPosition);
    std::int64_t won = 0;
    for (const auto& r : records) won += r.outcome.won ? 1 : 0;
    row.win_rate = static_cast<double>(won) / static_cast<double>(records.size());
    const double scale = 1000.0 / static_cast<double>(records.size());
    for (const auto& s : replay.samples) {
        if (!s.won) continue;
        row.surplus_ps_by_slot[s.slot_won] += s.s_ps * scale;
        row.surplus_ps_by_scene[s.scene_id] += s.s_ps * scale;
    }
    if (pctr_source) row.pcoc = pcoc(records, pctr_source);
    return row;
}

namespace {

nlohmann::json breakdown_json(const std::map<int, double>& m) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : m) j[std::to_string(k)] = v;
    return j;
}

}  // namespace

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["landscape_fingerprint"] = landscape_fingerprint;
    j["seed"] = seed;
    j["n_auctions"] = n_auctions;
    j["mu0"] = mu0;
    j["threads"] = threads;
    nlohmann::json rows_json = nlohmann::json::array();
    for (const auto& row : rows) {
        nlohmann::json r;
        r["policy"] = row.policy;
        r["surplus_ps_per_1000"] = row.surplus_ps;
        r["surplus_p_per_1000"] = row.surplus_p;
        r["win_rate"] = row.win_rate;
        if (row.pcoc) r["pcoc"] = *row.pcoc;
        else r["pcoc"] = nullptr;
        r["surplus_ps_by_slot"] = breakdown_json(row.surplus_ps_by_slot);
        r["surplus_ps_by_scene"] = breakdown_json(row.surplus_ps_by_scene);
        rows_json.push_back(r);
    }
    j["rows"] = rows_json;
    return j.dump(2);
}

std::string EvalReport::to_text() const {
    std::ostringstream out;
    out << std::left << std::setw(22) << "policy" << std::right << std::setw(16)
        << "surplus(P&S)/1k" << std::setw(14) << "surplus(P)/1k" << std::setw(10) << "win_rate"
        << std::setw(10) << "pcoc" << '\n';
    out << std::string(72, '-') << '\n';
    out << std::fixed;
    for (const auto& row : rows) {
        out << std::left << std::setw(22) << row.policy << std::right << std::setprecision(4)
            << std::setw(16) << row.surplus_ps << std::setw(14) << row.surplus_p
            << std::setprecision(4) << std::setw(10) << row.win_rate;
        if (row.pcoc)
            out << std::setprecision(4) << std::setw(10) << *row.pcoc;
        else
            out << std::setw(10) << "-";
        out << '\n';
    }
    return out.str();
}

std::string EvalReport::breakdown_csv() const {
    std::ostringstream out;
    out << "policy,dimension,key,surplus_ps_per_1000\n";
    for (const auto& row : rows) {
        for (const auto& [slot, v] : row.surplus_ps_by_slot)
            out << row.policy << ",slot," << slot << ',' << v << '\n';
        for (const auto& [scene, v] : row.surplus_ps_by_scene)
            out << row.policy << ",scene," << scene << ',' << v << '\n';
    }
    return out.str();
}

void require_same_landscape(const MebsBundle& bundle, const LandscapeSpec& spec) {
    if (bundle.landscape_fingerprint != spec.fingerprint())
        throw DataError("bundle landscape fingerprint " + hex64(bundle.landscape_fingerprint) +
                        " does not match evaluation landscape " + hex64(spec.fingerprint()));
}

// ------------------------------------------------------------- Theorem audit

namespace {

// Single ascending-then-descending run, with tolerance for float noise.
bool scan_is_unimodal(const std::vector<double>& s) {
    double peak = 0.0;
    for (double v : s) peak = std::max(peak, std::abs(v));
    const double tol = peak * 1e-12 + 1e-300;
    bool falling = false;
    for (std::size_t i = 1; i < s.size(); ++i) {
        const double d = s[i] - s[i - 1];
        if (!falling && d < -tol) falling = true;
        else if (falling && d > tol) return false;
    }
    return true;
}

}  // namespace

std::string TheoremReport::to_json() const {
    nlohmann::json j;
    j["samples"] = samples;
    j["resolution"] = resolution;
    j["mu0_grid"] = mu0_grid;
    j["scans"] = scans;
    j["unimodal_violations"] = unimodal_violations;
    j["plateaus"] = plateaus;
    j["bid_monotone_violations"] = bid_monotone_violations;
    j["cumulative_cost"] = cumulative_cost;
    j["cost_strictly_increasing"] = cost_strictly_increasing;
    j["budget_checked"] = budget_checked;
    if (budget_checked) {
        j["budget_units"] = budget_units;
        j["mu0_star"] = mu0_star;
        j["cost_at_star"] = cost_at_star;
        j["residual_frac"] = residual_frac;
        j["budget_within_tol"] = budget_within_tol;
    }
    j["pass"] = pass();
    return j.dump(2);
}

TheoremReport verify_theorem(const LandscapeSpec& spec, const std::vector<double>& mu0_grid,
                             int n_samples, std::uint64_t seed, int resolution, double rcb,
                             const BudgetCheck* budget) {
    if (mu0_grid.empty()) throw UsageError("verify_theorem: empty mu0 grid");
    if (n_samples < 1) throw UsageError("verify_theorem: need at least one sample");
    TheoremReport report;
    report.samples = n_samples;
    report.resolution = resolution;
    report.mu0_grid = mu0_grid;
    std::sort(report.mu0_grid.begin(), report.mu0_grid.end());
    report.cumulative_cost.assign(report.mu0_grid.size(), 0.0);

    Rng rng(mix_seed(seed, 0x7e04e3));
    for (int i = 0; i < n_samples; ++i) {
        const FeatureVec x = spec.sample_features(rng);
        const int scene = spec.scene_of(x);
        const int bucket = spec.bucket_of(x);
        const double value = spec.sample_value(scene, rng);

        Money prev_bid = 0;
        double prev_mu0v = 0.0;
        for (std::size_t m = 0; m < report.mu0_grid.size(); ++m) {
            const double mu0v = report.mu0_grid[m] * value;
            const OracleScan scan = oracle_optimal_bid(spec, x, mu0v, resolution, rcb);
            ++report.scans;
            if (!scan_is_unimodal(scan.surplus)) ++report.unimodal_violations;
            if (scan.plateau) ++report.plateaus;
            if (m > 0) {
                // Allow one grid step of slack on each scan's discretization.
                const Money slack =
                    to_money(mu0v / resolution) + to_money(prev_mu0v / resolution);
                if (scan.best_bid + slack < prev_bid) ++report.bid_monotone_violations;
            }
            prev_bid = scan.best_bid;
            prev_mu0v = mu0v;
            // Expected spend when bidding the unshaded mu0*V (pacing curve).
            report.cumulative_cost[m] += spec.expected_cost_exact(scene, bucket, mu0v);
        }
    }

    report.cost_strictly_increasing = true;
    for (std::size_t m = 1; m < report.cumulative_cost.size(); ++m)
        if (!(report.cumulative_cost[m] > report.cumulative_cost[m - 1]))
            report.cost_strictly_increasing = false;

    if (budget) {
        if (!budget->replay || !budget->wr || !budget->rcb)
            throw UsageError("verify_theorem: incomplete budget check inputs");
        const SolverReport sol =
            solve_mu0(*budget->replay, budget->budget, ratio_policy_fn(1.0), *budget->wr,
                      budget->calib, *budget->rcb, budget->bracket, budget->tol);
        report.budget_checked = true;
        report.budget_units = money_units(budget->budget);
        report.mu0_star = sol.mu0_star;
        report.cost_at_star = sol.cost_units;
        report.residual_frac = sol.residual_frac;
        report.budget_within_tol = sol.residual_frac <= budget->tol + 1e-12;
    }
    return report;
}

// ------------------------------------------------------------ inference bench

BenchReport bench_inference(std::int64_t batch, int repetitions,
                            const std::vector<BenchPolicy>& policies) {
    if (batch < 1) throw UsageError("bench_inference: empty batch");
    if (repetitions < 1) throw UsageError("bench_inference: need at least one repetition");
    using clock = std::chrono::steady_clock;
    BenchReport report;
    report.batch = batch;
    report.repetitions = repetitions;
    report.threads = 1;
    for (const auto& policy : policies) {
        BenchRow row;
        row.policy = policy.name;
        // Warm-up pass, untimed.
        for (std::int64_t i = 0; i < batch; ++i) {
            policy.model_step(static_cast<std::size_t>(i));
            if (policy.search_step) policy.search_step(static_cast<std::size_t>(i));
        }
        for (int rep = 0; rep < repetitions; ++rep) {
            const auto t0 = clock::now();
            for (std::int64_t i = 0; i < batch; ++i)
                policy.model_step(static_cast<std::size_t>(i));
            const auto t1 = clock::now();
            row.model_seconds += std::chrono::duration<double>(t1 - t0).count();
            if (policy.search_step) {
                for (std::int64_t i = 0; i < batch; ++i)
                    policy.search_step(static_cast<std::size_t>(i));
                row.search_seconds += std::chrono::duration<double>(clock::now() - t1).count();
            }
        }
        row.model_seconds /= repetitions;
        row.search_seconds /= repetitions;
        report.rows.push_back(row);
    }
    return report;
}

std::string BenchReport::to_json() const {
    nlohmann::json j;
    j["batch"] = batch;
    j["repetitions"] = repetitions;
    j["threads"] = threads;
    nlohmann::json rows_json = nlohmann::json::array();
    for (const auto& row : rows)
        rows_json.push_back({{"policy", row.policy},
                             {"model_seconds", row.model_seconds},
                             {"search_seconds", row.search_seconds},
                             {"total_seconds", row.total_seconds()}});
    j["rows"] = rows_json;
    return j.dump(2);
}

std::string BenchReport::to_text() const {
    std::ostringstream out;
    out << "batch=" << batch << " repetitions=" << repetitions << " threads=" << threads << '\n';
    out << std::left << std::setw(22) << "policy" << std::right << std::setw(14) << "model_s"
        << std::setw(14) << "search_s" << std::setw(14) << "total_s" << '\n';
    out << std::string(64, '-') << '\n';
    out << std::fixed << std::setprecision(6);
    for (const auto& row : rows)
        out << std::left << std::setw(22) << row.policy << std::right << std::setw(14)
            << row.model_seconds << std::setw(14) << row.search_seconds << std::setw(14)
            << row.total_seconds() << '\n';
    return out.str();
}

std::vector<BenchPolicy> make_bench_policies(const std::vector<AuctionRecord>& records,
                                             const ShadingModel* mebs, const SrrModel* srr,
                                             const WinPriceDistModel* tsbs,
                                             const CalibrationModel* tsbs_calib,
                                             const NpmTable* npm, double rcb, int grid_size,
                                             double r_min) {
    if (records.empty()) throw UsageError("make_bench_policies: no records");
    const std::size_t n = records.size();
    std::vector<BenchPolicy> out;

    if (mebs) {
        auto scratch = std::make_shared<std::pair<Tape, double>>();
        out.push_back({"mebs",
                       [=, &recs = records](std::size_t i) {
                           const AuctionRecord& r = recs[i % n];
                           scratch->second += mebs->ratio(r.features,
                                                          money_units(r.unshaded_bid),
                                                          scratch->first);
                       },
                       nullptr});
    }
    if (srr) {
        auto scratch = std::make_shared<std::pair<Tape, double>>();
        out.push_back({"srr",
                       [=, &recs = records](std::size_t i) {
                           const AuctionRecord& r = recs[i % n];
                           scratch->second += srr->ratio(r.features,
                                                         money_units(r.unshaded_bid),
                                                         scratch->first);
                       },
                       nullptr});
    }
    if (tsbs) {
        struct TsbsScratch {
            Tape dist_tape, calib_tape;
            std::vector<std::vector<double>> probs;
            double sink = 0.0;
        };
        auto scratch = std::make_shared<TsbsScratch>();
        scratch->probs.resize(n);
        out.push_back(
            {"tsbs",
             [=, &recs = records](std::size_t i) {
                 const AuctionRecord& r = recs[i % n];
                 scratch->probs[i % n] = tsbs->grid_probs(r.features, scratch->dist_tape);
             },
             [=, &recs = records](std::size_t i) {
                 const AuctionRecord& r = recs[i % n];
                 const std::vector<Money> candidates =
                     tsbs_candidates(r.unshaded_bid, r_min, grid_size);
                 const std::vector<double>& probs = scratch->probs[i % n];
                 const TsbsResult res = tsbs_search(
                     candidates, [&](double b) { return tsbs->win_prob_at(b, probs); },
                     [&](double b) {
                         return tsbs_calib ? tsbs_calib->pctr(r.features, b, r.upstream_pctr,
                                                              scratch->calib_tape)
                                           : r.upstream_pctr;
                     },
                     r.mu0 * money_units(r.value), rcb);
                 scratch->sink += static_cast<double>(res.bid);
             }});
    }
    if (npm) {
        auto scratch = std::make_shared<double>(0.0);
        out.push_back({"npm",
                       [=, &recs = records](std::size_t i) {
                           const AuctionRecord& r = recs[i % n];
                           *scratch += static_cast<double>(shade_npm(*npm, r.features,
                                                                     r.unshaded_bid));
                       },
                       nullptr});
    }
    return out;
}

}  // namespace bidshade
