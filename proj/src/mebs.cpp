#include "bidshade/mebs.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace bidshade {

namespace fs = std::filesystem;

// ------------------------------------------------------------- model wrappers

double WinRateModel::prob(const FeatureVec& x, double bid_units, Tape& tape) const {
    const double nums[1] = {bid_units};
    return sigmoid(net.logit1(x.data(), nums, tape));
}

double CalibrationModel::factor(const FeatureVec& x, double bid_units, double upstream,
                                Tape& tape) const {
    const double nums[2] = {bid_units, upstream};
    return net.logit1(x.data(), nums, tape);
}

double CalibrationModel::pctr(const FeatureVec& x, double bid_units, double upstream,
                              Tape& tape) const {
    if (!(upstream > 0.0) || !(upstream < 1.0))
        throw ConfigError("calibrated_pctr: upstream_pctr must lie in (0,1)");
    return sigmoid(factor(x, bid_units, upstream, tape) + logit(upstream));
}

double ShadingModel::ratio(const FeatureVec& x, double unshaded_units, Tape& tape) const {
    const double nums[1] = {unshaded_units};
    return r_min + (1.0 - r_min) * sigmoid(net.logit1(x.data(), nums, tape));
}

double slot_calibrated_pctr(double upstream, double u_target, double u_ref) {
    if (!(u_ref > 0.0)) throw ConfigError("slot_calibrated_pctr: u_ref must be positive");
    return upstream * u_target / u_ref;
}

// -------------------------------------------------------------- cost-bid ratio

double CostBidRatio::at(int scene, int slot) const {
    const auto it = per_slot.find({scene, slot});
    if (it != per_slot.end() && it->second.n >= min_support) return it->second.mean;
    return scene_marginal(scene);
}

double CostBidRatio::scene_marginal(int scene) const {
    const auto it = per_scene.find(scene);
    if (it != per_scene.end() && it->second.n >= min_support) return it->second.mean;
    return global.mean;
}

std::string CostBidRatio::to_json() const {
    nlohmann::json j;
    j["min_support"] = min_support;
    j["global"] = {{"mean", global.mean}, {"n", global.n}};
    nlohmann::json ps = nlohmann::json::object();
    for (const auto& [scene, cell] : per_scene)
        ps[std::to_string(scene)] = {{"mean", cell.mean}, {"n", cell.n}};
    j["per_scene"] = ps;
    nlohmann::json pk = nlohmann::json::object();
    for (const auto& [key, cell] : per_slot)
        pk[std::to_string(key.first) + ":" + std::to_string(key.second)] = {{"mean", cell.mean},
                                                                            {"n", cell.n}};
    j["per_slot"] = pk;
    return j.dump();
}

CostBidRatio CostBidRatio::from_json(const std::string& text) {
    CostBidRatio rcb;
    try {
        const nlohmann::json j = nlohmann::json::parse(text);
        rcb.min_support = j.at("min_support").get<int>();
        rcb.global = {j.at("global").at("mean").get<double>(), j.at("global").at("n").get<std::int64_t>()};
        for (const auto& [key, cell] : j.at("per_scene").items())
            rcb.per_scene[std::stoi(key)] = {cell.at("mean").get<double>(),
                                             cell.at("n").get<std::int64_t>()};
        for (const auto& [key, cell] : j.at("per_slot").items()) {
            const auto colon = key.find(':');
            if (colon == std::string::npos) throw DataError("cost-bid ratio: bad cell key " + key);
            rcb.per_slot[{std::stoi(key.substr(0, colon)), std::stoi(key.substr(colon + 1))}] = {
                cell.at("mean").get<double>(), cell.at("n").get<std::int64_t>()};
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("cost-bid ratio json: ") + e.what());
    }
    return rcb;
}

CostBidRatio estimate_cost_bid_ratio(const std::vector<AuctionRecord>& records, int min_support) {
    CostBidRatio rcb;
    rcb.min_support = min_support;
    std::map<std::pair<int, int>, std::pair<double, std::int64_t>> slot_acc;
    std::map<int, std::pair<double, std::int64_t>> scene_acc;
    double global_sum = 0.0;
    std::int64_t global_n = 0;
    for (const auto& r : records) {
        if (!r.outcome.won) continue;
        const double ratio =
            std::clamp(static_cast<double>(r.outcome.cost) / static_cast<double>(r.shaded_bid),
                       1e-6, 1.0);
        auto& sa = slot_acc[{r.scene_id, r.outcome.slot_won}];
        sa.first += ratio;
        ++sa.second;
        auto& ca = scene_acc[r.scene_id];
        ca.first += ratio;
        ++ca.second;
        global_sum += ratio;
        ++global_n;
    }
    if (global_n == 0) throw DataError("estimate_cost_bid_ratio: no won records");
    rcb.global = {global_sum / static_cast<double>(global_n), global_n};
    for (const auto& [key, acc] : slot_acc)
        rcb.per_slot[key] = {acc.first / static_cast<double>(acc.second), acc.second};
    for (const auto& [key, acc] : scene_acc)
        rcb.per_scene[key] = {acc.first / static_cast<double>(acc.second), acc.second};
    return rcb;
}

// --------------------------------------------------------------- Eq. 7 / Eq. 8

SurplusParts expected_surplus(const WinRateModel& wr, const CalibrationModel* calib, double rcb,
                              const FeatureVec& x, double upstream, double mu0v_units,
                              double bid_units, Tape& wr_tape, Tape& calib_tape) {
    SurplusParts parts;
    parts.margin = mu0v_units - rcb * bid_units;
    parts.p = wr.prob(x, bid_units, wr_tape);
    parts.pctr = calib ? calib->pctr(x, bid_units, upstream, calib_tape) : upstream;
    parts.es = parts.margin * parts.p * parts.pctr;
    return parts;
}

ShadingSampleEval eval_shading_sample(const ShadingModel& shade, const WinRateModel& wr,
                                      const CalibrationModel* calib, const FeatureVec& x,
                                      double upstream, double mu0v_units, double rcb, double eps,
                                      Tape& shade_tape) {
    ShadingSampleEval ev;
    const double nums[1] = {mu0v_units};
    const double z = shade.net.logit1(x.data(), nums, shade_tape);
    const double s = sigmoid(z);
    ev.r = shade.r_min + (1.0 - shade.r_min) * s;
    ev.bid_units = ev.r * mu0v_units;

    Tape wr_tape, calib_tape;
    ev.parts = expected_surplus(wr, calib, rcb, x, upstream, mu0v_units, ev.bid_units, wr_tape,
                                calib_tape);

    // dES/db through the frozen models' bid inputs.
    const double one = 1.0;
    double dwr[1] = {0.0};
    wr.net.backward(wr_tape, &one, nullptr, dwr);
    const double dp_db = ev.parts.p * (1.0 - ev.parts.p) * dwr[0];
    double dpc_db = 0.0;
    if (calib) {
        double dcal[2] = {0.0, 0.0};
        calib->net.backward(calib_tape, &one, nullptr, dcal);
        dpc_db = ev.parts.pctr * (1.0 - ev.parts.pctr) * dcal[0];
    }
    const double des_db = -rcb * ev.parts.p * ev.parts.pctr +
                          ev.parts.margin * dp_db * ev.parts.pctr +
                          ev.parts.margin * ev.parts.p * dpc_db;

    // Eq. 8 term: -ES / stop_grad(ES), denominator clamped at eps; when the
    // detached surplus is degenerate the unnormalized -ES/eps keeps the
    // ascent direction.
    double dloss_des;
    if (ev.parts.es > eps) {
        ev.loss = -1.0;
        dloss_des = -1.0 / ev.parts.es;
    } else {
        ev.loss = -ev.parts.es / eps;
        dloss_des = -1.0 / eps;
    }

    const double db_dz = mu0v_units * (1.0 - shade.r_min) * s * (1.0 - s);
    ev.dloss_dz = dloss_des * des_db * db_dz;
    return ev;
}

// ------------------------------------------------------------------- training

namespace {

std::vector<std::int64_t> winnable_indices(const std::vector<AuctionRecord>& records) {
    std::vector<std::int64_t> idx;
    for (std::size_t i = 0; i < records.size(); ++i)
        if (winnable(records[i])) idx.push_back(static_cast<std::int64_t>(i));
    return idx;
}

}  // namespace

WinRateModel train_win_rate(const std::vector<AuctionRecord>& records, const FeatureSchema& schema,
                            const MebsHyper& hyper, StageReport* report) {
    if (records.empty()) throw TrainError("train_win_rate: empty dataset");
    std::int64_t n_won = 0;
    for (const auto& r : records) n_won += r.outcome.won ? 1 : 0;
    if (n_won == 0 || n_won == static_cast<std::int64_t>(records.size()))
        throw TrainError("train_win_rate: need both won and lost records");

    std::vector<double> bids(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) bids[i] = money_units(records[i].shaded_bid);

    ModelConfig cfg;
    cfg.fields = schema.fields;
    cfg.numerics = {fit_numeric("bid", NumericTransform::kLog1p, bids)};
    cfg.embed_dim = hyper.embed_dim;
    cfg.hidden = hyper.hidden;
    const double rate = static_cast<double>(n_won) / static_cast<double>(records.size());
    cfg.out_bias_init = logit(std::clamp(rate, 1e-4, 1.0 - 1e-4));

    WinRateModel wr{BaseModel(cfg, nullptr, mix_seed(hyper.win_rate.seed, 0x319a7e))};
    TrainDriver driver(wr.net, hyper.win_rate);
    StageReport stage = driver.run(
        static_cast<std::int64_t>(records.size()),
        [&](std::int64_t i, Tape& tape, double* dlogits) {
            const AuctionRecord& r = records[static_cast<std::size_t>(i)];
            const double nums[1] = {money_units(r.shaded_bid)};
            const double z = wr.net.logit1(r.features.data(), nums, tape);
            const double y = r.outcome.won ? 1.0 : 0.0;
            dlogits[0] = sigmoid(z) - y;
            return bce_with_logit(z, y);
        });
    if (report) *report = stage;
    wr.net.embedding()->frozen = true;
    return wr;
}

CalibrationModel train_calibration(const std::vector<AuctionRecord>& records,
                                   const FeatureSchema& schema, const WinRateModel& wr,
                                   const MebsHyper& hyper, bool own_embedding,
                                   StageReport* report) {
    if (!wr.net.embedding()->frozen)
        throw UsageError("train_calibration: win-rate model must be trained and frozen first");
    const std::vector<std::int64_t> idx = winnable_indices(records);
    if (idx.empty()) throw TrainError("train_calibration: no winnable records");

    std::vector<double> bids, ups;
    bids.reserve(idx.size());
    ups.reserve(idx.size());
    for (std::int64_t i : idx) {
        bids.push_back(money_units(records[static_cast<std::size_t>(i)].shaded_bid));
        ups.push_back(records[static_cast<std::size_t>(i)].upstream_pctr);
    }

    ModelConfig cfg;
    cfg.fields = schema.fields;
    cfg.numerics = {fit_numeric("bid", NumericTransform::kLog1p, bids),
                    fit_numeric("upstream_pctr", NumericTransform::kLogit, ups)};
    cfg.embed_dim = hyper.embed_dim;
    cfg.hidden = hyper.hidden;
    cfg.out_bias_init = 0.0;  // f = 0 starts at the upstream prediction

    std::shared_ptr<EmbeddingTable> shared = own_embedding ? nullptr : wr.net.embedding();
    CalibrationModel calib{
        BaseModel(cfg, std::move(shared), mix_seed(hyper.calibration.seed, 0xca11b))};
    TrainDriver driver(calib.net, hyper.calibration);
    StageReport stage = driver.run(
        static_cast<std::int64_t>(idx.size()),
        [&](std::int64_t k, Tape& tape, double* dlogits) {
            const AuctionRecord& r = records[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])];
            const double nums[2] = {money_units(r.shaded_bid), r.upstream_pctr};
            const double z = calib.net.logit1(r.features.data(), nums, tape) +
                             logit(std::clamp(r.upstream_pctr, 1e-9, 1.0 - 1e-9));
            const double y = r.clicked ? 1.0 : 0.0;
            dlogits[0] = sigmoid(z) - y;
            return bce_with_logit(z, y);
        });
    if (report) *report = stage;
    if (own_embedding) calib.net.embedding()->frozen = true;
    return calib;
}

ShadingModel train_shading(const std::vector<AuctionRecord>& records, const FeatureSchema& schema,
                           const WinRateModel& wr, const CalibrationModel* calib,
                           const CostBidRatio& rcb, const MebsHyper& hyper, bool own_embedding,
                           bool mse_loss, StageReport* report) {
    if (!wr.net.embedding()->frozen)
        throw UsageError("train_shading: win-rate model must be trained and frozen first");
    const std::vector<std::int64_t> idx = winnable_indices(records);
    if (idx.empty()) throw TrainError("train_shading: no winnable records");

    std::vector<double> unshaded;
    unshaded.reserve(idx.size());
    for (std::int64_t i : idx)
        unshaded.push_back(money_units(records[static_cast<std::size_t>(i)].unshaded_bid));

    ModelConfig cfg;
    cfg.fields = schema.fields;
    cfg.numerics = {fit_numeric("unshaded_bid", NumericTransform::kLog1p, unshaded)};
    cfg.embed_dim = hyper.embed_dim;
    cfg.hidden = hyper.hidden;
    cfg.out_bias_init = 0.0;

    std::shared_ptr<EmbeddingTable> shared = own_embedding ? nullptr : wr.net.embedding();
    ShadingModel shade{BaseModel(cfg, std::move(shared), mix_seed(hyper.shading.seed, 0x5aade)),
                       hyper.r_min};
    TrainDriver driver(shade.net, hyper.shading);

    StageReport stage;
    if (mse_loss) {
        stage = driver.run(
            static_cast<std::int64_t>(idx.size()),
            [&](std::int64_t k, Tape& tape, double* dlogits) {
                const AuctionRecord& r =
                    records[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])];
                const double nums[1] = {money_units(r.unshaded_bid)};
                const double z = shade.net.logit1(r.features.data(), nums, tape);
                const double s = sigmoid(z);
                const double ratio = shade.r_min + (1.0 - shade.r_min) * s;
                const double label =
                    std::clamp(static_cast<double>(r.outcome.min_win_price) /
                                   static_cast<double>(r.unshaded_bid),
                               shade.r_min, 1.0);
                const double diff = ratio - label;
                dlogits[0] = 2.0 * diff * (1.0 - shade.r_min) * s * (1.0 - s);
                return diff * diff;
            });
    } else {
        auto surplus_sample = [&](std::int64_t k, Tape& tape, double* dlogits) {
            const AuctionRecord& r =
                records[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])];
            const ShadingSampleEval ev = eval_shading_sample(
                shade, wr, calib, r.features, r.upstream_pctr, money_units(r.unshaded_bid),
                rcb.scene_marginal(r.scene_id), hyper.surplus_eps, tape);
            dlogits[0] = ev.dloss_dz;
            return ev.loss;
        };
        // Early stopping ranks epochs by mean expected surplus (negated), not
        // by the normalized Eq. 8 value, which is -1 by construction.
        auto surplus_metric = [&](std::int64_t k, Tape& tape) {
            const AuctionRecord& r =
                records[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])];
            const ShadingSampleEval ev = eval_shading_sample(
                shade, wr, calib, r.features, r.upstream_pctr, money_units(r.unshaded_bid),
                rcb.scene_marginal(r.scene_id), hyper.surplus_eps, tape);
            return -ev.parts.es;
        };
        stage = driver.run(static_cast<std::int64_t>(idx.size()), surplus_sample, surplus_metric);
    }
    if (report) *report = stage;
    if (own_embedding) shade.net.embedding()->frozen = true;
    return shade;
}

MebsBundle train_mebs(const Dataset& ds, const FeatureSchema& schema, const MebsHyper& hyper,
                      std::uint64_t landscape_fingerprint, const MebsAblation& ablation,
                      MebsTrainLog* log) {
    StageReport wr_report, calib_report, shade_report;
    WinRateModel wr = train_win_rate(ds.records, schema, hyper, &wr_report);

    std::optional<CalibrationModel> calib;
    if (!ablation.no_calibration)
        calib = train_calibration(ds.records, schema, wr, hyper, ablation.no_share_embedding,
                                  &calib_report);

    CostBidRatio rcb = estimate_cost_bid_ratio(ds.records, hyper.rcb_min_support);
    ShadingModel shade =
        train_shading(ds.records, schema, wr, calib ? &*calib : nullptr, rcb, hyper,
                      ablation.no_share_embedding, ablation.mse_shading_loss, &shade_report);

    if (log) *log = {wr_report, calib_report, shade_report};

    MebsBundle bundle{std::move(wr), std::move(calib), std::move(shade), std::move(rcb),
                      !ablation.no_share_embedding, landscape_fingerprint, ds.meta.seed};
    return bundle;
}

std::pair<double, Money> shade(const ShadingModel& model, const FeatureVec& x,
                               Money unshaded_bid) {
    if (unshaded_bid <= 0) throw ConfigError("shade: unshaded bid must be positive");
    Tape tape;
    const double r = model.ratio(x, money_units(unshaded_bid), tape);
    Money b = to_money(r * money_units(unshaded_bid));
    b = std::clamp<Money>(b, 1, unshaded_bid);
    return {r, b};
}

// --------------------------------------------------------------------- bundle

void save_bundle(const MebsBundle& bundle, const std::string& dir) {
    fs::create_directories(dir);
    save_checkpoint(bundle.wr.net, "win_rate", "{}", (fs::path(dir) / "win_rate.json").string());
    if (bundle.calib)
        save_checkpoint(bundle.calib->net, "calibration", "{}",
                        (fs::path(dir) / "calibration.json").string());
    nlohmann::json extra = {{"r_min", bundle.shade.r_min}};
    save_checkpoint(bundle.shade.net, "shading", extra.dump(),
                    (fs::path(dir) / "shading.json").string());

    nlohmann::json manifest;
    manifest["embedding_fingerprint"] = hex64(bundle.wr.net.embedding()->fingerprint());
    manifest["shared_embedding"] = bundle.shared_embedding;
    manifest["has_calibration"] = bundle.calib.has_value();
    manifest["r_cb"] = nlohmann::json::parse(bundle.rcb.to_json());
    manifest["landscape_fingerprint"] = hex64(bundle.landscape_fingerprint);
    manifest["dataset_seed"] = bundle.dataset_seed;
    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw DataError("cannot write bundle manifest in " + dir);
    out << manifest.dump(2) << '\n';
}

MebsBundle load_bundle(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw DataError("cannot read bundle manifest in " + dir);
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(dir + "/manifest.json: " + e.what());
    }

    const bool shared = manifest.at("shared_embedding").get<bool>();
    const bool has_calib = manifest.at("has_calibration").get<bool>();

    LoadedCheckpoint wr_ck = load_checkpoint((fs::path(dir) / "win_rate.json").string());
    if (wr_ck.model_kind != "win_rate") throw DataError(dir + ": unexpected model kind in win_rate.json");
    WinRateModel wr{std::move(*wr_ck.model)};

    const std::string want_fp = manifest.at("embedding_fingerprint").get<std::string>();
    if (hex64(wr.net.embedding()->fingerprint()) != want_fp)
        throw DataError(dir + ": embedding fingerprint mismatch");

    std::shared_ptr<EmbeddingTable> table = shared ? wr.net.embedding() : nullptr;

    std::optional<CalibrationModel> calib;
    if (has_calib) {
        LoadedCheckpoint ck = load_checkpoint((fs::path(dir) / "calibration.json").string(), table);
        if (ck.model_kind != "calibration")
            throw DataError(dir + ": unexpected model kind in calibration.json");
        calib.emplace(CalibrationModel{std::move(*ck.model)});
    }

    LoadedCheckpoint sh_ck = load_checkpoint((fs::path(dir) / "shading.json").string(), table);
    if (sh_ck.model_kind != "shading") throw DataError(dir + ": unexpected model kind in shading.json");
    double r_min = 0.1;
    try {
        r_min = nlohmann::json::parse(sh_ck.extra_json).at("r_min").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(dir + "/shading.json: " + e.what());
    }
    ShadingModel shade{std::move(*sh_ck.model), r_min};

    MebsBundle bundle{std::move(wr), std::move(calib), std::move(shade),
                      CostBidRatio::from_json(manifest.at("r_cb").dump()), shared,
                      std::stoull(manifest.at("landscape_fingerprint").get<std::string>(), nullptr, 16),
                      manifest.at("dataset_seed").get<std::uint64_t>()};
    return bundle;
}

}  // namespace bidshade
