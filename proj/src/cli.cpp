#include "bidshade/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "bidshade/baselines.hpp"
#include "bidshade/campaign.hpp"
#include "bidshade/dataset.hpp"
#include "bidshade/eval.hpp"
#include "bidshade/landscape.hpp"
#include "bidshade/mebs.hpp"
#include "bidshade/slot_factors.hpp"

namespace fs = std::filesystem;

namespace bidshade {

namespace {

LandscapeSpec load_landscape(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read landscape spec " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    LandscapeSpec spec = LandscapeSpec::from_json(text);
    spec.validate();
    return spec;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (text.empty() || text.back() != '\n') out << '\n';
}

// Resolved-config snapshot (rerunnable via `<subcommand> --config config.ini`)
// plus input fingerprints, written next to every command's outputs.
void write_run_snapshot(CLI::App* sub, const fs::path& out_dir, const nlohmann::json& inputs) {
    write_text(out_dir / "config.ini", sub->config_to_str(true, true));
    write_text(out_dir / "inputs.json", inputs.dump(2));
}

nlohmann::json stage_json(const StageReport& s) {
    return {{"holdout_history", s.holdout_history},
            {"best_epoch", s.best_epoch},
            {"best_loss", s.best_loss},
            {"steps", s.steps}};
}

struct DataDir {
    LandscapeSpec spec;
    Dataset ds;
    std::uint64_t fingerprint = 0;
};

DataDir load_data_dir(const std::string& dir) {
    DataDir data;
    data.spec = load_landscape((fs::path(dir) / "landscape.json").string());
    DatasetMeta meta = read_meta((fs::path(dir) / "dataset.meta.json").string(), &data.fingerprint);
    if (data.fingerprint != data.spec.fingerprint())
        throw DataError(dir + ": dataset fingerprint " + hex64(data.fingerprint) +
                        " does not match landscape.json (" + hex64(data.spec.fingerprint()) + ")");
    data.ds = read_dataset((fs::path(dir) / "dataset.jsonl").string(), data.spec.schema);
    if (data.ds.meta.n != meta.n)
        throw DataError(dir + ": dataset.jsonl record count does not match meta");
    data.ds.meta = meta;
    return data;
}

// ------------------------------------------------------------------ gen-data

struct GenOpts {
    std::string preset = "trainable";
    std::string landscape_path;
    std::int64_t n = 200000;
    std::uint64_t seed = 1;
    double mu0 = 1.0;
    std::string policy = "unshaded";
    double ratio = 0.8;
    double r_min = 0.1;
    int threads = 1;
    std::string out;
};

void cmd_gen_data(const GenOpts& opt, CLI::App* sub) {
    LandscapeSpec spec = opt.landscape_path.empty() ? LandscapeSpec::make_preset(opt.preset)
                                                    : load_landscape(opt.landscape_path);
    spec.validate();

    BiddingPolicy policy;
    if (opt.policy == "unshaded") policy = unshaded_policy();
    else if (opt.policy == "ratio") policy = fixed_ratio_policy(opt.ratio);
    else policy = explore_policy(opt.r_min, opt.seed);

    Dataset ds = generate_dataset(spec, policy, opt.mu0, opt.n, opt.seed, opt.threads);

    const fs::path out(opt.out);
    fs::create_directories(out);
    write_text(out / "landscape.json", spec.to_json());
    write_dataset(ds, spec.schema, spec.fingerprint(), (out / "dataset.jsonl").string(),
                  (out / "dataset.meta.json").string());
    write_run_snapshot(sub, out,
                       {{"landscape_fingerprint", hex64(spec.fingerprint())},
                        {"preset", opt.landscape_path.empty() ? opt.preset : opt.landscape_path},
                        {"n", opt.n},
                        {"seed", opt.seed},
                        {"mu0", opt.mu0},
                        {"policy", opt.policy}});

    std::cout << "wrote " << (out / "dataset.jsonl").string() << '\n'
              << "records=" << ds.meta.n << " winnable=" << ds.meta.n_plus
              << " won=" << ds.meta.n_won << " clicked=" << ds.meta.n_clicked
              << " rejected=" << ds.meta.rejected << " seed=" << ds.meta.seed << '\n';
}

// --------------------------------------------------------------------- train

struct TrainOpts {
    std::string data;
    std::string out;
    std::string method = "mebs";
    std::uint64_t seed = 1;
    int epochs = 6;
    int batch = 4096;
    double lr = 1e-2;
    int embed_dim = 8;
    std::vector<int> hidden = {64, 32, 16};
    double r_min = 0.1;
    int min_support = 50;
    int grid_size = 20;
    std::vector<std::string> bin_fields = {"scene", "ad_bucket"};
    bool no_share_embedding = false;
    bool mse_shading_loss = false;
    bool no_calibration = false;
};

MebsHyper make_hyper(const TrainOpts& opt) {
    MebsHyper hyper;
    hyper.embed_dim = opt.embed_dim;
    hyper.hidden = opt.hidden;
    hyper.r_min = opt.r_min;
    hyper.rcb_min_support = opt.min_support;
    for (TrainHyper* stage : {&hyper.win_rate, &hyper.calibration, &hyper.shading}) {
        stage->epochs = opt.epochs;
        stage->batch = opt.batch;
        stage->adam.lr = opt.lr;
        stage->seed = opt.seed;
    }
    return hyper;
}

void cmd_train(const TrainOpts& opt, CLI::App* sub) {
    DataDir data = load_data_dir(opt.data);
    const MebsHyper hyper = make_hyper(opt);
    const fs::path out(opt.out);
    fs::create_directories(out);

    nlohmann::json log;
    if (opt.method == "mebs") {
        MebsAblation ablation{opt.no_share_embedding, opt.mse_shading_loss, opt.no_calibration};
        MebsTrainLog stages;
        MebsBundle bundle =
            train_mebs(data.ds, data.spec.schema, hyper, data.fingerprint, ablation, &stages);
        save_bundle(bundle, out.string());
        log["win_rate"] = stage_json(stages.win_rate);
        if (!opt.no_calibration) log["calibration"] = stage_json(stages.calibration);
        log["shading"] = stage_json(stages.shading);
    } else if (opt.method == "srr") {
        StageReport stage;
        SrrModel model = train_srr(data.ds.records, data.spec.schema, hyper, &stage);
        save_srr(model, (out / "srr.json").string());
        log["srr"] = stage_json(stage);
    } else if (opt.method == "tsbs") {
        StageReport stage;
        WinPriceDistModel model =
            train_tsbs(data.ds.records, data.spec.schema, hyper, opt.grid_size, &stage);
        save_tsbs(model, (out / "tsbs.json").string());
        log["tsbs"] = stage_json(stage);
    } else {  // npm
        SlotFactorTable factors = build_slot_factors(data.ds.records, opt.min_support);
        NpmTable table = train_npm(data.ds.records, data.spec.schema, opt.bin_fields,
                                   opt.min_support, factors, opt.r_min);
        save_npm(table, (out / "npm.json").string());
        log["npm"] = {{"bins", table.bins.size()}, {"default_ratio", table.default_ratio}};
    }
    write_text(out / "train_log.json", log.dump(2));
    write_run_snapshot(sub, out,
                       {{"data", opt.data},
                        {"landscape_fingerprint", hex64(data.fingerprint)},
                        {"dataset_seed", data.ds.meta.seed},
                        {"n", data.ds.meta.n},
                        {"method", opt.method},
                        {"seed", opt.seed},
                        {"no_share_embedding", opt.no_share_embedding},
                        {"mse_shading_loss", opt.mse_shading_loss},
                        {"no_calibration", opt.no_calibration}});
    std::cout << "trained " << opt.method << " -> " << opt.out << '\n' << log.dump(2) << '\n';
}

// ---------------------------------------------------------------------- eval

struct EvalOpts {
    std::string landscape;
    std::string mebs_dir, srr_path, tsbs_path, npm_path;
    std::int64_t n = 50000;
    std::uint64_t seed = 99;
    double mu0 = 1.0;
    double budget = 0.0;  // currency units; > 0 solves mu0*
    int theorem_samples = 0;
    int oracle_resolution = 300;
    int grid_size = 20;
    int min_support = 50;
    int threads = 1;
    bool gate_mebs = false;
    std::string out;
};

int cmd_eval(const EvalOpts& opt, CLI::App* sub) {
    LandscapeSpec spec = load_landscape(opt.landscape);
    const fs::path out(opt.out);
    fs::create_directories(out);

    std::optional<MebsBundle> mebs;
    if (!opt.mebs_dir.empty()) {
        mebs = load_bundle(opt.mebs_dir);
        require_same_landscape(*mebs, spec);
    }
    std::optional<SrrModel> srr;
    if (!opt.srr_path.empty()) srr = load_srr(opt.srr_path);
    std::optional<WinPriceDistModel> tsbs;
    if (!opt.tsbs_path.empty()) {
        if (!mebs)
            throw ConfigError("--tsbs needs --mebs (calibration and cost-bid ratio are reused)");
        tsbs = load_tsbs(opt.tsbs_path);
    }
    std::optional<NpmTable> npm;
    if (!opt.npm_path.empty()) npm = NpmTable{load_npm(opt.npm_path, spec.schema)};

    EvalReport report;
    report.landscape_fingerprint = hex64(spec.fingerprint());
    report.seed = opt.seed;
    report.n_auctions = opt.n;
    report.threads = opt.threads;

    double mu0 = opt.mu0;
    if (opt.budget > 0.0) {
        if (!mebs) throw ConfigError("--budget needs --mebs (spend model for solve_mu0)");
        Dataset base = generate_dataset(spec, unshaded_policy(), 1.0, opt.n, opt.seed, opt.threads);
        SolverReport sol = solve_mu0(base.records, to_money(opt.budget),
                                     shading_model_policy_fn(mebs->shade), mebs->wr,
                                     mebs->calib_ptr(), mebs->rcb, {}, 0.01, opt.threads);
        mu0 = sol.mu0_star;
        write_text(out / "mu0.json", sol.to_json());
        std::cout << "solved mu0* = " << mu0 << " (spend " << sol.cost_units << " vs budget "
                  << opt.budget << ")\n";
    }
    report.mu0 = mu0;

    // Reference replay; it also fits the empirical slot factors every other
    // policy's surplus is measured with.
    Dataset base = generate_dataset(spec, unshaded_policy(), mu0, opt.n, opt.seed, opt.threads);
    SlotFactorTable factors = build_slot_factors(base.records, opt.min_support);
    Replay unshaded{std::move(base), {}};
    unshaded.samples = surplus_samples(unshaded.ds.records, factors);
    report.rows.push_back(evaluate_policy("unshaded", unshaded, upstream_pctr_source()));

    if (mebs) {
        BiddingPolicy policy = [&](const BidRequest& req) {
            return shade(mebs->shade, *req.features, req.unshaded_bid).second;
        };
        Replay replay = replay_policy(spec, policy, mu0, opt.n, opt.seed, factors, opt.threads);
        report.rows.push_back(evaluate_policy(
            "mebs", replay,
            mebs->calib ? calibrated_pctr_source(*mebs->calib) : upstream_pctr_source()));
    }
    if (srr) {
        BiddingPolicy policy = [&](const BidRequest& req) {
            return shade_srr(*srr, *req.features, req.unshaded_bid);
        };
        Replay replay = replay_policy(spec, policy, mu0, opt.n, opt.seed, factors, opt.threads);
        report.rows.push_back(evaluate_policy("srr", replay));
    }
    if (tsbs) {
        BiddingPolicy policy = [&](const BidRequest& req) {
            return infer_tsbs(*tsbs, mebs->calib_ptr(), *req.features, req.unshaded_bid,
                              req.upstream_pctr, req.mu0 * money_units(req.value),
                              mebs->rcb.scene_marginal(req.scene_id), opt.grid_size,
                              mebs->shade.r_min)
                .bid;
        };
        Replay replay = replay_policy(spec, policy, mu0, opt.n, opt.seed, factors, opt.threads);
        report.rows.push_back(evaluate_policy(
            "tsbs", replay,
            mebs->calib ? calibrated_pctr_source(*mebs->calib) : upstream_pctr_source()));
    }
    if (npm) {
        BiddingPolicy policy = [&](const BidRequest& req) {
            return shade_npm(*npm, *req.features, req.unshaded_bid);
        };
        Replay replay = replay_policy(spec, policy, mu0, opt.n, opt.seed, factors, opt.threads);
        report.rows.push_back(evaluate_policy("npm", replay));
    }

    write_text(out / "eval_report.json", report.to_json());
    write_text(out / "eval_report.txt", report.to_text());
    write_text(out / "breakdowns.csv", report.breakdown_csv());

    if (opt.theorem_samples > 0) {
        const double rcb = mebs ? mebs->rcb.global.mean : 1.0;
        TheoremReport theorem = verify_theorem(spec, {0.5, 1.0, 2.0}, opt.theorem_samples,
                                               opt.seed, opt.oracle_resolution, rcb);
        write_text(out / "theorem.json", theorem.to_json());
        std::cout << "theorem audit: " << (theorem.pass() ? "pass" : "FAIL") << '\n';
    }

    nlohmann::json inputs = {{"landscape_fingerprint", hex64(spec.fingerprint())},
                             {"n", opt.n},
                             {"seed", opt.seed},
                             {"mu0", mu0},
                             {"budget", opt.budget}};
    if (mebs) inputs["mebs"] = opt.mebs_dir;
    if (srr) inputs["srr"] = opt.srr_path;
    if (tsbs) inputs["tsbs"] = opt.tsbs_path;
    if (npm) inputs["npm"] = opt.npm_path;
    write_run_snapshot(sub, out, inputs);

    std::cout << report.to_text();

    if (opt.gate_mebs) {
        const PolicyEval* mebs_row = nullptr;
        for (const auto& row : report.rows)
            if (row.policy == "mebs") mebs_row = &row;
        if (!mebs_row) throw ConfigError("--gate-mebs needs a --mebs bundle in the comparison");
        for (const auto& row : report.rows) {
            if (row.policy == "mebs" || row.policy == "unshaded") continue;
            if (mebs_row->surplus_ps < row.surplus_ps) {
                std::cout << "[GATE] mebs surplus(P&S) " << mebs_row->surplus_ps << " < "
                          << row.policy << " " << row.surplus_ps << '\n';
                return 5;
            }
        }
        std::cout << "[GATE] mebs surplus(P&S) is non-inferior to every baseline\n";
    }
    return 0;
}

// --------------------------------------------------------------------- bench

struct BenchOpts {
    std::string data;
    std::string mebs_dir, srr_path, tsbs_path, npm_path;
    std::int64_t batch = 100000;
    int reps = 10;
    int grid_size = 20;
    std::string out;
};

void cmd_bench(const BenchOpts& opt, CLI::App* sub) {
    DataDir data = load_data_dir(opt.data);

    std::optional<MebsBundle> mebs;
    if (!opt.mebs_dir.empty()) mebs = load_bundle(opt.mebs_dir);
    std::optional<SrrModel> srr;
    if (!opt.srr_path.empty()) srr = load_srr(opt.srr_path);
    std::optional<WinPriceDistModel> tsbs;
    if (!opt.tsbs_path.empty()) tsbs = load_tsbs(opt.tsbs_path);
    std::optional<NpmTable> npm;
    if (!opt.npm_path.empty()) npm = NpmTable{load_npm(opt.npm_path, data.spec.schema)};

    const double rcb = mebs ? mebs->rcb.global.mean : 1.0;
    const double r_min = mebs ? mebs->shade.r_min : 0.1;
    std::vector<BenchPolicy> policies = make_bench_policies(
        data.ds.records, mebs ? &mebs->shade : nullptr, srr ? &*srr : nullptr,
        tsbs ? &*tsbs : nullptr, mebs ? mebs->calib_ptr() : nullptr, npm ? &*npm : nullptr, rcb,
        opt.grid_size, r_min);
    if (policies.empty()) throw ConfigError("bench: no policies given");

    BenchReport report = bench_inference(opt.batch, opt.reps, policies);

    const fs::path out(opt.out);
    fs::create_directories(out);
    write_text(out / "bench.json", report.to_json());
    write_text(out / "bench.txt", report.to_text());
    write_run_snapshot(sub, out,
                       {{"data", opt.data},
                        {"landscape_fingerprint", hex64(data.fingerprint)},
                        {"batch", opt.batch},
                        {"repetitions", opt.reps}});
    std::cout << report.to_text();
}

// -------------------------------------------------------------------- report

struct ReportOpts {
    std::string in;
    std::string out;
};

void cmd_report(const ReportOpts& opt) {
    std::ifstream in(opt.in);
    if (!in) throw DataError("cannot read " + opt.in);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(opt.in + ": " + e.what());
    }

    if (j.contains("repetitions")) {
        BenchReport report;
        report.batch = j.at("batch").get<std::int64_t>();
        report.repetitions = j.at("repetitions").get<int>();
        report.threads = j.at("threads").get<int>();
        for (const auto& row : j.at("rows"))
            report.rows.push_back({row.at("policy").get<std::string>(),
                                   row.at("model_seconds").get<double>(),
                                   row.at("search_seconds").get<double>()});
        std::cout << report.to_text();
        if (!opt.out.empty()) write_text(fs::path(opt.out) / "bench.txt", report.to_text());
        return;
    }
    if (j.contains("landscape_fingerprint")) {
        EvalReport report;
        report.landscape_fingerprint = j.at("landscape_fingerprint").get<std::string>();
        report.seed = j.at("seed").get<std::uint64_t>();
        report.n_auctions = j.at("n_auctions").get<std::int64_t>();
        report.mu0 = j.at("mu0").get<double>();
        report.threads = j.at("threads").get<int>();
        for (const auto& row : j.at("rows")) {
            PolicyEval pe;
            pe.policy = row.at("policy").get<std::string>();
            pe.surplus_ps = row.at("surplus_ps_per_1000").get<double>();
            pe.surplus_p = row.at("surplus_p_per_1000").get<double>();
            pe.win_rate = row.at("win_rate").get<double>();
            if (!row.at("pcoc").is_null()) pe.pcoc = row.at("pcoc").get<double>();
            for (const auto& [k, v] : row.at("surplus_ps_by_slot").items())
                pe.surplus_ps_by_slot[std::stoi(k)] = v.get<double>();
            for (const auto& [k, v] : row.at("surplus_ps_by_scene").items())
                pe.surplus_ps_by_scene[std::stoi(k)] = v.get<double>();
            report.rows.push_back(std::move(pe));
        }
        std::cout << report.to_text();
        if (!opt.out.empty()) {
            write_text(fs::path(opt.out) / "eval_report.txt", report.to_text());
            write_text(fs::path(opt.out) / "breakdowns.csv", report.breakdown_csv());
        }
        return;
    }
    throw DataError(opt.in + ": unrecognized report schema");
}

}  // namespace

int run_command(const std::vector<std::string>& args) {
    CLI::App app{"multi-slot GSP auction simulator and bid-shading toolkit"};
    app.require_subcommand(1);
    int rc = 0;

    GenOpts gen;
    CLI::App* gen_cmd = app.add_subcommand("gen-data", "simulate auctions into a labeled dataset");
    gen_cmd->set_config("--config");
    gen_cmd->add_option("--preset", gen.preset, "landscape preset")
        ->check(CLI::IsMember({"trainable", "paper-sparsity"}))
        ->capture_default_str();
    gen_cmd->add_option("--landscape", gen.landscape_path, "landscape spec JSON (overrides --preset)");
    gen_cmd->add_option("--n", gen.n, "auction count")->capture_default_str();
    gen_cmd->add_option("--seed", gen.seed, "dataset seed")->capture_default_str();
    gen_cmd->add_option("--mu0", gen.mu0, "control signal at logging time")->capture_default_str();
    gen_cmd->add_option("--log-policy", gen.policy, "logging policy")
        ->check(CLI::IsMember({"unshaded", "ratio", "explore"}))
        ->capture_default_str();
    gen_cmd->add_option("--ratio", gen.ratio, "fixed ratio for --log-policy ratio")
        ->capture_default_str();
    gen_cmd->add_option("--r-min", gen.r_min, "lower ratio bound for --log-policy explore")
        ->capture_default_str();
    gen_cmd->add_option("--threads", gen.threads, "worker threads (1 = bit-reproducible)")
        ->capture_default_str();
    gen_cmd->add_option("--out", gen.out, "output directory")->required();
    gen_cmd->callback([&] { cmd_gen_data(gen, gen_cmd); });

    TrainOpts train;
    CLI::App* train_cmd = app.add_subcommand("train", "train a shading method on a dataset");
    train_cmd->set_config("--config");
    train_cmd->add_option("--data", train.data, "gen-data output directory")->required();
    train_cmd->add_option("--out", train.out, "output directory")->required();
    train_cmd->add_option("--method", train.method, "mebs|srr|tsbs|npm")
        ->check(CLI::IsMember({"mebs", "srr", "tsbs", "npm"}))
        ->capture_default_str();
    train_cmd->add_option("--seed", train.seed, "training seed")->capture_default_str();
    train_cmd->add_option("--epochs", train.epochs, "epochs per stage")->capture_default_str();
    train_cmd->add_option("--batch", train.batch, "mini-batch size")->capture_default_str();
    train_cmd->add_option("--lr", train.lr, "Adam learning rate")->capture_default_str();
    train_cmd->add_option("--embed-dim", train.embed_dim, "embedding dimension")
        ->capture_default_str();
    train_cmd->add_option("--hidden", train.hidden, "MLP widths")
        ->delimiter(',')
        ->capture_default_str();
    train_cmd->add_option("--r-min", train.r_min, "shading ratio floor")->capture_default_str();
    train_cmd->add_option("--min-support", train.min_support, "cell support threshold")
        ->capture_default_str();
    train_cmd->add_option("--grid-size", train.grid_size, "TSBS candidate count")
        ->capture_default_str();
    train_cmd->add_option("--bin-fields", train.bin_fields, "NPM binning fields")
        ->delimiter(',')
        ->capture_default_str();
    train_cmd->add_flag("--no-share-embedding", train.no_share_embedding,
                        "ablation: per-model embeddings");
    train_cmd->add_flag("--mse-shading-loss", train.mse_shading_loss,
                        "ablation: squared-error shading loss");
    train_cmd->add_flag("--no-calibration", train.no_calibration,
                        "ablation: raw upstream pCTR in the surplus");
    train_cmd->callback([&] { cmd_train(train, train_cmd); });

    EvalOpts ev;
    CLI::App* eval_cmd = app.add_subcommand("eval", "paired counterfactual replay + metrics");
    eval_cmd->set_config("--config");
    eval_cmd->add_option("--landscape", ev.landscape, "landscape spec JSON")->required();
    eval_cmd->add_option("--mebs", ev.mebs_dir, "MEBS bundle directory");
    eval_cmd->add_option("--srr", ev.srr_path, "SRR checkpoint");
    eval_cmd->add_option("--tsbs", ev.tsbs_path, "TSBS checkpoint (needs --mebs)");
    eval_cmd->add_option("--npm", ev.npm_path, "NPM table JSON");
    eval_cmd->add_option("--n", ev.n, "evaluation auctions")->capture_default_str();
    eval_cmd->add_option("--seed", ev.seed, "evaluation seed (disjoint from training)")
        ->capture_default_str();
    eval_cmd->add_option("--mu0", ev.mu0, "control signal")->capture_default_str();
    eval_cmd->add_option("--budget", ev.budget, "budget (currency units); > 0 solves mu0*")
        ->capture_default_str();
    eval_cmd->add_option("--theorem-samples", ev.theorem_samples,
                         "run the theorem audit on this many samples")
        ->capture_default_str();
    eval_cmd->add_option("--oracle-resolution", ev.oracle_resolution, "oracle scan resolution")
        ->capture_default_str();
    eval_cmd->add_option("--grid-size", ev.grid_size, "TSBS candidate count")
        ->capture_default_str();
    eval_cmd->add_option("--min-support", ev.min_support, "slot-factor support threshold")
        ->capture_default_str();
    eval_cmd->add_option("--threads", ev.threads, "worker threads (1 = bit-reproducible)")
        ->capture_default_str();
    eval_cmd->add_flag("--gate-mebs", ev.gate_mebs,
                       "exit 5 unless mebs surplus(P&S) is non-inferior to every baseline");
    eval_cmd->add_option("--out", ev.out, "output directory")->required();
    eval_cmd->callback([&] { rc = cmd_eval(ev, eval_cmd); });

    BenchOpts bench;
    CLI::App* bench_cmd = app.add_subcommand("bench", "single-threaded inference benchmark");
    bench_cmd->set_config("--config");
    bench_cmd->add_option("--data", bench.data, "gen-data output directory (request stream)")
        ->required();
    bench_cmd->add_option("--mebs", bench.mebs_dir, "MEBS bundle directory");
    bench_cmd->add_option("--srr", bench.srr_path, "SRR checkpoint");
    bench_cmd->add_option("--tsbs", bench.tsbs_path, "TSBS checkpoint");
    bench_cmd->add_option("--npm", bench.npm_path, "NPM table JSON");
    bench_cmd->add_option("--batch", bench.batch, "records per batch")->capture_default_str();
    bench_cmd->add_option("--reps", bench.reps, "timed repetitions")->capture_default_str();
    bench_cmd->add_option("--grid-size", bench.grid_size, "TSBS candidate count")
        ->capture_default_str();
    bench_cmd->add_option("--out", bench.out, "output directory")->required();
    bench_cmd->callback([&] { cmd_bench(bench, bench_cmd); });

    ReportOpts rep;
    CLI::App* report_cmd = app.add_subcommand("report", "re-render a stored JSON report");
    report_cmd->add_option("--in", rep.in, "eval_report.json or bench.json")->required();
    report_cmd->add_option("--out", rep.out, "optional output directory");
    report_cmd->callback([&] { cmd_report(rep); });

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(std::move(reversed));
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const TrainError& e) {
        std::cerr << "training error: " << e.what() << '\n';
        return 4;
    }
    return rc;
}

}  // namespace bidshade
