// Command-line front end: synthetic data generation, training, prediction,
// evaluation, interpolation, sparsification, gradient checking, representation
// export. Exit codes: 0 ok, 2 missing/unreadable file, 3 schema violation,
// 4 dimension mismatch, 5 numerical failure, 6 failed check.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "sptte/io.hpp"

using namespace sptte;
namespace fs = std::filesystem;

namespace {

io::RunManifest make_manifest(const std::string& command, std::uint64_t seed, const io::json& config,
                              const std::vector<std::pair<std::string, std::string>>& inputs) {
    io::RunManifest m;
    m.command = command;
    m.seed = seed;
    m.config = config;
    for (const auto& [name, path] : inputs) m.input_digests[name + ":" + path] = io::file_digest(path);
    return m;
}

std::vector<TripRecord> subset(const std::vector<TripRecord>& trips,
                               const std::vector<std::size_t>& idx) {
    std::vector<TripRecord> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(trips[i]);
    return out;
}

int run_synth(const std::string& out_dir, Scenario sc) {
    fs::create_directories(out_dir);
    const SynthData data = generate_scenario(sc);
    io::json cfg;
    cfg["num_links"] = sc.num_links;
    cfg["avg_degree"] = sc.avg_degree;
    cfg["r_true"] = sc.r_true;
    cfg["days"] = sc.days;
    cfg["num_trips"] = sc.num_trips;
    cfg["noise_cv"] = sc.noise_cv;
    cfg["shared_fraction"] = sc.shared_fraction;
    io::RunManifest manifest = make_manifest("synth", sc.seed, cfg, {});
    const std::string net_path = out_dir + "/network.csv";
    const std::string trips_path = out_dir + "/trips.csv";
    const std::string truth_path = out_dir + "/truth.json";
    io::save_network(data.network, net_path);
    io::save_trips(data.trips, trips_path);
    io::save_ground_truth(data.truth, truth_path);
    manifest.outputs["network"] = net_path;
    manifest.outputs["trips"] = trips_path;
    manifest.outputs["truth"] = truth_path;
    io::write_file(out_dir + "/manifest.json", manifest.to_json().dump(2) + "\n");
    std::cout << "synth: " << data.network.num_links << " links, " << data.trips.size()
              << " trips -> " << out_dir << "\n";
    return 0;
}

int run_train(const std::string& net_path, const std::string& trips_path, const std::string& config_path,
              const std::string& out_checkpoint, const std::string& out_log, int threads_override,
              long long seed_override, double temporal_keep, double spatial_knockout,
              std::uint64_t sparsify_seed, bool quiet) {
    TrainConfig cfg = config_path.empty() ? TrainConfig{} : io::load_train_config(config_path);
    if (threads_override > 0) cfg.threads = threads_override;
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);

    const RoadNetwork net = io::load_network(net_path);
    std::vector<TripRecord> trips = io::load_trips(trips_path);

    std::vector<std::pair<std::string, std::string>> inputs = {{"network", net_path}, {"trips", trips_path}};
    if (!config_path.empty()) inputs.emplace_back("config", config_path);
    io::json mcfg = io::train_config_to_json(cfg);
    mcfg["temporal_keep"] = temporal_keep;
    mcfg["spatial_knockout"] = spatial_knockout;
    io::RunManifest manifest = make_manifest("train", cfg.seed, mcfg, inputs);

    // sparsification applies to the training portion only; validation/test
    // trips stay in place
    SplitIndices forced;
    bool use_forced = false;
    if (temporal_keep < 1.0 || spatial_knockout > 0.0) {
        trips = filter_trips(std::move(trips), net.num_links);
        const SplitIndices split = split_trips(trips.size(), cfg.val_fraction, cfg.test_fraction, cfg.seed);
        const SparsifyResult sp = sparsify(subset(trips, split.train), cfg.slots, net.num_links,
                                           temporal_keep, spatial_knockout, sparsify_seed);
        std::vector<TripRecord> reduced = sp.training;
        for (std::size_t i = 0; i < reduced.size(); ++i) forced.train.push_back(i);
        for (std::size_t i : split.val) {
            forced.val.push_back(reduced.size());
            reduced.push_back(trips[i]);
        }
        for (std::size_t i : split.test) {
            forced.test.push_back(reduced.size());
            reduced.push_back(trips[i]);
        }
        trips = std::move(reduced);
        use_forced = true;
        std::cout << "sparsify: kept " << sp.training.size() << " training trips (removed "
                  << sp.removed_temporal << " temporal, " << sp.removed_spatial << " spatial)\n";
    }

    const FitResult fr = fit(trips, net, cfg, use_forced ? &forced : nullptr);
    if (!quiet)
        for (const auto& e : fr.log)
            std::cout << "epoch " << e.epoch << " train_nll " << e.train_nll << " val_nll " << e.val_nll
                      << " val_mape " << e.val_mape << "\n";
    if (fr.aborted) std::cerr << "warning: training aborted on non-finite loss; best checkpoint kept\n";

    manifest.outputs["checkpoint"] = out_checkpoint;
    io::save_checkpoint(fr.model, manifest, out_checkpoint);
    if (!out_log.empty()) io::save_training_log(fr.log, out_log);
    std::cout << "train: best epoch " << fr.best_epoch << ", checkpoint -> " << out_checkpoint << "\n";
    return 0;
}

int run_predict(const std::string& ck_path, const std::string& net_path, const std::string& queries_path,
                const std::string& out_path, bool interpolate, const std::string& joint_cov_path,
                bool no_cross, int threads) {
    io::Checkpoint ck = io::load_checkpoint(ck_path);
    ck.model.cfg.threads = threads > 0 ? threads : ck.model.cfg.threads;
    const RoadNetwork net = io::load_network(net_path);
    const std::vector<TripRecord> queries = io::load_trips(queries_path);
    Predictor pred(std::move(ck.model), net);

    std::vector<io::PredictionRow> rows;
    rows.reserve(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
        const auto p = pred.predict_trip(queries[i], interpolate);
        rows.push_back({i, p.mean_s, p.std_s});
    }
    io::RunManifest manifest =
        make_manifest("predict", ck.manifest.seed, {{"interpolate", interpolate}},
                      {{"checkpoint", ck_path}, {"network", net_path}, {"queries", queries_path}});
    io::save_predictions(rows, out_path, manifest.digest());

    if (!joint_cov_path.empty()) {
        // cross-trip covariance within shared slots; zero across slots
        const int Q = static_cast<int>(queries.size());
        Mat cov = Mat::Zero(Q, Q);
        std::map<int, std::vector<int>> groups;
        for (int q = 0; q < Q; ++q)
            groups[assign_slot(queries[q].depart_ts, pred.model().slots)].push_back(q);
        for (const auto& [slot, members] : groups) {
            std::vector<std::vector<std::pair<int, int>>> rowsets;
            for (int q : members) rowsets.push_back(rowset_from_links(queries[q].links));
            const TripGaussian tg = pred.joint(rowsets, pred.state(slot), !no_cross);
            for (std::size_t a = 0; a < members.size(); ++a)
                for (std::size_t b = 0; b < members.size(); ++b)
                    cov(members[a], members[b]) = tg.cov(static_cast<int>(a), static_cast<int>(b));
        }
        std::ostringstream os;
        for (int r = 0; r < Q; ++r) {
            for (int c = 0; c < Q; ++c) os << (c ? "," : "") << io::fmt_double(cov(r, c));
            os << "\n";
        }
        io::write_file(joint_cov_path, os.str());
    }
    std::cout << "predict: " << rows.size() << " queries -> " << out_path << "\n";
    return 0;
}

int run_eval(const std::string& ck_path, const std::string& net_path, const std::string& trips_path,
             const std::string& split_name, bool interpolate, bool sampled, std::uint64_t sample_seed,
             const std::string& out_report, const std::string& out_slotwise, int threads) {
    io::Checkpoint ck = io::load_checkpoint(ck_path);
    ck.model.cfg.threads = threads > 0 ? threads : ck.model.cfg.threads;
    const RoadNetwork net = io::load_network(net_path);
    std::vector<TripRecord> all = io::load_trips(trips_path);
    all = filter_trips(std::move(all), net.num_links);

    std::vector<TripRecord> chosen;
    if (split_name == "all") {
        chosen = all;
    } else {
        const TrainConfig& cfg = ck.model.cfg;
        const SplitIndices split = split_trips(all.size(), cfg.val_fraction, cfg.test_fraction, cfg.seed);
        const auto& idx = split_name == "test" ? split.test
                         : split_name == "val" ? split.val
                                               : split.train;
        chosen = subset(all, idx);
    }
    if (chosen.empty()) throw schema_error("eval: selected split is empty");

    Predictor pred(std::move(ck.model), net);
    std::vector<double> means, stds, obs;
    std::vector<int> slots;
    for (const auto& t : chosen) {
        const auto p = pred.predict_trip(t, interpolate);
        means.push_back(p.mean_s);
        stds.push_back(p.std_s);
        obs.push_back(t.total_time);
        slots.push_back(assign_slot(t.depart_ts, pred.model().slots));
    }
    const std::vector<double> points = sampled ? sampled_point_predictions(means, stds, sample_seed) : means;
    MetricReport report = point_metrics(points, obs);
    report.crps = crps_metric(means, stds, obs);
    report.crps_standardized = report.crps / pred.model().transform.scale;

    io::RunManifest manifest = make_manifest(
        "eval", pred.model().cfg.seed,
        {{"split", split_name}, {"interpolate", interpolate}, {"sampled_points", sampled}},
        {{"checkpoint", ck_path}, {"network", net_path}, {"trips", trips_path}});
    io::json extra;
    extra["split"] = split_name;
    extra["interpolate"] = interpolate;
    extra["sampled_points"] = sampled;
    extra["manifest_digest"] = manifest.digest();
    io::save_metric_report(report, extra, out_report);
    if (!out_slotwise.empty())
        io::save_slotwise_csv(slotwise_report(points, obs, slots, pred.model().slots.slots_per_day()),
                              out_slotwise);
    std::cout << "eval[" << split_name << "]: rmse " << report.rmse << " mae " << report.mae << " mape "
              << report.mape << " crps " << report.crps << " (n=" << report.count << ")\n";
    return 0;
}

int run_sparsify(const std::string& trips_path, const std::string& net_path, const std::string& out_path,
                 double temporal_keep, double spatial_knockout, std::uint64_t seed,
                 const std::string& knocked_path) {
    const RoadNetwork net = io::load_network(net_path);
    const std::vector<TripRecord> trips = io::load_trips(trips_path);
    SlotConfig slots;
    const SparsifyResult res = sparsify(trips, slots, net.num_links, temporal_keep, spatial_knockout, seed);
    io::save_trips(res.training, out_path);
    if (!knocked_path.empty()) {
        std::ostringstream os;
        for (int l : res.knocked_links) os << l << "\n";
        io::write_file(knocked_path, os.str());
    }
    std::cout << "sparsify: " << trips.size() << " -> " << res.training.size() << " trips ("
              << res.removed_temporal << " temporal, " << res.removed_spatial << " spatial removals)\n";
    return 0;
}

int run_check_grad(int links, std::uint64_t seed, double tolerance, int k_aug, int trips_n) {
    // seeded toy scenario exercising the full loss surface
    Scenario sc;
    sc.num_links = links;
    sc.num_trips = trips_n;
    sc.days = 1;
    sc.seed = seed;
    const SynthData data = generate_scenario(sc);

    TrainConfig cfg;
    cfg.k_aug = k_aug;
    cfg.seed = seed;
    cfg.model.gru_hidden = 32;
    cfg.model.eta = 4;

    const std::vector<TripRecord> trips = filter_trips(data.trips, links);
    if (trips.empty()) throw schema_error("check-grad: toy scenario produced no usable trips");

    const CoverageSeries cov = compute_coverage(trips, cfg.slots, links);
    const CoverageProvider provider = CoverageProvider::from_series(cov, cfg.model.eta);
    const TargetTransform tf = fit_transform(trips, true);
    const SmoothingContext ctx = build_smoothing_context(data.network, cov.aggregate_per_link(), cfg.model);

    std::vector<double> lengths(links);
    for (int l = 0; l < links; ++l) lengths[l] = data.network.prior_features[l][0];

    auto blocks = std::make_shared<BatchBlocks>();
    int slot = -1;
    for (const auto& t : trips) {
        TripAug aug = augment_trip(t, cfg.k_aug, cfg.slots, &lengths);
        if (slot < 0) slot = aug.slot;
        if (aug.slot != slot) continue; // one slot-homogeneous batch
        TripBlocks tb = make_trip_blocks(aug);
        for (int r = 0; r < tb.rows(); ++r)
            tb.targets(r) = tf.standardize(tb.targets(r), tb.A.row(r).sum());
        blocks->total_rows += tb.rows();
        blocks->trips.push_back(std::move(tb));
        if (blocks->trips.size() >= 12) break;
    }

    ModelParams params = init_params(cfg.model, links, derive_seed(seed, 1));
    const Mat window = provider.window(slot);

    std::vector<Mat> tensors;
    std::vector<std::string> names;
    params.visit([&](const std::string& n, Mat& m) {
        tensors.push_back(m);
        names.push_back(n);
    });

    const auto loss_fn = [&](const std::vector<Mat>& values) {
        ModelParams p = params;
        std::size_t k = 0;
        p.visit([&](const std::string&, Mat& m) { m = values[k++]; });
        ad::Tape tape;
        const ParamVars pv = register_params(tape, p);
        const LossVars lv = total_loss(tape, pv, p, window, ctx, blocks, cfg.alpha, cfg.beta, 1);
        return tape.scalar_value(lv.total);
    };

    ad::Tape tape;
    const ParamVars pv = register_params(tape, params);
    const LossVars lv = total_loss(tape, pv, params, window, ctx, blocks, cfg.alpha, cfg.beta, 1);
    tape.backward(lv.total);
    std::vector<Mat> analytic;
    for (ad::Var v : collect_param_vars(pv)) analytic.push_back(tape.grad(v));

    const ad::GradCheckReport report = ad::grad_check(loss_fn, tensors, analytic, names);
    for (const auto& e : report.entries)
        std::cout << (e.max_rel < tolerance ? "  ok   " : "  FAIL ") << e.name << " max_rel " << e.max_rel
                  << (e.probed ? " (probed)" : "") << "\n";
    std::cout << "check-grad: max relative error " << report.max_rel << " (tolerance " << tolerance
              << ")\n";
    return report.passed(tolerance) ? 0 : 6;
}

int run_export_reprs(const std::string& ck_path, const std::string& net_path, int slot_begin,
                     int slot_end, const std::string& out_dir) {
    io::Checkpoint ck = io::load_checkpoint(ck_path);
    const RoadNetwork net = io::load_network(net_path);
    Predictor pred(std::move(ck.model), net);
    fs::create_directories(out_dir);
    for (int slot = slot_begin; slot < slot_end; ++slot) {
        const EncoderOutput& enc = pred.state(slot);
        for (int s = 0; s < 4; ++s) {
            std::ostringstream os;
            const Mat& H = enc.H_new[s];
            for (Eigen::Index r = 0; r < H.rows(); ++r) {
                for (Eigen::Index c = 0; c < H.cols(); ++c) os << (c ? "," : "") << io::fmt_double(H(r, c));
                os << "\n";
            }
            io::write_file(out_dir + "/H_" + branch_name(s) + "_slot" + std::to_string(slot) + ".csv",
                           os.str());
        }
    }
    std::cout << "export-reprs: slots [" << slot_begin << "," << slot_end << ") -> " << out_dir << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"SPTTE: spatiotemporal probabilistic travel time estimation"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic scenario");
    std::string out_dir = "synth_out";
    Scenario sc;
    synth->add_option("--out-dir", out_dir);
    synth->add_option("--links", sc.num_links);
    synth->add_option("--avg-degree", sc.avg_degree);
    synth->add_option("--r-true", sc.r_true);
    synth->add_option("--days", sc.days);
    synth->add_option("--trips", sc.num_trips);
    synth->add_option("--noise-cv", sc.noise_cv);
    synth->add_option("--shared-fraction", sc.shared_fraction);
    synth->add_option("--seed", sc.seed);

    // train
    auto* train = app.add_subcommand("train", "train a model");
    std::string t_net, t_trips, t_config, t_ck = "checkpoint.json", t_log;
    int t_threads = 0;
    long long t_seed = -1;
    double t_tkeep = 1.0, t_sknock = 0.0;
    std::uint64_t t_spseed = 0;
    bool t_quiet = false;
    train->add_option("--network", t_net)->required();
    train->add_option("--trips", t_trips)->required();
    train->add_option("--config", t_config);
    train->add_option("--out-checkpoint", t_ck);
    train->add_option("--out-log", t_log);
    train->add_option("--threads", t_threads);
    train->add_option("--seed", t_seed);
    train->add_option("--temporal-keep", t_tkeep);
    train->add_option("--spatial-knockout", t_sknock);
    train->add_option("--sparsify-seed", t_spseed);
    train->add_flag("--quiet", t_quiet);

    // predict
    auto* predict = app.add_subcommand("predict", "joint distributions for query trips");
    std::string p_ck, p_net, p_queries, p_out = "predictions.csv", p_cov;
    bool p_interp = false, p_nocross = false;
    int p_threads = 0;
    predict->add_option("--checkpoint", p_ck)->required();
    predict->add_option("--network", p_net)->required();
    predict->add_option("--queries", p_queries)->required();
    predict->add_option("--out", p_out);
    predict->add_option("--joint-cov", p_cov);
    predict->add_flag("--interpolate", p_interp);
    predict->add_flag("--no-cross", p_nocross);
    predict->add_option("--threads", p_threads);

    // eval
    auto* eval = app.add_subcommand("eval", "metric report on a split");
    std::string e_ck, e_net, e_trips, e_split = "test", e_report = "report.json", e_slotwise;
    bool e_interp = false, e_sampled = false;
    std::uint64_t e_sample_seed = 9;
    int e_threads = 0;
    eval->add_option("--checkpoint", e_ck)->required();
    eval->add_option("--network", e_net)->required();
    eval->add_option("--trips", e_trips)->required();
    eval->add_option("--split", e_split)->check(CLI::IsMember({"train", "val", "test", "all"}));
    eval->add_flag("--interpolate", e_interp);
    eval->add_flag("--sampled-points", e_sampled);
    eval->add_option("--sample-seed", e_sample_seed);
    eval->add_option("--out-report", e_report);
    eval->add_option("--out-slotwise", e_slotwise);
    eval->add_option("--threads", e_threads);

    // interpolate: predictions at the query's exact within-slot time
    auto* interp = app.add_subcommand("interpolate", "predict with two-step state interpolation");
    std::string i_ck, i_net, i_queries, i_out = "predictions.csv";
    interp->add_option("--checkpoint", i_ck)->required();
    interp->add_option("--network", i_net)->required();
    interp->add_option("--queries", i_queries)->required();
    interp->add_option("--out", i_out);

    // sparsify
    auto* spars = app.add_subcommand("sparsify", "temporal/spatial training-set reduction");
    std::string s_trips, s_net, s_out = "trips_sparse.csv", s_knocked;
    double s_tkeep = 1.0, s_sknock = 0.0;
    std::uint64_t s_seed = 0;
    spars->add_option("--trips", s_trips)->required();
    spars->add_option("--network", s_net)->required();
    spars->add_option("--out", s_out);
    spars->add_option("--temporal-keep", s_tkeep);
    spars->add_option("--spatial-knockout", s_sknock);
    spars->add_option("--seed", s_seed);
    spars->add_option("--out-knocked", s_knocked);

    // check-grad
    auto* cg = app.add_subcommand("check-grad", "finite-difference check of the full loss gradient");
    int cg_links = 10, cg_kaug = 2, cg_trips = 60;
    std::uint64_t cg_seed = 5;
    double cg_tol = 1e-4;
    cg->add_option("--links", cg_links);
    cg->add_option("--seed", cg_seed);
    cg->add_option("--tolerance", cg_tol);
    cg->add_option("--k-aug", cg_kaug);
    cg->add_option("--trips", cg_trips);

    // export-reprs
    auto* ex = app.add_subcommand("export-reprs", "dump smoothed branch representations per slot");
    std::string x_ck, x_net, x_out = "reprs";
    int x_begin = 0, x_end = 1;
    ex->add_option("--checkpoint", x_ck)->required();
    ex->add_option("--network", x_net)->required();
    ex->add_option("--slot-begin", x_begin);
    ex->add_option("--slot-end", x_end);
    ex->add_option("--out-dir", x_out);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return run_synth(out_dir, sc);
        if (train->parsed())
            return run_train(t_net, t_trips, t_config, t_ck, t_log, t_threads, t_seed, t_tkeep, t_sknock,
                             t_spseed, t_quiet);
        if (predict->parsed())
            return run_predict(p_ck, p_net, p_queries, p_out, p_interp, p_cov, p_nocross, p_threads);
        if (eval->parsed())
            return run_eval(e_ck, e_net, e_trips, e_split, e_interp, e_sampled, e_sample_seed, e_report,
                            e_slotwise, e_threads);
        if (interp->parsed()) return run_predict(i_ck, i_net, i_queries, i_out, true, "", false, 0);
        if (spars->parsed())
            return run_sparsify(s_trips, s_net, s_out, s_tkeep, s_sknock, s_seed, s_knocked);
        if (cg->parsed()) return run_check_grad(cg_links, cg_seed, cg_tol, cg_kaug, cg_trips);
        if (ex->parsed()) return run_export_reprs(x_ck, x_net, x_begin, x_end, x_out);
    } catch (const io_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const schema_error& e) {
        std::cerr << "schema error: " << e.what() << "\n";
        return 3;
    } catch (const dimension_error& e) {
        std::cerr << "dimension error: " << e.what() << "\n";
        return 4;
    } catch (const numeric_error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 5;
    }
    return 0;
}
