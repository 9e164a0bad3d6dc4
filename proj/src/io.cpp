#include "sptte/io.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace sptte {

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

} // namespace sptte

namespace sptte::io {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write " + path);
    out << content;
    if (!out) throw io_error("write failed for " + path);
}

std::string file_digest(const std::string& path) { return hex64(fnv1a64(read_file(path))); }

json RunManifest::to_json() const {
    json j;
    j["command"] = command;
    j["version"] = version;
    j["seed"] = seed;
    j["config"] = config;
    j["input_digests"] = input_digests;
    j["outputs"] = outputs;
    return j;
}

std::string RunManifest::digest() const { return hex64(fnv1a64(to_json().dump())); }

RunManifest RunManifest::from_json(const json& j) {
    RunManifest m;
    m.command = j.value("command", "");
    m.version = j.value("version", "");
    m.seed = j.value("seed", std::uint64_t{0});
    m.config = j.value("config", json::object());
    if (j.contains("input_digests"))
        m.input_digests = j.at("input_digests").get<std::map<std::string, std::string>>();
    if (j.contains("outputs")) m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    return m;
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    parts.push_back(cur);
    return parts;
}

double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw schema_error("cannot parse " + what + " from '" + s + "'");
    }
}

long long parse_ll(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw schema_error("cannot parse " + what + " from '" + s + "'");
    }
}

bool has_suffix(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

} // namespace

void save_network(const RoadNetwork& net, const std::string& path) {
    if (has_suffix(path, ".json")) {
        json j;
        j["num_links"] = net.num_links;
        j["feature_names"] = net.feature_names;
        j["features"] = json::array();
        for (const auto& f : net.prior_features) j["features"].push_back(f);
        j["edges"] = json::array();
        for (const auto& [a, b] : net.edges) j["edges"].push_back({a, b});
        write_file(path, j.dump(2) + "\n");
        return;
    }
    std::ostringstream out;
    out << "links," << net.num_links << "," << net.feature_dim() << ",";
    for (std::size_t i = 0; i < net.feature_names.size(); ++i)
        out << (i ? ";" : "") << net.feature_names[i];
    out << "\n";
    for (int l = 0; l < net.num_links; ++l) {
        out << l;
        for (double f : net.prior_features[l]) out << "," << fmt_double(f);
        out << "\n";
    }
    out << "edges," << net.edges.size() << "\n";
    for (const auto& [a, b] : net.edges) out << a << "," << b << "\n";
    write_file(path, out.str());
}

RoadNetwork load_network(const std::string& path) {
    RoadNetwork net;
    if (has_suffix(path, ".json")) {
        json j;
        try {
            j = json::parse(read_file(path));
        } catch (const json::exception& e) {
            throw schema_error("network json: " + std::string(e.what()));
        }
        net.num_links = j.at("num_links").get<int>();
        if (j.contains("feature_names"))
            net.feature_names = j.at("feature_names").get<std::vector<std::string>>();
        for (const auto& row : j.at("features"))
            net.prior_features.push_back(row.get<std::vector<double>>());
        for (const auto& e : j.at("edges")) net.edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
    } else {
        std::istringstream in(read_file(path));
        std::string line;
        if (!std::getline(in, line)) throw schema_error("network file is empty: " + path);
        auto head = split(line, ',');
        if (head.size() < 3 || head[0] != "links")
            throw schema_error("network file: expected 'links,<n>,<h>,...' header");
        net.num_links = static_cast<int>(parse_ll(head[1], "num_links"));
        const int h = static_cast<int>(parse_ll(head[2], "feature dim"));
        if (head.size() > 3 && !head[3].empty()) net.feature_names = split(head[3], ';');
        for (int l = 0; l < net.num_links; ++l) {
            if (!std::getline(in, line)) throw schema_error("network file: truncated link records");
            auto parts = split(line, ',');
            if (static_cast<int>(parts.size()) != h + 1)
                throw schema_error("network file: link record '" + line + "' has wrong arity");
            if (parse_ll(parts[0], "link id") != l)
                throw schema_error("network file: link ids must be contiguous 0..n-1");
            std::vector<double> feats;
            for (int k = 1; k <= h; ++k) feats.push_back(parse_double(parts[k], "feature"));
            net.prior_features.push_back(std::move(feats));
        }
        if (!std::getline(in, line)) throw schema_error("network file: missing edges header");
        head = split(line, ',');
        if (head.size() != 2 || head[0] != "edges")
            throw schema_error("network file: expected 'edges,<m>' header");
        const auto m = parse_ll(head[1], "num edges");
        for (long long i = 0; i < m; ++i) {
            if (!std::getline(in, line)) throw schema_error("network file: truncated edge list");
            auto parts = split(line, ',');
            if (parts.size() != 2) throw schema_error("network file: bad edge '" + line + "'");
            net.edges.emplace_back(static_cast<int>(parse_ll(parts[0], "edge a")),
                                   static_cast<int>(parse_ll(parts[1], "edge b")));
        }
    }
    net.build_adjacency();
    net.validate();
    return net;
}

void save_trips(const std::vector<TripRecord>& trips, const std::string& path) {
    std::ostringstream out;
    if (has_suffix(path, ".jsonl")) {
        for (const auto& t : trips) {
            json j;
            j["depart_ts"] = t.depart_ts;
            j["total_time"] = t.total_time;
            j["links"] = t.links;
            if (t.has_durations()) j["durations"] = t.per_link_durations;
            out << j.dump() << "\n";
        }
    } else {
        out << "depart_ts,total_time,link_seq,duration_seq\n";
        for (const auto& t : trips) {
            out << t.depart_ts << "," << fmt_double(t.total_time) << ",";
            for (std::size_t i = 0; i < t.links.size(); ++i) out << (i ? ";" : "") << t.links[i];
            out << ",";
            for (std::size_t i = 0; i < t.per_link_durations.size(); ++i)
                out << (i ? ";" : "") << fmt_double(t.per_link_durations[i]);
            out << "\n";
        }
    }
    write_file(path, out.str());
}

std::vector<TripRecord> load_trips(const std::string& path) {
    std::vector<TripRecord> trips;
    std::istringstream in(read_file(path));
    std::string line;
    if (has_suffix(path, ".jsonl")) {
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            json j;
            try {
                j = json::parse(line);
            } catch (const json::exception& e) {
                throw schema_error("trips jsonl: " + std::string(e.what()));
            }
            TripRecord t;
            t.depart_ts = j.at("depart_ts").get<std::int64_t>();
            t.total_time = j.at("total_time").get<double>();
            t.links = j.at("links").get<std::vector<int>>();
            if (j.contains("durations")) t.per_link_durations = j.at("durations").get<std::vector<double>>();
            trips.push_back(std::move(t));
        }
        return trips;
    }
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (first && line.rfind("depart_ts", 0) == 0) {
            first = false;
            continue;
        }
        first = false;
        auto parts = split(line, ',');
        if (parts.size() != 4) throw schema_error("trips csv: record '" + line + "' has wrong arity");
        TripRecord t;
        t.depart_ts = parse_ll(parts[0], "depart_ts");
        t.total_time = parse_double(parts[1], "total_time");
        for (const auto& tok : split(parts[2], ';'))
            if (!tok.empty()) t.links.push_back(static_cast<int>(parse_ll(tok, "link id")));
        if (!parts[3].empty())
            for (const auto& tok : split(parts[3], ';'))
                t.per_link_durations.push_back(parse_double(tok, "duration"));
        trips.push_back(std::move(t));
    }
    return trips;
}

namespace {

json mat_to_json(const Mat& m) {
    json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    json data = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    j["data"] = std::move(data);
    return j;
}

Mat mat_from_json(const json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols)
        throw schema_error("tensor data length does not match shape");
    Mat m(rows, cols);
    Eigen::Index k = 0;
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[k++];
    return m;
}

json vec_to_json(const Vec& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

Vec vec_from_json(const json& j) {
    const auto data = j.get<std::vector<double>>();
    Vec v(static_cast<Eigen::Index>(data.size()));
    for (std::size_t i = 0; i < data.size(); ++i) v(static_cast<Eigen::Index>(i)) = data[i];
    return v;
}

} // namespace

void save_ground_truth(const GroundTruth& gt, const std::string& path) {
    json j;
    j["base_mean"] = vec_to_json(gt.base_mean);
    j["congestion"] = vec_to_json(gt.congestion);
    j["L_true"] = mat_to_json(gt.L_true);
    j["v_true"] = vec_to_json(gt.v_true);
    j["d_true"] = vec_to_json(gt.d_true);
    j["peak_am_h"] = gt.peak_am_h;
    j["peak_pm_h"] = gt.peak_pm_h;
    j["peak_width_h"] = gt.peak_width_h;
    j["peak_pm_gain"] = gt.peak_pm_gain;
    j["slot_seconds"] = gt.slots.slot_seconds;
    j["timeline_origin"] = gt.slots.timeline_origin;
    write_file(path, j.dump(2) + "\n");
}

GroundTruth load_ground_truth(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw schema_error("ground truth json: " + std::string(e.what()));
    }
    GroundTruth gt;
    gt.base_mean = vec_from_json(j.at("base_mean"));
    gt.congestion = vec_from_json(j.at("congestion"));
    gt.L_true = mat_from_json(j.at("L_true"));
    gt.v_true = vec_from_json(j.at("v_true"));
    gt.d_true = vec_from_json(j.at("d_true"));
    gt.peak_am_h = j.at("peak_am_h").get<double>();
    gt.peak_pm_h = j.at("peak_pm_h").get<double>();
    gt.peak_width_h = j.at("peak_width_h").get<double>();
    gt.peak_pm_gain = j.at("peak_pm_gain").get<double>();
    gt.slots.slot_seconds = j.at("slot_seconds").get<int>();
    gt.slots.timeline_origin = j.at("timeline_origin").get<std::int64_t>();
    return gt;
}

json train_config_to_json(const TrainConfig& cfg) {
    json j;
    j["batch_size"] = cfg.batch_size;
    j["k_aug"] = cfg.k_aug;
    j["epochs"] = cfg.epochs;
    j["learning_rate"] = cfg.learning_rate;
    j["adam_beta1"] = cfg.adam_beta1;
    j["adam_beta2"] = cfg.adam_beta2;
    j["adam_eps"] = cfg.adam_eps;
    j["alpha"] = cfg.alpha;
    j["beta"] = cfg.beta;
    j["seed"] = cfg.seed;
    j["standardize_targets"] = cfg.standardize_targets;
    j["val_fraction"] = cfg.val_fraction;
    j["test_fraction"] = cfg.test_fraction;
    j["threads"] = cfg.threads;
    j["slot_seconds"] = cfg.slots.slot_seconds;
    j["timeline_origin"] = cfg.slots.timeline_origin;
    json m;
    m["r_h"] = cfg.model.r_h;
    m["r_e"] = cfg.model.r_e;
    m["gru_hidden"] = cfg.model.gru_hidden;
    m["gru_layers"] = cfg.model.gru_layers;
    m["branch_width"] = cfg.model.branch_width;
    m["eta"] = cfg.model.eta;
    m["use_smoothing"] = cfg.model.use_smoothing;
    m["use_prior_knowledge"] = cfg.model.use_prior_knowledge;
    m["use_hetero_weights"] = cfg.model.use_hetero_weights;
    m["tanh_smoothing"] = cfg.model.tanh_smoothing;
    m["per_slot_frequency"] = cfg.model.per_slot_frequency;
    j["model"] = std::move(m);
    return j;
}

TrainConfig train_config_from_json(const json& j) {
    static const std::set<std::string> top_keys = {
        "batch_size", "k_aug", "epochs", "learning_rate", "adam_beta1", "adam_beta2",
        "adam_eps",   "alpha", "beta",   "seed",          "standardize_targets",
        "val_fraction", "test_fraction", "threads", "slot_seconds", "timeline_origin", "model"};
    static const std::set<std::string> model_keys = {
        "r_h",  "r_e", "gru_hidden", "gru_layers", "branch_width", "eta", "use_smoothing",
        "use_prior_knowledge", "use_hetero_weights", "tanh_smoothing", "per_slot_frequency"};
    for (const auto& [key, _] : j.items())
        if (!top_keys.count(key)) throw schema_error("config: unknown key '" + key + "'");

    TrainConfig cfg;
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.k_aug = j.value("k_aug", cfg.k_aug);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.adam_beta1 = j.value("adam_beta1", cfg.adam_beta1);
    cfg.adam_beta2 = j.value("adam_beta2", cfg.adam_beta2);
    cfg.adam_eps = j.value("adam_eps", cfg.adam_eps);
    cfg.alpha = j.value("alpha", cfg.alpha);
    cfg.beta = j.value("beta", cfg.beta);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.standardize_targets = j.value("standardize_targets", cfg.standardize_targets);
    cfg.val_fraction = j.value("val_fraction", cfg.val_fraction);
    cfg.test_fraction = j.value("test_fraction", cfg.test_fraction);
    cfg.threads = j.value("threads", cfg.threads);
    cfg.slots.slot_seconds = j.value("slot_seconds", cfg.slots.slot_seconds);
    cfg.slots.timeline_origin = j.value("timeline_origin", cfg.slots.timeline_origin);
    if (j.contains("model")) {
        const json& m = j.at("model");
        for (const auto& [key, _] : m.items())
            if (!model_keys.count(key)) throw schema_error("config.model: unknown key '" + key + "'");
        cfg.model.r_h = m.value("r_h", cfg.model.r_h);
        cfg.model.r_e = m.value("r_e", cfg.model.r_e);
        cfg.model.gru_hidden = m.value("gru_hidden", cfg.model.gru_hidden);
        cfg.model.gru_layers = m.value("gru_layers", cfg.model.gru_layers);
        cfg.model.branch_width = m.value("branch_width", cfg.model.branch_width);
        cfg.model.eta = m.value("eta", cfg.model.eta);
        cfg.model.use_smoothing = m.value("use_smoothing", cfg.model.use_smoothing);
        cfg.model.use_prior_knowledge = m.value("use_prior_knowledge", cfg.model.use_prior_knowledge);
        cfg.model.use_hetero_weights = m.value("use_hetero_weights", cfg.model.use_hetero_weights);
        cfg.model.tanh_smoothing = m.value("tanh_smoothing", cfg.model.tanh_smoothing);
        cfg.model.per_slot_frequency = m.value("per_slot_frequency", cfg.model.per_slot_frequency);
    }
    cfg.validate();
    return cfg;
}

TrainConfig load_train_config(const std::string& path) {
    try {
        return train_config_from_json(json::parse(read_file(path)));
    } catch (const json::exception& e) {
        throw schema_error("config json: " + std::string(e.what()));
    }
}

void save_checkpoint(const TrainedModel& model, const RunManifest& manifest, const std::string& path) {
    json j;
    j["format_version"] = 1;
    j["manifest"] = manifest.to_json();
    j["manifest_digest"] = manifest.digest();
    j["config"] = train_config_to_json(model.cfg);
    j["num_links"] = model.params.num_links;
    j["num_slots"] = model.num_slots;
    j["transform"] = {{"mean_per_traversal", model.transform.mean_per_traversal},
                      {"scale", model.transform.scale}};
    json cov;
    cov["num_slots"] = model.coverage.num_slots;
    cov["num_links"] = model.coverage.num_links;
    cov["counts"] = model.coverage.counts;
    j["coverage"] = std::move(cov);
    json params = json::object();
    model.params.visit_const(
        [&params](const std::string& name, const Mat& m) { params[name] = mat_to_json(m); });
    j["params"] = std::move(params);
    write_file(path, j.dump() + "\n");
}

Checkpoint load_checkpoint(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw schema_error("checkpoint json: " + std::string(e.what()));
    }
    if (j.value("format_version", 0) != 1) throw schema_error("checkpoint: unsupported format version");
    Checkpoint ck;
    ck.manifest = RunManifest::from_json(j.at("manifest"));
    ck.model.cfg = train_config_from_json(j.at("config"));
    ck.model.slots = ck.model.cfg.slots;
    ck.model.num_slots = j.at("num_slots").get<int>();
    ck.model.transform.mean_per_traversal = j.at("transform").at("mean_per_traversal").get<double>();
    ck.model.transform.scale = j.at("transform").at("scale").get<double>();
    ck.model.coverage.num_slots = j.at("coverage").at("num_slots").get<int>();
    ck.model.coverage.num_links = j.at("coverage").at("num_links").get<int>();
    ck.model.coverage.counts = j.at("coverage").at("counts").get<std::vector<std::int64_t>>();

    const int V = j.at("num_links").get<int>();
    ck.model.params = init_params(ck.model.cfg.model, V, 0);
    const json& params = j.at("params");
    ck.model.params.visit([&params](const std::string& name, Mat& m) {
        if (!params.contains(name)) throw schema_error("checkpoint: missing tensor '" + name + "'");
        Mat loaded = mat_from_json(params.at(name));
        if (loaded.rows() != m.rows() || loaded.cols() != m.cols())
            throw dimension_error("checkpoint: tensor '" + name + "' has shape " +
                                  std::to_string(loaded.rows()) + "x" + std::to_string(loaded.cols()) +
                                  ", expected " + std::to_string(m.rows()) + "x" +
                                  std::to_string(m.cols()));
        m = std::move(loaded);
    });
    return ck;
}

void save_training_log(const std::vector<EpochLog>& log, const std::string& path) {
    std::ostringstream out;
    out << "epoch,train_nll,val_nll,val_mape,wall_s\n";
    for (const auto& e : log)
        out << e.epoch << "," << fmt_double(e.train_nll) << "," << fmt_double(e.val_nll) << ","
            << fmt_double(e.val_mape) << "," << fmt_double(e.wall_s) << "\n";
    write_file(path, out.str());
}

void save_predictions(const std::vector<PredictionRow>& rows, const std::string& path,
                      const std::string& manifest_digest) {
    std::ostringstream out;
    out << "# manifest=" << manifest_digest << "\n";
    out << "trip_id,mean_s,std_s\n";
    for (const auto& r : rows)
        out << r.trip_id << "," << fmt_double(r.mean_s) << "," << fmt_double(r.std_s) << "\n";
    write_file(path, out.str());
}

void save_metric_report(const MetricReport& report, const json& extra, const std::string& path) {
    json j = extra;
    j["rmse_s"] = report.rmse;
    j["mae_s"] = report.mae;
    j["mape"] = report.mape;
    j["crps_s"] = report.crps;
    j["crps_standardized"] = report.crps_standardized;
    j["count"] = report.count;
    write_file(path, j.dump(2) + "\n");
}

void save_slotwise_csv(const std::map<int, MetricReport>& slots, const std::string& path) {
    std::ostringstream out;
    out << "slot_of_day,count,rmse_s,mae_s,mape\n";
    for (const auto& [sod, r] : slots)
        out << sod << "," << r.count << "," << fmt_double(r.rmse) << "," << fmt_double(r.mae) << ","
            << fmt_double(r.mape) << "\n";
    write_file(path, out.str());
}

} // namespace sptte::io
