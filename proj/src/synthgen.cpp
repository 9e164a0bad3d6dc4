#include "sptte/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

namespace sptte {

double GroundTruth::profile(double hour_of_day) const {
    const auto bump = [](double h, double center, double width) {
        double d = h - center;
        return std::exp(-0.5 * d * d / (width * width));
    };
    // wrap one period so the profile is 24h-periodic at the day boundary
    double p = 0.0;
    for (double shift : {-24.0, 0.0, 24.0}) {
        const double h = hour_of_day + shift;
        p += bump(h, peak_am_h, peak_width_h) + peak_pm_gain * bump(h, peak_pm_h, peak_width_h);
    }
    return std::min(p, 1.0 + peak_pm_gain);
}

double GroundTruth::mean_at(int link, std::int64_t ts) const {
    const double sec_of_day = static_cast<double>((ts - slots.timeline_origin) % 86400);
    const double hour = sec_of_day / 3600.0;
    return base_mean(link) * (1.0 + congestion(link) * profile(hour));
}

Vec GroundTruth::slot_means(int slot_of_day) const {
    const double center_s = (static_cast<double>(slot_of_day) + 0.5) * slots.slot_seconds;
    const double hour = center_s / 3600.0;
    const double p = profile(hour);
    return (base_mean.array() * (1.0 + congestion.array() * p)).matrix();
}

Mat GroundTruth::cov_subset(const std::vector<int>& links) const {
    const int m = static_cast<int>(links.size());
    Mat Ls(m, L_true.cols());
    Vec dsub(m);
    for (int i = 0; i < m; ++i) {
        Ls.row(i) = std::sqrt(v_true(links[i])) * L_true.row(links[i]);
        dsub(i) = d_true(links[i]);
    }
    Mat cov = Ls * Ls.transpose();
    cov.diagonal() += dsub;
    return cov;
}

RoadNetwork generate_network(int num_links, double avg_degree, std::uint64_t seed) {
    if (num_links < 2) throw schema_error("generate_network: need at least 2 links");
    Rng rng = make_rng(seed);
    RoadNetwork net;
    net.num_links = num_links;
    net.feature_names = {"length_m", "lanes"};

    std::uniform_real_distribution<double> len(50.0, 800.0);
    std::uniform_int_distribution<int> lane(1, 4);
    for (int l = 0; l < num_links; ++l)
        net.prior_features.push_back({len(rng), static_cast<double>(lane(rng))});

    // local-attachment spanning tree keeps the graph connected and planar-ish
    std::set<std::pair<int, int>> edge_set;
    for (int i = 1; i < num_links; ++i) {
        std::uniform_int_distribution<int> pick(std::max(0, i - 5), i - 1);
        const int j = pick(rng);
        edge_set.insert({std::min(i, j), std::max(i, j)});
    }
    const long target = std::lround(avg_degree * num_links / 2.0);
    std::uniform_int_distribution<int> node(0, num_links - 1);
    std::uniform_int_distribution<int> offset(1, 8);
    long guard = 0;
    while (static_cast<long>(edge_set.size()) < target && guard++ < 100L * target) {
        const int a = node(rng);
        int b = a + (rng() % 2 == 0 ? 1 : -1) * offset(rng);
        if (b < 0 || b >= num_links || a == b) continue;
        edge_set.insert({std::min(a, b), std::max(a, b)});
    }
    net.edges.assign(edge_set.begin(), edge_set.end());
    net.build_adjacency();
    net.validate();
    return net;
}

GroundTruth make_ground_truth(const RoadNetwork& network, const Scenario& sc, const SlotConfig& slots) {
    const int V = network.num_links;
    Rng rng = make_rng(derive_seed(sc.seed, 21));
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> amp(0.2, 0.5);

    GroundTruth gt;
    gt.slots = slots;
    gt.base_mean = Vec(V);
    gt.congestion = Vec(V);
    gt.v_true = Vec(V);
    gt.d_true = Vec(V);
    gt.L_true = Mat(V, sc.r_true);

    for (int l = 0; l < V; ++l) {
        const double length = network.prior_features[l][0];
        const double lanes = network.prior_features[l][1];
        const double speed = (8.0 + 3.0 * lanes) * std::exp(0.05 * gauss(rng)); // m/s
        gt.base_mean(l) = length / speed;
        gt.congestion(l) = amp(rng);
        const double sd = sc.noise_cv * gt.base_mean(l);
        gt.v_true(l) = sd * sd;
        gt.d_true(l) = (1.0 - sc.shared_fraction) * sd * sd;
        for (int k = 0; k < sc.r_true; ++k)
            gt.L_true(l, k) = std::sqrt(sc.shared_fraction / sc.r_true) * gauss(rng);
    }
    return gt;
}

namespace {

std::vector<int> random_walk(const RoadNetwork& net, int length, Rng& rng) {
    std::uniform_int_distribution<int> start(0, net.num_links - 1);
    std::vector<int> route;
    route.push_back(start(rng));
    int prev = -1;
    while (static_cast<int>(route.size()) < length) {
        const int cur = route.back();
        const auto& ns = net.neighbors[cur];
        if (ns.empty()) break;
        std::vector<int> options;
        for (int nb : ns)
            if (nb != prev) options.push_back(nb);
        if (options.empty()) options.push_back(prev); // dead end, turn back
        std::uniform_int_distribution<std::size_t> pick(0, options.size() - 1);
        const int nxt = options[pick(rng)];
        prev = cur;
        route.push_back(nxt);
    }
    return route;
}

} // namespace

double departure_intensity(double hour_of_day) {
    const auto bump = [](double h, double c, double w) {
        const double d = h - c;
        return std::exp(-0.5 * d * d / (w * w));
    };
    return 0.25 + bump(hour_of_day, 8.5, 1.5) + 0.9 * bump(hour_of_day, 17.75, 1.5);
}

Vec sample_durations(const GroundTruth& gt, const std::vector<int>& distinct_links, std::int64_t ts,
                     Rng& rng) {
    const int m = static_cast<int>(distinct_links.size());
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vec mean(m);
    for (int i = 0; i < m; ++i) mean(i) = gt.mean_at(distinct_links[i], ts);
    const Mat cov = gt.cov_subset(distinct_links);

    Mat factor = Mat::Zero(m, m);
    if (cov.cwiseAbs().maxCoeff() > 0.0) {
        const JitteredChol jc = jittered_cholesky(cov, JitterPolicy::factorization());
        factor = jc.llt.matrixL();
    }
    Vec draw(m);
    int attempts = 0;
    while (true) {
        Vec z(m);
        for (int i = 0; i < m; ++i) z(i) = gauss(rng);
        draw = mean + factor * z;
        if ((draw.array() > 1.0).all()) break;
        if (++attempts > 1000)
            throw numeric_error("sample_durations: cannot draw positive durations; check scenario scales");
    }
    return draw;
}

std::vector<TripRecord> generate_trips(const RoadNetwork& network, const GroundTruth& gt,
                                       int num_trips, int days, std::uint64_t seed) {
    Rng rng = make_rng(derive_seed(seed, 31));
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::uniform_int_distribution<int> day(0, days - 1);
    std::exponential_distribution<double> extra(1.0 / 9.0);

    const double imax = departure_intensity(8.5);

    std::vector<TripRecord> trips;
    trips.reserve(num_trips);
    while (static_cast<int>(trips.size()) < num_trips) {
        // rejection-sample the two-peak daily intensity
        double hour;
        do {
            hour = 24.0 * uni(rng);
        } while (uni(rng) * imax > departure_intensity(hour));
        const auto ts = gt.slots.timeline_origin + static_cast<std::int64_t>(day(rng)) * 86400 +
                        static_cast<std::int64_t>(hour * 3600.0);

        const int length = 7 + std::min(53, static_cast<int>(extra(rng)));
        const std::vector<int> route = random_walk(network, length, rng);
        if (static_cast<int>(route.size()) < kMinTripLinks) continue;

        std::vector<int> distinct = route;
        std::sort(distinct.begin(), distinct.end());
        distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

        const Vec draw = sample_durations(gt, distinct, ts, rng);

        TripRecord trip;
        trip.links = route;
        trip.depart_ts = ts;
        trip.per_link_durations.reserve(route.size());
        double total = 0.0;
        for (int l : route) {
            const auto it = std::lower_bound(distinct.begin(), distinct.end(), l);
            const double dur = draw(static_cast<int>(it - distinct.begin()));
            trip.per_link_durations.push_back(dur);
            total += dur;
        }
        trip.total_time = total;
        trips.push_back(std::move(trip));
    }
    return trips;
}

SynthData generate_scenario(const Scenario& sc) {
    SynthData data;
    data.network = generate_network(sc.num_links, sc.avg_degree, derive_seed(sc.seed, 1));
    SlotConfig slots;
    data.truth = make_ground_truth(data.network, sc, slots);
    data.trips = generate_trips(data.network, data.truth, sc.num_trips, sc.days, derive_seed(sc.seed, 2));
    return data;
}

MetricReport oracle_metrics(const GroundTruth& gt, const std::vector<TripRecord>& test_trips) {
    std::vector<double> means, stds, obs;
    means.reserve(test_trips.size());
    for (const auto& trip : test_trips) {
        std::map<int, int> counts;
        for (int l : trip.links) ++counts[l];
        std::vector<int> distinct;
        Vec mult(static_cast<int>(counts.size()));
        int i = 0;
        for (const auto& [l, c] : counts) {
            distinct.push_back(l);
            mult(i++) = static_cast<double>(c);
        }
        double mean = 0.0;
        for (const auto& [l, c] : counts) mean += c * gt.mean_at(l, trip.depart_ts);
        const Mat cov = gt.cov_subset(distinct);
        const double var = mult.dot(cov * mult);
        means.push_back(mean);
        stds.push_back(std::sqrt(std::max(var, 0.0)));
        obs.push_back(trip.total_time);
    }
    MetricReport r = point_metrics(means, obs);
    bool all_pos = true;
    for (double s : stds)
        if (!(s > 0.0)) all_pos = false;
    r.crps = all_pos ? crps_metric(means, stds, obs) : 0.0;
    return r;
}

MetricReport climatology_metrics(const std::vector<TripRecord>& train_trips,
                                 const std::vector<TripRecord>& test_trips, const SlotConfig& slots) {
    const int spd = slots.slots_per_day();
    std::map<int, std::vector<double>> by_sod;
    for (const auto& t : train_trips) by_sod[assign_slot(t.depart_ts, slots) % spd].push_back(t.total_time);

    std::map<int, std::pair<double, double>> stats; // slot-of-day -> (mean, std)
    double global_sum = 0.0, global_sq = 0.0;
    std::size_t global_n = 0;
    for (const auto& [sod, xs] : by_sod) {
        double s = 0.0;
        for (double x : xs) s += x;
        const double mean = s / static_cast<double>(xs.size());
        double q = 0.0;
        for (double x : xs) q += (x - mean) * (x - mean);
        const double sd = xs.size() > 1 ? std::sqrt(q / static_cast<double>(xs.size() - 1)) : 1.0;
        stats[sod] = {mean, std::max(sd, 1e-6)};
        global_sum += s;
        global_sq += q;
        global_n += xs.size();
    }
    const double gmean = global_n > 0 ? global_sum / static_cast<double>(global_n) : 0.0;
    const double gsd = global_n > 1 ? std::sqrt(global_sq / static_cast<double>(global_n)) : 1.0;

    std::vector<double> means, stds, obs;
    for (const auto& t : test_trips) {
        const int sod = assign_slot(t.depart_ts, slots) % spd;
        const auto it = stats.find(sod);
        means.push_back(it != stats.end() ? it->second.first : gmean);
        stds.push_back(it != stats.end() ? it->second.second : std::max(gsd, 1e-6));
        obs.push_back(t.total_time);
    }
    MetricReport r = point_metrics(means, obs);
    r.crps = crps_metric(means, stds, obs);
    return r;
}

} // namespace sptte
