#ifndef SPTTE_SYNTHGEN_HPP
#define SPTTE_SYNTHGEN_HPP

#include "sptte/eval.hpp"
#include "sptte/graph.hpp"
#include "sptte/trips.hpp"

namespace sptte {

/// Known time-varying truth behind a synthetic scenario. Link means follow a
/// 24h-periodic two-peak congestion profile evaluated in continuous time; the
/// exported per-slot mean vectors sample the profile at slot centers.
struct GroundTruth {
    Vec base_mean;   // seconds at free flow, per link
    Vec congestion;  // per-link amplitude of the daily profile
    Mat L_true;      // num_links x r_true (unitless shared factors)
    Vec v_true;      // per-link variance scale, s^2
    Vec d_true;      // per-link noise variance, s^2
    double peak_am_h = 8.5;
    double peak_pm_h = 17.5;
    double peak_width_h = 1.8;
    double peak_pm_gain = 0.85;
    SlotConfig slots;

    int num_links() const { return static_cast<int>(base_mean.size()); }
    /// Normalized daily congestion profile in [0, 1], by hour of day.
    double profile(double hour_of_day) const;
    /// Continuous-time mean of one link at an epoch timestamp.
    double mean_at(int link, std::int64_t ts) const;
    /// Per-slot-of-day mean vector (profile at the slot center).
    Vec slot_means(int slot_of_day) const;
    /// Covariance restricted to a set of distinct links.
    Mat cov_subset(const std::vector<int>& links) const;
};

struct Scenario {
    int num_links = 50;
    double avg_degree = 4.0;
    int r_true = 4;
    int days = 3;
    int num_trips = 30000;
    double noise_cv = 0.12;      // per-link coefficient of variation
    double shared_fraction = 0.3; // variance share carried by the low-rank factors
    std::uint64_t seed = 1;
};

RoadNetwork generate_network(int num_links, double avg_degree, std::uint64_t seed);

GroundTruth make_ground_truth(const RoadNetwork& network, const Scenario& sc, const SlotConfig& slots);

/// Joint draw of per-link durations over a set of distinct links at a given
/// departure time; resampled while any duration <= 1 s.
Vec sample_durations(const GroundTruth& gt, const std::vector<int>& distinct_links, std::int64_t ts,
                     Rng& rng);

/// Random-walk routes (no immediate backtracking), two-peak daily departure
/// intensity, per-link durations drawn jointly from the truth at the departure
/// time and resampled while any duration <= 1 s. Repeated traversals of a link
/// within one trip share the link's draw.
std::vector<TripRecord> generate_trips(const RoadNetwork& network, const GroundTruth& gt,
                                       int num_trips, int days, std::uint64_t seed);

double departure_intensity(double hour_of_day);

struct SynthData {
    RoadNetwork network;
    GroundTruth truth;
    std::vector<TripRecord> trips;
};

SynthData generate_scenario(const Scenario& sc);

/// Bayes-optimal reference: exact conditional mean and marginal variance from
/// the generator's own truth, scored with the shared metric code. This is the
/// irreducible-error floor.
MetricReport oracle_metrics(const GroundTruth& gt, const std::vector<TripRecord>& test_trips);

/// Per-slot-of-day empirical mean/std of training trip times, applied to test
/// trips. The probabilistic floor any useful model must beat.
MetricReport climatology_metrics(const std::vector<TripRecord>& train_trips,
                                 const std::vector<TripRecord>& test_trips, const SlotConfig& slots);

} // namespace sptte

#endif
