#ifndef SPTTE_EVAL_HPP
#define SPTTE_EVAL_HPP

#include <map>
#include <optional>
#include <vector>

#include "sptte/dist.hpp"
#include "sptte/trips.hpp"

namespace sptte {

struct MetricReport {
    double rmse = 0.0; // seconds
    double mae = 0.0;  // seconds
    double mape = 0.0; // fraction
    double crps = 0.0; // seconds
    double crps_standardized = 0.0; // crps / target scale
    std::size_t count = 0;
};

/// RMSE / MAE / MAPE of point predictions against observations.
MetricReport point_metrics(const std::vector<double>& predictions,
                           const std::vector<double>& observations);

/// Mean CRPS over per-trip Gaussian marginals.
double crps_metric(const std::vector<double>& means, const std::vector<double>& stds,
                   const std::vector<double>& observations);

/// Metrics grouped by slot of day (chronological slot folded modulo
/// slots_per_day); slots with no trips are absent from the map.
std::map<int, MetricReport> slotwise_report(const std::vector<double>& predictions,
                                            const std::vector<double>& observations,
                                            const std::vector<int>& chrono_slots, int slots_per_day);

/// Seeded point prediction by sampling each marginal once instead of using the
/// mean (the literal tilde-tau of the evaluation formulas).
std::vector<double> sampled_point_predictions(const std::vector<double>& means,
                                              const std::vector<double>& stds, std::uint64_t seed);

struct SparsifyResult {
    std::vector<TripRecord> training;
    std::vector<int> knocked_links;
    std::size_t removed_temporal = 0;
    std::size_t removed_spatial = 0;
};

/// Training-set reduction, test data untouched by construction (callers pass
/// the training portion only). Temporal: per chronological slot keep
/// ceil(keep * n) trips, chosen by a seeded permutation prefix so stricter
/// settings select nested subsets. Spatial: knock out floor(frac * num_links)
/// links (permutation prefix, nested likewise) and drop every trip traversing
/// any of them.
SparsifyResult sparsify(const std::vector<TripRecord>& training, const SlotConfig& slots,
                        int num_links, double temporal_keep, double spatial_knockout,
                        std::uint64_t seed);

} // namespace sptte

#endif
