#include "sptte/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sptte {

MetricReport point_metrics(const std::vector<double>& predictions,
                           const std::vector<double>& observations) {
    if (predictions.size() != observations.size())
        throw dimension_error("metrics: " + std::to_string(predictions.size()) + " predictions vs " +
                              std::to_string(observations.size()) + " observations");
    MetricReport r;
    r.count = predictions.size();
    if (predictions.empty()) return r;
    double se = 0.0, ae = 0.0, ape = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (!(observations[i] > 0.0)) throw schema_error("metrics: nonpositive observation");
        const double e = predictions[i] - observations[i];
        se += e * e;
        ae += std::abs(e);
        ape += std::abs(e / observations[i]);
    }
    const auto n = static_cast<double>(predictions.size());
    r.rmse = std::sqrt(se / n);
    r.mae = ae / n;
    r.mape = ape / n;
    return r;
}

double crps_metric(const std::vector<double>& means, const std::vector<double>& stds,
                   const std::vector<double>& observations) {
    if (means.size() != stds.size() || means.size() != observations.size())
        throw dimension_error("crps metric: mismatched lengths");
    if (means.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < means.size(); ++i) s += crps_gaussian(means[i], stds[i], observations[i]);
    return s / static_cast<double>(means.size());
}

std::map<int, MetricReport> slotwise_report(const std::vector<double>& predictions,
                                            const std::vector<double>& observations,
                                            const std::vector<int>& chrono_slots, int slots_per_day) {
    if (predictions.size() != observations.size() || predictions.size() != chrono_slots.size())
        throw dimension_error("slotwise report: mismatched lengths");
    std::map<int, std::pair<std::vector<double>, std::vector<double>>> groups;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const int sod = chrono_slots[i] % slots_per_day;
        groups[sod].first.push_back(predictions[i]);
        groups[sod].second.push_back(observations[i]);
    }
    std::map<int, MetricReport> out;
    for (const auto& [sod, pair] : groups) out[sod] = point_metrics(pair.first, pair.second);
    return out;
}

std::vector<double> sampled_point_predictions(const std::vector<double>& means,
                                              const std::vector<double>& stds, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> out(means.size());
    for (std::size_t i = 0; i < means.size(); ++i) out[i] = means[i] + stds[i] * gauss(rng);
    return out;
}

SparsifyResult sparsify(const std::vector<TripRecord>& training, const SlotConfig& slots,
                        int num_links, double temporal_keep, double spatial_knockout,
                        std::uint64_t seed) {
    if (temporal_keep < 0.0 || temporal_keep > 1.0 || spatial_knockout < 0.0 || spatial_knockout > 1.0)
        throw schema_error("sparsify: fractions must lie in [0, 1]");

    SparsifyResult res;

    // spatial knockout: permutation prefix => nested across fractions
    const int n_knock = static_cast<int>(std::floor(spatial_knockout * num_links));
    std::vector<int> perm(num_links);
    std::iota(perm.begin(), perm.end(), 0);
    Rng link_rng = make_rng(derive_seed(seed, 11));
    std::shuffle(perm.begin(), perm.end(), link_rng);
    res.knocked_links.assign(perm.begin(), perm.begin() + n_knock);
    std::sort(res.knocked_links.begin(), res.knocked_links.end());
    std::vector<char> knocked(num_links, 0);
    for (int l : res.knocked_links) knocked[l] = 1;

    // per-slot permutation prefix keeps nested subsets as keep decreases
    std::map<int, std::vector<std::size_t>> by_slot;
    for (std::size_t i = 0; i < training.size(); ++i)
        by_slot[assign_slot(training[i].depart_ts, slots)].push_back(i);

    std::vector<char> keep(training.size(), 0);
    for (auto& [slot, members] : by_slot) {
        Rng rng = make_rng(derive_seed(seed, 1000 + static_cast<std::uint64_t>(slot)));
        std::shuffle(members.begin(), members.end(), rng);
        const auto n_keep = static_cast<std::size_t>(
            std::ceil(temporal_keep * static_cast<double>(members.size())));
        for (std::size_t k = 0; k < n_keep; ++k) keep[members[k]] = 1;
        res.removed_temporal += members.size() - n_keep;
    }

    for (std::size_t i = 0; i < training.size(); ++i) {
        if (!keep[i]) continue;
        bool hits = false;
        for (int l : training[i].links) {
            if (knocked[l]) {
                hits = true;
                break;
            }
        }
        if (hits) {
            ++res.removed_spatial;
            continue;
        }
        res.training.push_back(training[i]);
    }
    return res;
}

} // namespace sptte
