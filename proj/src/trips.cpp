#include "sptte/trips.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sptte {

void TripRecord::validate(int num_links) const {
    if (links.empty()) throw schema_error("trip: empty link sequence");
    if (!(total_time > 0.0)) throw schema_error("trip: total_time must be positive");
    for (int l : links)
        if (l < 0 || l >= num_links)
            throw schema_error("trip: link id " + std::to_string(l) + " out of range");
    if (!per_link_durations.empty()) {
        if (per_link_durations.size() != links.size())
            throw schema_error("trip: durations length " + std::to_string(per_link_durations.size()) +
                               " != links length " + std::to_string(links.size()));
        double sum = 0.0;
        for (double d : per_link_durations) {
            if (!(d > 0.0)) throw schema_error("trip: nonpositive per-link duration");
            sum += d;
        }
        if (std::abs(sum - total_time) > 1e-6 * total_time)
            throw schema_error("trip: durations sum " + std::to_string(sum) +
                               " inconsistent with total_time " + std::to_string(total_time));
    }
}

int assign_slot(std::int64_t ts, const SlotConfig& cfg) {
    cfg.validate();
    if (ts < cfg.timeline_origin)
        throw schema_error("assign_slot: timestamp " + std::to_string(ts) +
                           " precedes timeline origin " + std::to_string(cfg.timeline_origin));
    return static_cast<int>((ts - cfg.timeline_origin) / cfg.slot_seconds);
}

std::vector<double> CoverageSeries::aggregate_per_link() const {
    std::vector<double> agg(num_links, 0.0);
    for (int s = 0; s < num_slots; ++s)
        for (int l = 0; l < num_links; ++l) agg[l] += static_cast<double>(at(s, l));
    return agg;
}

std::vector<double> CoverageSeries::slot_row(int slot) const {
    std::vector<double> row(num_links, 0.0);
    if (slot < 0 || slot >= num_slots) return row;
    for (int l = 0; l < num_links; ++l) row[l] = static_cast<double>(at(slot, l));
    return row;
}

CoverageSeries compute_coverage(const std::vector<TripRecord>& trips, const SlotConfig& cfg,
                                int num_links, int num_slots, int threads) {
    cfg.validate();
    if (num_slots < 0) {
        int max_slot = -1;
        for (const auto& t : trips) max_slot = std::max(max_slot, assign_slot(t.depart_ts, cfg));
        num_slots = max_slot + 1;
    }
    CoverageSeries cov;
    cov.num_slots = std::max(num_slots, 0);
    cov.num_links = num_links;
    cov.counts.assign(static_cast<std::size_t>(cov.num_slots) * num_links, 0);

    const auto accumulate = [&](CoverageSeries& into, const TripRecord& t) {
        const int slot = assign_slot(t.depart_ts, cfg);
        if (slot >= into.num_slots) throw dimension_error("coverage: slot out of range");
        for (int l : t.links) ++into.at(slot, l);
    };

#ifdef _OPENMP
    if (threads > 1) {
        // shard across workers, merge by addition (integer counts, order-free)
        std::vector<CoverageSeries> parts(threads);
        for (auto& p : parts) {
            p.num_slots = cov.num_slots;
            p.num_links = num_links;
            p.counts.assign(cov.counts.size(), 0);
        }
#pragma omp parallel for schedule(static) num_threads(threads)
        for (std::size_t i = 0; i < trips.size(); ++i)
            accumulate(parts[omp_get_thread_num()], trips[i]);
        for (const auto& p : parts)
            for (std::size_t i = 0; i < cov.counts.size(); ++i) cov.counts[i] += p.counts[i];
        return cov;
    }
#else
    (void)threads;
#endif
    for (const auto& t : trips) accumulate(cov, t);
    return cov;
}

namespace {

std::vector<std::pair<int, int>> to_rowset(const std::vector<int>& links,
                                           const std::vector<std::size_t>& positions) {
    std::map<int, int> counts;
    for (std::size_t p : positions) ++counts[links[p]];
    return {counts.begin(), counts.end()};
}

} // namespace

TripAug augment_trip(const TripRecord& trip, int k_aug, const SlotConfig& cfg,
                     const std::vector<double>* lengths) {
    if (k_aug < 0) throw schema_error("augment: k_aug must be >= 0");
    if (trip.links.empty()) throw schema_error("augment: empty trip");
    const std::size_t n = trip.links.size();
    const int k_eff = std::min<int>(k_aug, static_cast<int>(n));

    TripAug aug;
    aug.slot = assign_slot(trip.depart_ts, cfg);

    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    aug.rows.push_back(to_rowset(trip.links, all));
    aug.targets.push_back(trip.total_time);

    if (k_eff == 0) return aug;

    double total_len = 0.0;
    if (!trip.has_durations()) {
        if (!lengths) throw schema_error("augment: no durations and no link lengths for target allocation");
        for (int l : trip.links) total_len += (*lengths)[l];
    }

    for (int s = 0; s < k_eff; ++s) {
        std::vector<std::size_t> kept;
        for (std::size_t p = static_cast<std::size_t>(s); p < n; p += static_cast<std::size_t>(k_eff))
            kept.push_back(p);
        double target = 0.0;
        if (trip.has_durations()) {
            for (std::size_t p : kept) target += trip.per_link_durations[p];
        } else {
            double kept_len = 0.0;
            for (std::size_t p : kept) kept_len += (*lengths)[trip.links[p]];
            target = trip.total_time * (kept_len / total_len);
        }
        aug.rows.push_back(to_rowset(trip.links, kept));
        aug.targets.push_back(target);
    }
    return aug;
}

AugmentedBatch build_batch(const std::vector<TripRecord>& trips, int k_aug, const SlotConfig& cfg,
                           const RoadNetwork& network) {
    if (trips.empty()) throw schema_error("batch: empty trip list");
    std::vector<double> lengths(network.num_links);
    for (int l = 0; l < network.num_links; ++l) lengths[l] = network.prior_features[l][0];

    AugmentedBatch batch;
    batch.num_links = network.num_links;
    batch.k_aug = k_aug;
    batch.entries.reserve(trips.size());
    for (const auto& t : trips) {
        for (int l : t.links)
            if (l < 0 || l >= network.num_links)
                throw schema_error("batch: trip references link " + std::to_string(l) +
                                   " outside network of " + std::to_string(network.num_links) + " links");
        batch.entries.push_back(augment_trip(t, k_aug, cfg, &lengths));
    }
    return batch;
}

std::vector<TripRecord> filter_trips(std::vector<TripRecord> trips, int num_links, IngestStats* stats) {
    std::vector<TripRecord> out;
    out.reserve(trips.size());
    IngestStats local;
    for (auto& t : trips) {
        const int len = static_cast<int>(t.links.size());
        if (len < kMinTripLinks) {
            ++local.rejected_short;
            continue;
        }
        if (len > kMaxTripLinks) {
            ++local.rejected_long;
            continue;
        }
        try {
            t.validate(num_links);
        } catch (const schema_error&) {
            ++local.rejected_invalid;
            continue;
        }
        out.push_back(std::move(t));
    }
    local.accepted = out.size();
    if (stats) *stats = local;
    return out;
}

} // namespace sptte
