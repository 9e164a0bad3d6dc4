#ifndef SPTTE_TRIPS_HPP
#define SPTTE_TRIPS_HPP

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "sptte/common.hpp"
#include "sptte/graph.hpp"

namespace sptte {

struct TripRecord {
    std::vector<int> links;            // ordered link sequence
    std::int64_t depart_ts = 0;        // epoch seconds
    double total_time = 0.0;           // seconds
    std::vector<double> per_link_durations; // optional, aligned to links

    bool has_durations() const { return !per_link_durations.empty(); }
    void validate(int num_links) const;
};

struct SlotConfig {
    int slot_seconds = 1200;
    std::int64_t timeline_origin = 0;

    int slots_per_day() const { return 86400 / slot_seconds; }
    void validate() const {
        if (slot_seconds <= 0 || 86400 % slot_seconds != 0)
            throw schema_error("slot config: slot_seconds must divide 86400");
    }
};

/// Chronological slot index of a timestamp; boundary timestamps belong to the
/// later slot. Throws if ts predates the timeline origin.
int assign_slot(std::int64_t ts, const SlotConfig& cfg);

/// Trip-coverage counts per (chronological slot, link). Repeated traversals
/// count with their multiplicity.
struct CoverageSeries {
    int num_slots = 0;
    int num_links = 0;
    std::vector<std::int64_t> counts; // row-major slot x link

    std::int64_t& at(int slot, int link) { return counts[static_cast<std::size_t>(slot) * num_links + link]; }
    std::int64_t at(int slot, int link) const { return counts[static_cast<std::size_t>(slot) * num_links + link]; }

    std::vector<double> aggregate_per_link() const;
    std::vector<double> slot_row(int slot) const;
};

CoverageSeries compute_coverage(const std::vector<TripRecord>& trips, const SlotConfig& cfg,
                                int num_links, int num_slots = -1, int threads = 1);

/// One trip after k_aug equidistant subsampling. Row 0 is the full trip; rows
/// 1..k_eff are the stride-k residue classes, which partition row 0. Rows are
/// stored as sorted (link, multiplicity) pairs.
struct TripAug {
    int slot = 0;
    std::vector<std::vector<std::pair<int, int>>> rows;
    std::vector<double> targets; // seconds, aligned to rows
};

struct AugmentedBatch {
    std::vector<TripAug> entries;
    int num_links = 0;
    int k_aug = 0;
};

/// Subsample targets come from observed per-link durations when present,
/// otherwise total_time is allocated proportionally to link length
/// (`lengths` must then be provided).
TripAug augment_trip(const TripRecord& trip, int k_aug, const SlotConfig& cfg,
                     const std::vector<double>* lengths = nullptr);

AugmentedBatch build_batch(const std::vector<TripRecord>& trips, int k_aug, const SlotConfig& cfg,
                           const RoadNetwork& network);

struct IngestStats {
    std::size_t accepted = 0;
    std::size_t rejected_short = 0;
    std::size_t rejected_long = 0;
    std::size_t rejected_invalid = 0;
};

// Ingestion bounds: trips shorter than 7 or longer than 200 links are rejected.
constexpr int kMinTripLinks = 7;
constexpr int kMaxTripLinks = 200;

/// Length/validity filter applied at ingestion; invalid records are counted,
/// not fatal.
std::vector<TripRecord> filter_trips(std::vector<TripRecord> trips, int num_links, IngestStats* stats = nullptr);

} // namespace sptte

#endif
