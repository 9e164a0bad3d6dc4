#ifndef SPTTE_IO_HPP
#define SPTTE_IO_HPP

#include <map>
#include <string>

#include <json.hpp>

#include "sptte/synthgen.hpp"
#include "sptte/train.hpp"

namespace sptte::io {

using nlohmann::json;

std::string fmt_double(double v); // %.17g, round-trip exact

/// Snapshot of everything that determines a run's outputs. Artifacts embed
/// the manifest digest so reruns are checkable byte for byte.
struct RunManifest {
    std::string command;
    std::string version = "sptte-1";
    std::uint64_t seed = 0;
    json config;
    std::map<std::string, std::string> input_digests; // path -> fnv1a64 hex
    std::map<std::string, std::string> outputs;

    json to_json() const;
    std::string digest() const;
    static RunManifest from_json(const json& j);
};

std::string file_digest(const std::string& path);
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

// network: csv-style with section headers, or a .json document
void save_network(const RoadNetwork& net, const std::string& path);
RoadNetwork load_network(const std::string& path);

// trips: csv `depart_ts,total_time,link_seq,duration_seq` (semicolon-joined
// sequences), or .jsonl with one object per line
void save_trips(const std::vector<TripRecord>& trips, const std::string& path);
std::vector<TripRecord> load_trips(const std::string& path);

void save_ground_truth(const GroundTruth& gt, const std::string& path);
GroundTruth load_ground_truth(const std::string& path);

json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const json& j);
TrainConfig load_train_config(const std::string& path);

struct Checkpoint {
    TrainedModel model;
    RunManifest manifest;
};

void save_checkpoint(const TrainedModel& model, const RunManifest& manifest, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

void save_training_log(const std::vector<EpochLog>& log, const std::string& path);

struct PredictionRow {
    std::size_t trip_id = 0;
    double mean_s = 0.0;
    double std_s = 0.0;
};
void save_predictions(const std::vector<PredictionRow>& rows, const std::string& path,
                      const std::string& manifest_digest);

void save_metric_report(const MetricReport& report, const json& extra, const std::string& path);
void save_slotwise_csv(const std::map<int, MetricReport>& slots, const std::string& path);

} // namespace sptte::io

#endif
