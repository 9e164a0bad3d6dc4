#ifndef SPTTE_TRAIN_HPP
#define SPTTE_TRAIN_HPP

#include <map>
#include <memory>
#include <optional>

#include "sptte/dist.hpp"
#include "sptte/encoder.hpp"

namespace sptte {

struct TrainConfig {
    int batch_size = 256;
    int k_aug = 5;
    int epochs = 100;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double alpha = 0.02;
    double beta = 0.02;
    std::uint64_t seed = 42;
    bool standardize_targets = true;
    double val_fraction = 0.15;
    double test_fraction = 0.15;
    int threads = 1;
    ModelConfig model;
    SlotConfig slots;

    void validate() const;
};

/// Affine target map applied per link traversal: a row covering n traversals
/// maps tau -> (tau - n * mean_per_traversal) / scale. This keeps the
/// subsample targets summing to the full-trip target, which a plain trip-level
/// z-score would break.
struct TargetTransform {
    double mean_per_traversal = 0.0;
    double scale = 1.0;

    double standardize(double target, double n_traversals) const {
        return (target - n_traversals * mean_per_traversal) / scale;
    }
    double destandardize_mean(double mean, double n_traversals) const {
        return mean * scale + n_traversals * mean_per_traversal;
    }
    double destandardize_std(double std_dev) const { return std_dev * scale; }
};

TargetTransform fit_transform(const std::vector<TripRecord>& train_trips, bool enabled);

/// Sum over {L, V, D} of squared cosine similarity between vec(w_h^mu) and
/// vec(w_h^s); zero-norm tensors contribute 0.
double orth_theta_loss(const ModelParams& params);

/// || L^T L - I ||_F^2
double orth_L_loss(const Mat& L);

struct LossVars {
    ad::Var total, nll;
    ad::Var orth_theta; // invalid when alpha == 0
    ad::Var orth_L;     // invalid when beta == 0
    StateVars state;
};

/// Builds the full training loss for one slot-homogeneous batch on the tape:
/// batch NLL + alpha * theta-orthogonality + beta * L-orthogonality.
LossVars total_loss(ad::Tape& tape, const ParamVars& pv, const ModelParams& params,
                    const Mat& window_norm, const SmoothingContext& ctx,
                    std::shared_ptr<const BatchBlocks> batch, double alpha, double beta,
                    int threads = 1);

std::vector<ad::Var> collect_param_vars(const ParamVars& pv);

class Adam {
public:
    Adam(double lr, double beta1, double beta2, double eps)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}
    void step(ModelParams& params, const std::vector<Mat>& grads);

private:
    double lr_, b1_, b2_, eps_;
    long t_ = 0;
    std::vector<Mat> m_, v_;
};

struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};

/// Uniform seeded split; deterministic for a given (size, fractions, seed).
SplitIndices split_trips(std::size_t n, double val_fraction, double test_fraction, std::uint64_t seed);

struct EpochLog {
    int epoch = 0;
    double train_nll = 0.0; // mean per target row, standardized units
    double val_nll = 0.0;
    double val_mape = 0.0;  // fraction
    double wall_s = 0.0;
};

struct TrainedModel {
    ModelParams params;
    TargetTransform transform;
    CoverageSeries coverage; // training coverage (windows + W_f frequencies)
    SlotConfig slots;
    TrainConfig cfg;
    int num_slots = 0;
};

struct FitResult {
    TrainedModel model;      // best-validation parameters
    std::vector<EpochLog> log;
    SplitIndices split;
    IngestStats ingest;
    bool aborted = false;    // non-finite loss; best checkpoint retained
    int best_epoch = -1;
    double init_val_nll = 0.0; // validation NLL before the first update
    double init_val_mape = 0.0;
};

/// When `forced_split` is given it overrides the seeded split (used by the
/// sparsification protocol, which reduces the training portion while keeping
/// validation/test trips untouched); the indices refer to `trips` after
/// ingestion filtering, which must then drop nothing.
FitResult fit(const std::vector<TripRecord>& trips, const RoadNetwork& network, const TrainConfig& cfg,
              const SplitIndices* forced_split = nullptr);

/// Inference front end over a trained model: per-slot states are cached, and
/// queries may be answered at the nearest slot or linearly interpolated at
/// their exact within-slot time.
class Predictor {
public:
    Predictor(TrainedModel model, const RoadNetwork& network);

    const EncoderOutput& state(int slot);
    EncoderOutput state_at(std::int64_t ts, bool interpolate);

    struct TripPrediction {
        double mean_s = 0.0;
        double std_s = 0.0;
        int slot = 0;
    };
    TripPrediction predict_trip(const TripRecord& trip, bool interpolate = false);

    /// Joint distribution (seconds) of query trips sharing one state.
    TripGaussian joint(const std::vector<std::vector<std::pair<int, int>>>& rowsets,
                       const EncoderOutput& at, bool include_cross = true) const;

    const TrainedModel& model() const { return model_; }
    const SmoothingContext& context_for(int slot);

private:
    TrainedModel model_;
    RoadNetwork network_;
    CoverageProvider provider_;
    SmoothingContext ctx_aggregate_;
    std::map<int, SmoothingContext> ctx_per_slot_;
    std::map<int, EncoderOutput> state_cache_;
};

std::vector<std::pair<int, int>> rowset_from_links(const std::vector<int>& links);

} // namespace sptte

#endif
