#ifndef SPTTE_ENCODER_HPP
#define SPTTE_ENCODER_HPP

#include <array>
#include <functional>
#include <string>

#include "sptte/ad.hpp"
#include "sptte/blocks.hpp"
#include "sptte/graph.hpp"
#include "sptte/trips.hpp"

namespace sptte {

enum Branch { kMu = 0, kL = 1, kV = 2, kD = 3 };
inline const char* branch_name(int s) {
    static const char* names[4] = {"mu", "L", "V", "D"};
    return names[s];
}

struct ModelConfig {
    int r_h = 32;
    int r_e = 32;
    int gru_hidden = 256;
    int gru_layers = 2;
    int branch_width = 64; // r_h + r_e per the branch transform shapes
    int eta = 6;
    bool use_smoothing = true;       // off reproduces the unsmoothed pipeline exactly
    bool use_prior_knowledge = true; // off: similarity from adjacency only
    bool use_hetero_weights = true;  // off: homogeneous prior smoothing
    bool tanh_smoothing = false;     // activation of the smoothing layer
    bool per_slot_frequency = false; // W_f from the slot's coverage row instead of the aggregate

    void validate() const;
};

struct GruLayerParams {
    Mat Wz, Wr, Wh; // in x hidden
    Mat Uz, Ur, Uh; // hidden x hidden
    Mat bz, br, bh; // 1 x hidden
};

struct ModelParams {
    ModelConfig cfg;
    int num_links = 0;

    std::vector<GruLayerParams> gru;
    Mat proj_W; // hidden x r_h
    Mat proj_b; // 1 x r_h
    Mat embedding; // num_links x r_e
    std::array<Mat, 4> w_h; // (r_h + r_e) x branch_width
    std::array<Mat, 4> W_g; // branch_width x branch_width
    Mat w_o_mu, w_o_V, w_o_D; // branch_width x 1
    Mat k_f_raw; // 1x1, softplus-reparameterized sensitivity

    double k_f() const;

    /// Fixed-order enumeration of every tensor (checkpointing, optimizer,
    /// gradient checks all rely on this order).
    void visit(const std::function<void(const std::string&, Mat&)>& fn);
    void visit_const(const std::function<void(const std::string&, const Mat&)>& fn) const;
};

/// Uniform 1/sqrt(fan-in) weights, zero biases, N(0, 0.1) embeddings,
/// k_f_raw chosen so softplus(k_f_raw) = 1.
ModelParams init_params(const ModelConfig& cfg, int num_links, std::uint64_t seed);

/// Constant pieces of the smoothing layer for one frequency snapshot.
struct SmoothingContext {
    std::array<Mat, 4> C_off;    // prior-weighted neighbor frequency ratios
    std::array<Vec, 4> c_rowsum;
    std::array<Mat, 4> lambda_hom; // homogeneous route (w/o HW), row-stochastic
    Vec freq_norm;                 // F / max(F)
    Vec identity_mask;             // 1 on isolated links
    bool has_identity_rows = false;
};

SmoothingContext build_smoothing_context(const RoadNetwork& network, const std::vector<double>& freq,
                                         const ModelConfig& cfg);

/// Coverage windows: log1p counts scaled by the training maximum, left-padded
/// with the per-link training-mean frequency before slot 0 (and after the last
/// observed slot, for interpolation one step past the end).
struct CoverageProvider {
    int eta = 6;
    int num_slots = 0;
    int num_links = 0;
    Mat counts;     // num_slots x num_links (raw counts)
    Vec mean_freq;  // per-link training mean of raw counts
    double log_scale = 1.0;

    static CoverageProvider from_series(const CoverageSeries& cov, int eta);
    Mat window(int slot) const; // eta x num_links, normalized
};

struct ParamVars {
    struct GruVars {
        ad::Var Wz, Wr, Wh, Uz, Ur, Uh, bz, br, bh;
    };
    std::vector<GruVars> gru;
    ad::Var proj_W, proj_b, embedding;
    std::array<ad::Var, 4> w_h, W_g;
    ad::Var w_o_mu, w_o_V, w_o_D, k_f_raw;
};

ParamVars register_params(ad::Tape& tape, const ModelParams& params);

struct StateVars {
    ad::Var mu, L, v, d;
    std::array<ad::Var, 4> H_new;
    ad::Var h_hidden; // num_links x r_h, pre-concat GRU projection
};

/// Full forward pass for one slot on the given tape: GRU over the coverage
/// window, branch transforms, smoothing, distribution heads.
StateVars forward_state(ad::Tape& tape, const ParamVars& pv, const ModelParams& params,
                        const Mat& window_norm, const SmoothingContext& ctx);

/// GRU + projection only (num_links x r_h).
ad::Var temporal_hidden(ad::Tape& tape, const ParamVars& pv, const ModelParams& params,
                        const Mat& window_norm);

struct EncoderOutput {
    int slot = 0;
    std::array<Mat, 4> H_new;
    LinkStateValues state;
};

/// Value-level forward (runs an internal tape).
EncoderOutput encode_slot(const ModelParams& params, const Mat& window_norm,
                          const SmoothingContext& ctx, int slot);

/// Distribution heads applied to branch representations.
LinkStateValues heads_values(const ModelParams& params, const std::array<Mat, 4>& H_new, int slot);

/// Linear interpolation of the branch representations between two consecutive
/// slots; heads are re-applied so positivity of v and d is preserved exactly.
/// fraction 0 and 1 return bit-equal copies of the endpoint states.
EncoderOutput interpolate_state(const EncoderOutput& at_t, const EncoderOutput& at_next,
                                double fraction, const ModelParams& params);

} // namespace sptte

#endif
