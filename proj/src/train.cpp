#include "sptte/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace sptte {

using ad::Tape;
using ad::Var;

void TrainConfig::validate() const {
    if (batch_size < 1) throw schema_error("train config: batch_size must be >= 1");
    if (k_aug < 0 || k_aug > 8) throw schema_error("train config: k_aug must be in [0, 8]");
    if (!(alpha >= 0.0) || !(beta >= 0.0)) throw schema_error("train config: alpha, beta must be >= 0");
    if (epochs < 0) throw schema_error("train config: epochs must be >= 0");
    if (val_fraction < 0.0 || test_fraction < 0.0 || val_fraction + test_fraction >= 1.0)
        throw schema_error("train config: invalid split fractions");
    model.validate();
    slots.validate();
}

TargetTransform fit_transform(const std::vector<TripRecord>& train_trips, bool enabled) {
    TargetTransform tf;
    if (!enabled || train_trips.empty()) return tf;
    double sum_tau = 0.0, sum_n = 0.0;
    for (const auto& t : train_trips) {
        sum_tau += t.total_time;
        sum_n += static_cast<double>(t.links.size());
    }
    if (sum_n <= 0.0) return tf;
    tf.mean_per_traversal = sum_tau / sum_n;
    double acc = 0.0;
    for (const auto& t : train_trips) {
        const double n = static_cast<double>(t.links.size());
        const double resid = t.total_time - n * tf.mean_per_traversal;
        acc += resid * resid / n;
    }
    tf.scale = std::sqrt(acc / static_cast<double>(train_trips.size()));
    if (!(tf.scale > 1e-9)) tf.scale = 1.0;
    return tf;
}

double orth_theta_loss(const ModelParams& params) {
    const double nmu = params.w_h[kMu].norm();
    double loss = 0.0;
    for (int s : {kL, kV, kD}) {
        const double ns = params.w_h[s].norm();
        if (nmu == 0.0 || ns == 0.0) continue;
        const double dot = params.w_h[kMu].cwiseProduct(params.w_h[s]).sum();
        const double cosine = dot / (nmu * ns);
        loss += cosine * cosine;
    }
    return loss;
}

double orth_L_loss(const Mat& L) {
    const Mat G = L.transpose() * L;
    return (G - Mat::Identity(G.rows(), G.cols())).squaredNorm();
}

namespace {

Var orth_theta_var(Tape& t, const ParamVars& pv, const ModelParams& params) {
    const Var nmu = t.sqrt(t.frobenius_sq(pv.w_h[kMu]));
    Var total;
    for (int s : {kL, kV, kD}) {
        if (params.w_h[kMu].norm() == 0.0 || params.w_h[s].norm() == 0.0) continue;
        const Var ns = t.sqrt(t.frobenius_sq(pv.w_h[s]));
        const Var dot = t.sum(t.elem_mul(pv.w_h[kMu], pv.w_h[s]));
        const Var term = t.square(t.elem_div(dot, t.elem_mul(nmu, ns)));
        total = total.valid() ? t.add(total, term) : term;
    }
    if (!total.valid()) total = t.constant(Mat::Zero(1, 1));
    return total;
}

Var orth_L_var(Tape& t, const ParamVars&, const StateVars& sv, const ModelParams& params) {
    const int w = params.cfg.branch_width;
    const Var G = t.matmul(t.transpose(sv.L), sv.L);
    return t.frobenius_sq(t.sub(G, t.constant(Mat::Identity(w, w))));
}

} // namespace

LossVars total_loss(Tape& tape, const ParamVars& pv, const ModelParams& params,
                    const Mat& window_norm, const SmoothingContext& ctx,
                    std::shared_ptr<const BatchBlocks> batch, double alpha, double beta, int threads) {
    LossVars lv;
    lv.state = forward_state(tape, pv, params, window_norm, ctx);
    lv.nll = tape.block_nll(lv.state.mu, lv.state.L, lv.state.v, lv.state.d, std::move(batch),
                            JitterPolicy::likelihood(), threads);
    lv.total = lv.nll;
    if (alpha != 0.0) {
        lv.orth_theta = orth_theta_var(tape, pv, params);
        lv.total = tape.add(lv.total, tape.scale(lv.orth_theta, alpha));
    }
    if (beta != 0.0) {
        lv.orth_L = orth_L_var(tape, pv, lv.state, params);
        lv.total = tape.add(lv.total, tape.scale(lv.orth_L, beta));
    }
    return lv;
}

std::vector<Var> collect_param_vars(const ParamVars& pv) {
    std::vector<Var> out;
    for (const auto& g : pv.gru)
        for (Var v : {g.Wz, g.Wr, g.Wh, g.Uz, g.Ur, g.Uh, g.bz, g.br, g.bh}) out.push_back(v);
    out.push_back(pv.proj_W);
    out.push_back(pv.proj_b);
    out.push_back(pv.embedding);
    for (int s = 0; s < 4; ++s) out.push_back(pv.w_h[s]);
    for (int s = 0; s < 4; ++s) out.push_back(pv.W_g[s]);
    out.push_back(pv.w_o_mu);
    out.push_back(pv.w_o_V);
    out.push_back(pv.w_o_D);
    out.push_back(pv.k_f_raw);
    return out;
}

void Adam::step(ModelParams& params, const std::vector<Mat>& grads) {
    std::vector<Mat*> tensors;
    params.visit([&tensors](const std::string&, Mat& m) { tensors.push_back(&m); });
    if (tensors.size() != grads.size())
        throw dimension_error("adam: got " + std::to_string(grads.size()) + " gradients for " +
                              std::to_string(tensors.size()) + " tensors");
    if (m_.empty()) {
        for (const auto& g : grads) {
            m_.push_back(Mat::Zero(g.rows(), g.cols()));
            v_.push_back(Mat::Zero(g.rows(), g.cols()));
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < grads.size(); ++i) {
        m_[i] = b1_ * m_[i] + (1.0 - b1_) * grads[i];
        v_[i] = b2_ * v_[i] + (1.0 - b2_) * grads[i].cwiseProduct(grads[i]);
        const Mat mhat = m_[i] / bc1;
        const Mat vhat = v_[i] / bc2;
        *tensors[i] -= lr_ * (mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
    }
}

SplitIndices split_trips(std::size_t n, double val_fraction, double test_fraction, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng = make_rng(derive_seed(seed, 7));
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(n)));
    SplitIndices s;
    s.test.assign(idx.begin(), idx.begin() + n_test);
    s.val.assign(idx.begin() + n_test, idx.begin() + n_test + n_val);
    s.train.assign(idx.begin() + n_test + n_val, idx.end());
    std::sort(s.test.begin(), s.test.end());
    std::sort(s.val.begin(), s.val.end());
    std::sort(s.train.begin(), s.train.end());
    return s;
}

namespace {

struct PreparedTrip {
    TripBlocks blocks; // targets standardized
    int slot = 0;
};

PreparedTrip prepare_trip(const TripRecord& trip, const TrainConfig& cfg,
                          const std::vector<double>& lengths, const TargetTransform& tf) {
    const TripAug aug = augment_trip(trip, cfg.k_aug, cfg.slots, &lengths);
    PreparedTrip pt;
    pt.slot = aug.slot;
    pt.blocks = make_trip_blocks(aug);
    for (int r = 0; r < pt.blocks.rows(); ++r) {
        const double n_trav = pt.blocks.A.row(r).sum();
        pt.blocks.targets(r) = tf.standardize(pt.blocks.targets(r), n_trav);
    }
    return pt;
}

double mean_abs_pct_err(const std::vector<double>& pred, const std::vector<double>& obs) {
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs((pred[i] - obs[i]) / obs[i]);
    return pred.empty() ? 0.0 : s / static_cast<double>(pred.size());
}

} // namespace

FitResult fit(const std::vector<TripRecord>& trips_in, const RoadNetwork& network,
              const TrainConfig& cfg, const SplitIndices* forced_split) {
    cfg.validate();
    network.validate();
    const int V = network.num_links;

    FitResult result;
    std::vector<TripRecord> trips = filter_trips(trips_in, V, &result.ingest);
    if (trips.empty()) throw schema_error("fit: no trips survive ingestion filters");

    if (forced_split) {
        if (trips.size() != trips_in.size())
            throw schema_error("fit: forced split requires pre-filtered trips");
        result.split = *forced_split;
    } else {
        result.split = split_trips(trips.size(), cfg.val_fraction, cfg.test_fraction, cfg.seed);
    }

    std::vector<TripRecord> train_trips, val_trips;
    for (std::size_t i : result.split.train) train_trips.push_back(trips[i]);
    for (std::size_t i : result.split.val) val_trips.push_back(trips[i]);
    if (train_trips.empty()) throw schema_error("fit: empty training split");

    int num_slots = 0;
    for (const auto& t : trips) num_slots = std::max(num_slots, assign_slot(t.depart_ts, cfg.slots) + 1);

    const CoverageSeries coverage = compute_coverage(train_trips, cfg.slots, V, num_slots, cfg.threads);
    const CoverageProvider provider = CoverageProvider::from_series(coverage, cfg.model.eta);
    const TargetTransform tf = fit_transform(train_trips, cfg.standardize_targets);

    const std::vector<double> agg_freq = coverage.aggregate_per_link();
    const SmoothingContext ctx_agg = build_smoothing_context(network, agg_freq, cfg.model);
    std::map<int, SmoothingContext> ctx_slots;
    const auto context_for = [&](int slot) -> const SmoothingContext& {
        if (!cfg.model.per_slot_frequency) return ctx_agg;
        auto it = ctx_slots.find(slot);
        if (it == ctx_slots.end())
            it = ctx_slots.emplace(slot, build_smoothing_context(network, coverage.slot_row(slot), cfg.model))
                     .first;
        return it->second;
    };

    std::vector<double> lengths(V);
    for (int l = 0; l < V; ++l) lengths[l] = network.prior_features[l][0];

    std::vector<PreparedTrip> train_prep(train_trips.size());
    for (std::size_t i = 0; i < train_trips.size(); ++i)
        train_prep[i] = prepare_trip(train_trips[i], cfg, lengths, tf);

    // validation blocks grouped by slot, built once
    std::map<int, BatchBlocks> val_blocks;
    std::map<int, std::vector<std::size_t>> val_by_slot;
    for (std::size_t i = 0; i < val_trips.size(); ++i) {
        PreparedTrip pt = prepare_trip(val_trips[i], cfg, lengths, tf);
        val_blocks[pt.slot].trips.push_back(std::move(pt.blocks));
        val_blocks[pt.slot].total_rows += cfg.k_aug + 1;
        val_by_slot[pt.slot].push_back(i);
    }

    ModelParams params = init_params(cfg.model, V, derive_seed(cfg.seed, 1));
    Adam adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

    double best_val = std::numeric_limits<double>::infinity();
    ModelParams best_params = params;

    const auto evaluate_val = [&](double& out_nll, double& out_mape) {
        double nll_sum = 0.0;
        long rows = 0;
        std::vector<double> preds, obs;
        for (const auto& [slot, blocks] : val_blocks) {
            const EncoderOutput enc =
                encode_slot(params, provider.window(slot), context_for(slot), slot);
            const NllResult r =
                batch_nll_parallel(enc.state, blocks, JitterPolicy::likelihood(), cfg.threads);
            nll_sum += r.nll;
            rows += blocks.total_rows;
            for (std::size_t k = 0; k < blocks.trips.size(); ++k) {
                const auto& tb = blocks.trips[k];
                double mean_std = 0.0;
                for (int i = 0; i < tb.nlinks(); ++i)
                    mean_std += tb.A(0, i) * enc.state.mu(tb.links[i]);
                const double n_trav = tb.A.row(0).sum();
                preds.push_back(tf.destandardize_mean(mean_std, n_trav));
                obs.push_back(val_trips[val_by_slot.at(slot)[k]].total_time);
            }
        }
        out_nll = rows > 0 ? nll_sum / static_cast<double>(rows) : 0.0;
        out_mape = mean_abs_pct_err(preds, obs);
    };

    evaluate_val(result.init_val_nll, result.init_val_mape);

    const auto t_start = std::chrono::steady_clock::now();
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng rng = make_rng(derive_seed(cfg.seed, 100 + static_cast<std::uint64_t>(epoch)));
        std::vector<std::size_t> order(train_prep.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);

        // slot-homogeneous minibatches in shuffled order
        std::map<int, std::vector<std::size_t>> by_slot;
        for (std::size_t i : order) by_slot[train_prep[i].slot].push_back(i);
        std::vector<std::pair<int, std::vector<std::size_t>>> batches;
        for (const auto& [slot, members] : by_slot) {
            for (std::size_t start = 0; start < members.size(); start += cfg.batch_size) {
                const std::size_t stop = std::min(members.size(), start + cfg.batch_size);
                batches.emplace_back(slot,
                                     std::vector<std::size_t>(members.begin() + start, members.begin() + stop));
            }
        }
        std::shuffle(batches.begin(), batches.end(), rng);

        double train_nll_sum = 0.0;
        long train_rows = 0;
        bool failed = false;
        for (const auto& [slot, members] : batches) {
            auto blocks = std::make_shared<BatchBlocks>();
            for (std::size_t i : members) {
                blocks->trips.push_back(train_prep[i].blocks);
                blocks->total_rows += train_prep[i].blocks.rows();
            }
            try {
                Tape tape;
                const ParamVars pv = register_params(tape, params);
                const LossVars lv = total_loss(tape, pv, params, provider.window(slot),
                                               context_for(slot), blocks, cfg.alpha, cfg.beta,
                                               cfg.threads);
                train_nll_sum += tape.scalar_value(lv.nll);
                train_rows += blocks->total_rows;
                tape.backward(lv.total);
                std::vector<Mat> grads;
                for (Var v : collect_param_vars(pv)) grads.push_back(tape.grad(v));
                adam.step(params, grads);
            } catch (const numeric_error&) {
                failed = true;
                break;
            }
        }
        if (failed) {
            result.aborted = true;
            break;
        }

        EpochLog log;
        log.epoch = epoch;
        log.train_nll = train_rows > 0 ? train_nll_sum / static_cast<double>(train_rows) : 0.0;
        evaluate_val(log.val_nll, log.val_mape);
        log.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        result.log.push_back(log);

        const double score = val_trips.empty() ? -static_cast<double>(epoch) : log.val_nll;
        if (score < best_val) {
            best_val = score;
            best_params = params;
            result.best_epoch = epoch;
        }
    }

    if (result.best_epoch < 0) best_params = params; // epochs == 0

    result.model.params = std::move(best_params);
    result.model.transform = tf;
    result.model.coverage = coverage;
    result.model.slots = cfg.slots;
    result.model.cfg = cfg;
    result.model.num_slots = num_slots;
    return result;
}

std::vector<std::pair<int, int>> rowset_from_links(const std::vector<int>& links) {
    std::map<int, int> counts;
    for (int l : links) ++counts[l];
    return {counts.begin(), counts.end()};
}

Predictor::Predictor(TrainedModel model, const RoadNetwork& network)
    : model_(std::move(model)), network_(network) {
    provider_ = CoverageProvider::from_series(model_.coverage, model_.cfg.model.eta);
    ctx_aggregate_ =
        build_smoothing_context(network_, model_.coverage.aggregate_per_link(), model_.cfg.model);
}

const SmoothingContext& Predictor::context_for(int slot) {
    if (!model_.cfg.model.per_slot_frequency) return ctx_aggregate_;
    auto it = ctx_per_slot_.find(slot);
    if (it == ctx_per_slot_.end())
        it = ctx_per_slot_
                 .emplace(slot, build_smoothing_context(network_, model_.coverage.slot_row(slot),
                                                        model_.cfg.model))
                 .first;
    return it->second;
}

const EncoderOutput& Predictor::state(int slot) {
    auto it = state_cache_.find(slot);
    if (it == state_cache_.end()) {
        EncoderOutput enc = encode_slot(model_.params, provider_.window(slot), context_for(slot), slot);
        it = state_cache_.emplace(slot, std::move(enc)).first;
    }
    return it->second;
}

EncoderOutput Predictor::state_at(std::int64_t ts, bool interpolate) {
    const int slot = assign_slot(ts, model_.slots);
    if (!interpolate) return state(slot);
    const std::int64_t slot_start =
        model_.slots.timeline_origin + static_cast<std::int64_t>(slot) * model_.slots.slot_seconds;
    const double fraction =
        static_cast<double>(ts - slot_start) / static_cast<double>(model_.slots.slot_seconds);
    return interpolate_state(state(slot), state(slot + 1), fraction, model_.params);
}

Predictor::TripPrediction Predictor::predict_trip(const TripRecord& trip, bool interpolate) {
    const EncoderOutput enc = state_at(trip.depart_ts, interpolate);
    const auto rowset = rowset_from_links(trip.links);
    const TripGaussian tg = predict_joint(enc.state, {rowset}, false);
    double n_trav = 0.0;
    for (const auto& [l, c] : rowset) n_trav += static_cast<double>(c);
    TripPrediction p;
    p.slot = enc.slot;
    p.mean_s = model_.transform.destandardize_mean(tg.mean(0), n_trav);
    p.std_s = model_.transform.destandardize_std(std::sqrt(tg.cov(0, 0)));
    return p;
}

TripGaussian Predictor::joint(const std::vector<std::vector<std::pair<int, int>>>& rowsets,
                              const EncoderOutput& at, bool include_cross) const {
    TripGaussian tg = predict_joint(at.state, rowsets, include_cross);
    const double s = model_.transform.scale;
    for (int q = 0; q < tg.dim(); ++q) {
        double n_trav = 0.0;
        for (const auto& [l, c] : rowsets[q]) n_trav += static_cast<double>(c);
        tg.mean(q) = model_.transform.destandardize_mean(tg.mean(q), n_trav);
    }
    tg.cov *= s * s;
    return tg;
}

} // namespace sptte
