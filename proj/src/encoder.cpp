#include "sptte/encoder.hpp"

#include <cmath>

namespace sptte {

using ad::Tape;
using ad::Var;

void ModelConfig::validate() const {
    if (r_h < 1 || r_e < 1 || gru_hidden < 1 || gru_layers < 1 || branch_width < 1 || eta < 1)
        throw schema_error("model config: all dimensions must be positive");
}

double ModelParams::k_f() const {
    const double x = k_f_raw(0, 0);
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

void ModelParams::visit(const std::function<void(const std::string&, Mat&)>& fn) {
    for (std::size_t i = 0; i < gru.size(); ++i) {
        const std::string p = "gru" + std::to_string(i) + ".";
        fn(p + "Wz", gru[i].Wz);
        fn(p + "Wr", gru[i].Wr);
        fn(p + "Wh", gru[i].Wh);
        fn(p + "Uz", gru[i].Uz);
        fn(p + "Ur", gru[i].Ur);
        fn(p + "Uh", gru[i].Uh);
        fn(p + "bz", gru[i].bz);
        fn(p + "br", gru[i].br);
        fn(p + "bh", gru[i].bh);
    }
    fn("proj_W", proj_W);
    fn("proj_b", proj_b);
    fn("embedding", embedding);
    for (int s = 0; s < 4; ++s) fn(std::string("w_h.") + branch_name(s), w_h[s]);
    for (int s = 0; s < 4; ++s) fn(std::string("W_g.") + branch_name(s), W_g[s]);
    fn("w_o.mu", w_o_mu);
    fn("w_o.V", w_o_V);
    fn("w_o.D", w_o_D);
    fn("k_f_raw", k_f_raw);
}

void ModelParams::visit_const(const std::function<void(const std::string&, const Mat&)>& fn) const {
    auto* self = const_cast<ModelParams*>(this);
    self->visit([&fn](const std::string& name, Mat& m) { fn(name, m); });
}

namespace {

Mat uniform_init(int rows, int cols, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
    std::uniform_real_distribution<double> u(-bound, bound);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

} // namespace

ModelParams init_params(const ModelConfig& cfg, int num_links, std::uint64_t seed) {
    cfg.validate();
    ModelParams p;
    p.cfg = cfg;
    p.num_links = num_links;
    Rng rng = make_rng(seed);

    for (int layer = 0; layer < cfg.gru_layers; ++layer) {
        const int in = layer == 0 ? 1 : cfg.gru_hidden;
        GruLayerParams g;
        g.Wz = uniform_init(in, cfg.gru_hidden, in, rng);
        g.Wr = uniform_init(in, cfg.gru_hidden, in, rng);
        g.Wh = uniform_init(in, cfg.gru_hidden, in, rng);
        g.Uz = uniform_init(cfg.gru_hidden, cfg.gru_hidden, cfg.gru_hidden, rng);
        g.Ur = uniform_init(cfg.gru_hidden, cfg.gru_hidden, cfg.gru_hidden, rng);
        g.Uh = uniform_init(cfg.gru_hidden, cfg.gru_hidden, cfg.gru_hidden, rng);
        g.bz = Mat::Zero(1, cfg.gru_hidden);
        g.br = Mat::Zero(1, cfg.gru_hidden);
        g.bh = Mat::Zero(1, cfg.gru_hidden);
        p.gru.push_back(std::move(g));
    }
    p.proj_W = uniform_init(cfg.gru_hidden, cfg.r_h, cfg.gru_hidden, rng);
    p.proj_b = Mat::Zero(1, cfg.r_h);

    std::normal_distribution<double> emb(0.0, 0.1);
    p.embedding = Mat(num_links, cfg.r_e);
    for (Eigen::Index i = 0; i < p.embedding.size(); ++i) p.embedding.data()[i] = emb(rng);

    const int in_dim = cfg.r_h + cfg.r_e;
    for (int s = 0; s < 4; ++s) p.w_h[s] = uniform_init(in_dim, cfg.branch_width, in_dim, rng);
    for (int s = 0; s < 4; ++s)
        p.W_g[s] = uniform_init(cfg.branch_width, cfg.branch_width, cfg.branch_width, rng);
    p.w_o_mu = uniform_init(cfg.branch_width, 1, cfg.branch_width, rng);
    p.w_o_V = uniform_init(cfg.branch_width, 1, cfg.branch_width, rng);
    p.w_o_D = uniform_init(cfg.branch_width, 1, cfg.branch_width, rng);
    // softplus(k_f_raw) = 1
    p.k_f_raw = Mat::Constant(1, 1, std::log(std::exp(1.0) - 1.0));
    return p;
}

SmoothingContext build_smoothing_context(const RoadNetwork& network, const std::vector<double>& freq,
                                         const ModelConfig& cfg) {
    const int V = network.num_links;
    SmoothingContext ctx;

    // mu/V/D branches smooth with the link-length prior; the L branch uses the
    // unmodified adjacency (scale-free representation)
    SparseWeights P_len;
    if (cfg.use_prior_knowledge) P_len = build_prior_similarity(network, {0}, false, true);
    const SparseWeights P_adj = build_prior_similarity(network, {}, true);
    const auto& branch_P = [&](int s) -> const SparseWeights& {
        if (!cfg.use_prior_knowledge || s == kL) return P_adj;
        return P_len;
    };

    double fmax = 0.0;
    for (double f : freq) fmax = std::max(fmax, f);
    ctx.freq_norm = Vec::Zero(V);
    if (fmax > 0.0)
        for (int l = 0; l < V; ++l) ctx.freq_norm(l) = freq[l] / fmax;

    ctx.identity_mask = Vec::Zero(V);
    for (int l = 0; l < V; ++l) {
        if (network.neighbors[l].empty()) {
            ctx.identity_mask(l) = 1.0;
            ctx.has_identity_rows = true;
        }
    }

    for (int s = 0; s < 4; ++s) {
        const SparseWeights& P = branch_P(s);
        ctx.C_off[s] = Mat::Zero(V, V);
        ctx.c_rowsum[s] = Vec::Zero(V);
        for (int l = 0; l < V; ++l) {
            const auto& ns = network.neighbors[l];
            if (ns.empty()) continue;
            double nbr_sum = 0.0;
            for (int l2 : ns) nbr_sum += freq[l2];
            for (int l2 : ns) {
                const double ratio =
                    nbr_sum > 0.0 ? freq[l2] / nbr_sum : 1.0 / static_cast<double>(ns.size());
                ctx.C_off[s](l, l2) = P.at(l, l2) * ratio;
            }
            ctx.c_rowsum[s](l) = ctx.C_off[s].row(l).sum();
        }

        // homogeneous route: W_f == all-ones, i.e. row-normalized P
        SparseWeights ones;
        ones.n = V;
        ones.rows.resize(V);
        for (int l = 0; l < V; ++l) {
            ones.rows[l].emplace_back(l, 1.0);
            for (int l2 : network.neighbors[l]) ones.rows[l].emplace_back(l2, 1.0);
            std::sort(ones.rows[l].begin(), ones.rows[l].end());
        }
        ctx.lambda_hom[s] = build_edge_weights(P, ones).dense();
    }
    return ctx;
}

CoverageProvider CoverageProvider::from_series(const CoverageSeries& cov, int eta) {
    CoverageProvider cp;
    cp.eta = eta;
    cp.num_slots = cov.num_slots;
    cp.num_links = cov.num_links;
    cp.counts = Mat(cov.num_slots, cov.num_links);
    for (int s = 0; s < cov.num_slots; ++s)
        for (int l = 0; l < cov.num_links; ++l) cp.counts(s, l) = static_cast<double>(cov.at(s, l));
    cp.mean_freq = cov.num_slots > 0 ? Vec(cp.counts.colwise().mean().transpose())
                                     : Vec(Vec::Zero(cov.num_links));
    const Mat transformed = cp.counts.array().log1p();
    cp.log_scale = cov.counts.empty() ? 1.0 : transformed.maxCoeff();
    if (cp.log_scale <= 0.0) cp.log_scale = 1.0;
    return cp;
}

Mat CoverageProvider::window(int slot) const {
    if (slot < 0) throw schema_error("coverage window: negative slot");
    Mat w(eta, num_links);
    for (int j = 0; j < eta; ++j) {
        const int sj = slot - eta + j;
        if (sj >= 0 && sj < num_slots)
            w.row(j) = counts.row(sj);
        else
            w.row(j) = mean_freq.transpose();
    }
    return (w.array().log1p() / log_scale).matrix();
}

ParamVars register_params(Tape& tape, const ModelParams& params) {
    ParamVars pv;
    for (const auto& g : params.gru) {
        ParamVars::GruVars gv;
        gv.Wz = tape.param(g.Wz);
        gv.Wr = tape.param(g.Wr);
        gv.Wh = tape.param(g.Wh);
        gv.Uz = tape.param(g.Uz);
        gv.Ur = tape.param(g.Ur);
        gv.Uh = tape.param(g.Uh);
        gv.bz = tape.param(g.bz);
        gv.br = tape.param(g.br);
        gv.bh = tape.param(g.bh);
        pv.gru.push_back(gv);
    }
    pv.proj_W = tape.param(params.proj_W);
    pv.proj_b = tape.param(params.proj_b);
    pv.embedding = tape.param(params.embedding);
    for (int s = 0; s < 4; ++s) pv.w_h[s] = tape.param(params.w_h[s]);
    for (int s = 0; s < 4; ++s) pv.W_g[s] = tape.param(params.W_g[s]);
    pv.w_o_mu = tape.param(params.w_o_mu);
    pv.w_o_V = tape.param(params.w_o_V);
    pv.w_o_D = tape.param(params.w_o_D);
    pv.k_f_raw = tape.param(params.k_f_raw);
    return pv;
}

namespace {

Var gru_cell(Tape& t, const ParamVars::GruVars& g, Var input, Var h, Var ones_vh, int V) {
    const Var z = t.sigmoid(t.add(t.add(t.matmul(input, g.Wz), t.matmul(h, g.Uz)),
                                  t.replicate_rows(g.bz, V)));
    const Var r = t.sigmoid(t.add(t.add(t.matmul(input, g.Wr), t.matmul(h, g.Ur)),
                                  t.replicate_rows(g.br, V)));
    const Var hc = t.tanh(t.add(t.add(t.matmul(input, g.Wh), t.matmul(t.elem_mul(r, h), g.Uh)),
                                t.replicate_rows(g.bh, V)));
    return t.add(t.elem_mul(t.sub(ones_vh, z), h), t.elem_mul(z, hc));
}

Var smooth_branch(Tape& t, const ParamVars& pv, const ModelParams& params,
                  const SmoothingContext& ctx, int s, Var H) {
    const auto& cfg = params.cfg;
    const int V = params.num_links;
    const int W = cfg.branch_width;

    Var mixed;
    if (cfg.use_hetero_weights) {
        const Var kf = t.softplus(pv.k_f_raw);
        const Var ewd = t.exp(t.scalar_mul(kf, t.constant(-ctx.freq_norm))); // exp(-k_f F/maxF)
        const Var w_d = t.sub(t.constant(Mat::Ones(V, 1)), ewd);
        Var rs = t.add(w_d, t.elem_mul(ewd, t.constant(ctx.c_rowsum[s])));
        if (ctx.has_identity_rows) rs = t.add(rs, t.constant(ctx.identity_mask));
        const Var T1 = t.elem_mul(t.replicate_cols(w_d, W), H);
        const Var T2 = t.elem_mul(t.replicate_cols(ewd, W), t.matmul(t.constant(ctx.C_off[s]), H));
        mixed = t.elem_div(t.add(T1, T2), t.replicate_cols(rs, W));
        if (ctx.has_identity_rows) {
            // isolated links keep their own representation (self-weight 1)
            const Mat id_cols = ctx.identity_mask.replicate(1, W);
            const Mat ok_cols = (1.0 - ctx.identity_mask.array()).matrix().replicate(1, W);
            mixed = t.add(t.elem_mul(t.constant(ok_cols), mixed), t.elem_mul(t.constant(id_cols), H));
        }
    } else {
        mixed = t.matmul(t.constant(ctx.lambda_hom[s]), H);
    }
    const Var out = t.matmul(mixed, pv.W_g[s]);
    return cfg.tanh_smoothing ? t.tanh(out) : out;
}

} // namespace

ad::Var temporal_hidden(Tape& t, const ParamVars& pv, const ModelParams& params,
                        const Mat& window_norm) {
    const auto& cfg = params.cfg;
    const int V = params.num_links;
    if (window_norm.rows() != cfg.eta || window_norm.cols() != V)
        throw dimension_error("temporal_hidden: window is " + std::to_string(window_norm.rows()) + "x" +
                              std::to_string(window_norm.cols()) + ", expected " +
                              std::to_string(cfg.eta) + "x" + std::to_string(V));

    const Var ones_vh = t.constant(Mat::Ones(V, cfg.gru_hidden));
    std::vector<Var> h(params.gru.size(), t.constant(Mat::Zero(V, cfg.gru_hidden)));
    for (int step = 0; step < cfg.eta; ++step) {
        Var input = t.constant(window_norm.row(step).transpose());
        for (std::size_t layer = 0; layer < params.gru.size(); ++layer) {
            h[layer] = gru_cell(t, pv.gru[layer], input, h[layer], ones_vh, V);
            input = h[layer];
        }
    }
    return t.add(t.matmul(h.back(), pv.proj_W), t.replicate_rows(pv.proj_b, V));
}

StateVars forward_state(Tape& t, const ParamVars& pv, const ModelParams& params,
                        const Mat& window_norm, const SmoothingContext& ctx) {
    const auto& cfg = params.cfg;
    StateVars sv;
    sv.h_hidden = temporal_hidden(t, pv, params, window_norm);
    const Var x_i = t.concat_cols(sv.h_hidden, pv.embedding);

    for (int s = 0; s < 4; ++s) {
        Var H = t.matmul(x_i, pv.w_h[s]);
        sv.H_new[s] = cfg.use_smoothing ? smooth_branch(t, pv, params, ctx, s, H) : H;
    }
    sv.mu = t.matmul(sv.H_new[kMu], pv.w_o_mu);
    sv.L = sv.H_new[kL];
    sv.v = t.softplus(t.matmul(sv.H_new[kV], pv.w_o_V));
    sv.d = t.softplus(t.matmul(sv.H_new[kD], pv.w_o_D));
    return sv;
}

EncoderOutput encode_slot(const ModelParams& params, const Mat& window_norm,
                          const SmoothingContext& ctx, int slot) {
    Tape tape;
    const ParamVars pv = register_params(tape, params);
    const StateVars sv = forward_state(tape, pv, params, window_norm, ctx);
    EncoderOutput out;
    out.slot = slot;
    for (int s = 0; s < 4; ++s) out.H_new[s] = tape.value(sv.H_new[s]);
    out.state.slot = slot;
    out.state.mu = tape.value(sv.mu).col(0);
    out.state.L = tape.value(sv.L);
    out.state.v = tape.value(sv.v).col(0);
    out.state.d = tape.value(sv.d).col(0);
    return out;
}

LinkStateValues heads_values(const ModelParams& params, const std::array<Mat, 4>& H_new, int slot) {
    const auto softplus_vec = [](const Mat& x) {
        return Vec(x.unaryExpr([](double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); })
                       .col(0));
    };
    LinkStateValues st;
    st.slot = slot;
    st.mu = (H_new[kMu] * params.w_o_mu).col(0);
    st.L = H_new[kL];
    st.v = softplus_vec(H_new[kV] * params.w_o_V);
    st.d = softplus_vec(H_new[kD] * params.w_o_D);
    return st;
}

EncoderOutput interpolate_state(const EncoderOutput& at_t, const EncoderOutput& at_next,
                                double fraction, const ModelParams& params) {
    if (!(fraction >= 0.0 && fraction <= 1.0))
        throw schema_error("interpolate: fraction " + std::to_string(fraction) + " outside [0,1]");
    if (at_next.slot != at_t.slot + 1)
        throw schema_error("interpolate: states must come from consecutive slots");
    if (fraction == 0.0) return at_t;
    if (fraction == 1.0) return at_next;

    EncoderOutput out;
    out.slot = at_t.slot;
    for (int s = 0; s < 4; ++s)
        out.H_new[s] = (1.0 - fraction) * at_t.H_new[s] + fraction * at_next.H_new[s];
    out.state = heads_values(params, out.H_new, at_t.slot);
    return out;
}

} // namespace sptte
