#include "sptte/graph.hpp"

#include <algorithm>
#include <cmath>

namespace sptte {

void RoadNetwork::validate() const {
    if (num_links <= 0) throw schema_error("network: num_links must be positive");
    if (static_cast<int>(prior_features.size()) != num_links)
        throw schema_error("network: prior_features size " + std::to_string(prior_features.size()) +
                           " != num_links " + std::to_string(num_links));
    const int h = feature_dim();
    if (h < 1) throw schema_error("network: feature dimension must be >= 1");
    for (int l = 0; l < num_links; ++l) {
        if (static_cast<int>(prior_features[l].size()) != h)
            throw schema_error("network: link " + std::to_string(l) + " has feature dim " +
                               std::to_string(prior_features[l].size()) + ", expected " + std::to_string(h));
    }
    for (const auto& [a, b] : edges) {
        if (a == b) throw schema_error("network: self-edge on link " + std::to_string(a));
        if (a < 0 || b < 0 || a >= num_links || b >= num_links)
            throw schema_error("network: edge (" + std::to_string(a) + "," + std::to_string(b) +
                               ") out of range");
    }
}

void RoadNetwork::build_adjacency() {
    neighbors.assign(num_links, {});
    for (const auto& [a, b] : edges) {
        neighbors[a].push_back(b);
        neighbors[b].push_back(a);
    }
    for (auto& ns : neighbors) {
        std::sort(ns.begin(), ns.end());
        ns.erase(std::unique(ns.begin(), ns.end()), ns.end());
    }
}

double SparseWeights::at(int r, int c) const {
    for (const auto& [col, v] : rows[r])
        if (col == c) return v;
    return 0.0;
}

double SparseWeights::row_sum(int r) const {
    double s = 0.0;
    for (const auto& [col, v] : rows[r]) s += v;
    return s;
}

Eigen::MatrixXd SparseWeights::dense() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (int r = 0; r < n; ++r)
        for (const auto& [col, v] : rows[r]) m(r, col) = v;
    return m;
}

SparseWeights build_prior_similarity(const RoadNetwork& network,
                                     const std::vector<int>& feature_selector,
                                     bool adjacency_only, bool standardize) {
    network.validate();
    const int n = network.num_links;
    if (!adjacency_only && feature_selector.empty())
        throw schema_error("prior similarity: feature selector must name at least one feature");
    for (int f : feature_selector)
        if (f < 0 || f >= network.feature_dim())
            throw schema_error("prior similarity: feature index " + std::to_string(f) + " out of range");

    const int k = static_cast<int>(feature_selector.size());
    Eigen::MatrixXd feats(n, std::max(k, 1));
    if (!adjacency_only) {
        for (int l = 0; l < n; ++l)
            for (int j = 0; j < k; ++j) feats(l, j) = network.prior_features[l][feature_selector[j]];
        if (standardize) {
            for (int j = 0; j < k; ++j) {
                const double mean = feats.col(j).mean();
                const double var = (feats.col(j).array() - mean).square().sum() / n;
                const double sd = std::sqrt(var);
                if (sd > 0.0)
                    feats.col(j) = (feats.col(j).array() - mean) / sd;
                else
                    feats.col(j).setZero(); // constant feature carries no distance
            }
        }
    }

    SparseWeights P;
    P.n = n;
    P.rows.resize(n);
    for (int l = 0; l < n; ++l) {
        P.rows[l].emplace_back(l, 1.0);
        const auto& ns = l < static_cast<int>(network.neighbors.size()) ? network.neighbors[l]
                                                                        : std::vector<int>{};
        for (int l2 : ns) {
            double dist = 0.0;
            if (!adjacency_only) dist = (feats.row(l) - feats.row(l2)).norm();
            P.rows[l].emplace_back(l2, 1.0 / (1.0 + std::sqrt(dist)));
        }
        std::sort(P.rows[l].begin(), P.rows[l].end());
    }
    return P;
}

SparseWeights build_hetero_weights(const RoadNetwork& network,
                                   const std::vector<double>& freq, double k_f) {
    const int n = network.num_links;
    if (static_cast<int>(freq.size()) != n)
        throw dimension_error("hetero weights: freq size " + std::to_string(freq.size()) +
                              " != num_links " + std::to_string(n));
    if (!(k_f > 0.0)) throw schema_error("hetero weights: k_f must be positive");
    double fmax = 0.0;
    for (double f : freq) {
        if (f < 0.0) throw schema_error("hetero weights: negative frequency");
        fmax = std::max(fmax, f);
    }
    if (fmax <= 0.0) throw schema_error("hetero weights: max frequency is zero");

    SparseWeights W;
    W.n = n;
    W.rows.resize(n);
    for (int l = 0; l < n; ++l) {
        const double w_ll = 1.0 - std::exp(-k_f * freq[l] / fmax);
        W.rows[l].emplace_back(l, w_ll);
        const auto& ns = network.neighbors[l];
        if (ns.empty()) continue;
        double nbr_sum = 0.0;
        for (int l2 : ns) nbr_sum += freq[l2];
        for (int l2 : ns) {
            // 0/0 neighborhoods fall back to a uniform split
            const double ratio = nbr_sum > 0.0 ? freq[l2] / nbr_sum : 1.0 / static_cast<double>(ns.size());
            W.rows[l].emplace_back(l2, (1.0 - w_ll) * ratio);
        }
        std::sort(W.rows[l].begin(), W.rows[l].end());
    }
    return W;
}

SparseWeights build_edge_weights(const SparseWeights& P, const SparseWeights& W_f,
                                 SmoothingDiagnostics* diag) {
    if (P.n != W_f.n) throw dimension_error("edge weights: P is " + std::to_string(P.n) +
                                            "x, W_f is " + std::to_string(W_f.n) + "x");
    const int n = P.n;
    SparseWeights L;
    L.n = n;
    L.rows.resize(n);
    for (int r = 0; r < n; ++r) {
        std::vector<std::pair<int, double>> had;
        double sum = 0.0;
        for (const auto& [c, wv] : W_f.rows[r]) {
            const double pv = P.at(r, c);
            const double v = pv * wv;
            if (v != 0.0) {
                had.emplace_back(c, v);
                sum += v;
            }
        }
        if (sum <= 0.0) {
            L.rows[r].emplace_back(r, 1.0);
            if (diag) diag->identity_rows.push_back(r);
            continue;
        }
        for (auto& [c, v] : had) L.rows[r].emplace_back(c, v / sum);
        std::sort(L.rows[r].begin(), L.rows[r].end());
    }
    return L;
}

} // namespace sptte
