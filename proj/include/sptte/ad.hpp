#ifndef SPTTE_AD_HPP
#define SPTTE_AD_HPP

#include <Eigen/Dense>
#include <array>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "sptte/blocks.hpp"
#include "sptte/common.hpp"

namespace sptte::ad {

using Mat = Eigen::MatrixXd;

struct Var {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

enum class Op : std::uint8_t {
    Const, Param,
    Add, Sub, ElemMul, ElemDiv, MatMul, Transpose,
    ScaleConst, ScalarMulVar, GatherRows, ConcatCols,
    ReplicateRows, ReplicateCols, SumAll, MeanAll,
    Softplus, Sigmoid, Tanh, Exp, Log, Square, Sqrt,
    FrobSq, Trace,
    SpdFactor, SpdLogdet, SpdSolve,
    BlockNll,
};

const char* op_name(Op op);

/// Reverse-mode tape over dense 64-bit matrices. Scalars are 1x1. No
/// broadcasting: shapes must match exactly, with explicit replicate ops.
/// Forward values are checked for NaN/Inf and the tape aborts with
/// diagnostics on the first non-finite value. Single-threaded; independent
/// tapes may run concurrently.
class Tape {
public:
    Var constant(Mat m);
    Var param(Mat m);

    const Mat& value(Var x) const { return node(x).value; }
    double scalar_value(Var x) const;
    /// Accumulated adjoint of x (zeros if untouched by the last backward).
    Mat grad(Var x) const;

    void backward(Var root);
    void reset_adjoints();
    std::size_t num_nodes() const { return nodes_.size(); }

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var elem_mul(Var a, Var b);
    Var elem_div(Var a, Var b);
    Var matmul(Var a, Var b);
    Var transpose(Var a);
    Var scale(Var a, double c);
    Var scalar_mul(Var s, Var x); // s is 1x1
    Var gather_rows(Var a, std::vector<int> idx);
    Var concat_cols(Var a, Var b);
    Var replicate_rows(Var a, int m); // 1xn -> mxn
    Var replicate_cols(Var a, int n); // mx1 -> mxn
    Var sum(Var a);
    Var mean(Var a);
    Var softplus(Var a);
    Var sigmoid(Var a);
    Var tanh(Var a);
    Var exp(Var a);
    Var log(Var a);
    Var square(Var a);
    Var sqrt(Var a);
    Var frobenius_sq(Var a);
    Var trace(Var a);

    /// log det and linear solve of a small SPD matrix via Cholesky, with the
    /// escalating jitter policy applied inside (j = rel * tr(M)/n, which the
    /// adjoints account for). Returns (logdet, M^{-1} r).
    std::pair<Var, Var> spd_logdet_and_solve(Var M, Var r,
                                             const JitterPolicy& policy = JitterPolicy::likelihood());

    /// Fused negative log-likelihood of all trip blocks of a batch given the
    /// slot state (mu, L, v, d). Forward/backward loop over blocks serially or
    /// with OpenMP; results are bitwise independent of the thread count.
    Var block_nll(Var mu, Var L, Var v, Var d, std::shared_ptr<const BatchBlocks> batch,
                  const JitterPolicy& policy = JitterPolicy::likelihood(), int threads = 1);

    /// Per-block diagnostics (jitter levels, block NLLs) of a BlockNll node.
    const NllResult& block_nll_result(Var x) const;

private:
    struct SpdExtra {
        double rel_level = 0.0;
        std::shared_ptr<std::vector<int>> gather; // reused slot for GatherRows
    };
    struct Node {
        Op op;
        std::array<int, 4> in{-1, -1, -1, -1};
        Mat value;
        Mat adjoint;
        bool needs_grad = false;
        double scalar = 0.0; // ScaleConst factor / jitter rel level
        int i0 = 0;          // concat split / replicate count
        std::shared_ptr<std::vector<int>> gather;
        std::shared_ptr<NllResult> nll;
        std::shared_ptr<const BatchBlocks> batch;
        int nll_threads = 1;
    };

    Node& node(Var x) { return nodes_.at(static_cast<std::size_t>(x.idx)); }
    const Node& node(Var x) const { return nodes_.at(static_cast<std::size_t>(x.idx)); }
    Var push(Node n);
    void accum(int idx, const Mat& m);
    void check_finite(const Node& n, int idx) const;
    void backward_node(int idx);

    std::vector<Node> nodes_;
};

/// Finite-difference verification of analytic gradients.
/// Tensors with at most `coord_threshold` entries are checked per coordinate
/// with central differences; larger tensors use `probes` random directional
/// probes. Per-tensor relative error is
///   max|analytic - fd| / max(||analytic||_inf, ||fd||_inf, 1e-6).
struct GradCheckReport {
    struct Entry {
        std::string name;
        double max_rel = 0.0;
        double max_abs = 0.0;
        bool probed = false;
    };
    std::vector<Entry> entries;
    double max_rel = 0.0;
    bool passed(double tol) const { return max_rel < tol; }
};

GradCheckReport grad_check(const std::function<double(const std::vector<Mat>&)>& f,
                           const std::vector<Mat>& params,
                           const std::vector<Mat>& analytic,
                           const std::vector<std::string>& names,
                           double eps = 1e-5, int coord_threshold = 512, int probes = 8,
                           std::uint64_t seed = 1234);

} // namespace sptte::ad

#endif
