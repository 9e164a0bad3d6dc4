#include "sptte/ad.hpp"

#include <cmath>

namespace sptte::ad {

namespace {

std::string shape_of(const Mat& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

[[noreturn]] void shape_fail(const char* what, const Mat& a, const Mat& b) {
    throw dimension_error(std::string(what) + ": shapes " + shape_of(a) + " and " + shape_of(b));
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double stable_softplus(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

} // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::Const: return "const";
        case Op::Param: return "param";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::ElemMul: return "elem_mul";
        case Op::ElemDiv: return "elem_div";
        case Op::MatMul: return "matmul";
        case Op::Transpose: return "transpose";
        case Op::ScaleConst: return "scale";
        case Op::ScalarMulVar: return "scalar_mul";
        case Op::GatherRows: return "gather_rows";
        case Op::ConcatCols: return "concat_cols";
        case Op::ReplicateRows: return "replicate_rows";
        case Op::ReplicateCols: return "replicate_cols";
        case Op::SumAll: return "sum";
        case Op::MeanAll: return "mean";
        case Op::Softplus: return "softplus";
        case Op::Sigmoid: return "sigmoid";
        case Op::Tanh: return "tanh";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Square: return "square";
        case Op::Sqrt: return "sqrt";
        case Op::FrobSq: return "frobenius_sq";
        case Op::Trace: return "trace";
        case Op::SpdFactor: return "spd_factor";
        case Op::SpdLogdet: return "spd_logdet";
        case Op::SpdSolve: return "spd_solve";
        case Op::BlockNll: return "block_nll";
    }
    return "?";
}

void Tape::check_finite(const Node& n, int idx) const {
    if (!n.value.allFinite())
        throw numeric_error(std::string("non-finite forward value in node ") + std::to_string(idx) +
                            " (" + op_name(n.op) + ", " + shape_of(n.value) + ")");
}

Var Tape::push(Node n) {
    const int idx = static_cast<int>(nodes_.size());
    check_finite(n, idx);
    nodes_.push_back(std::move(n));
    return Var{idx};
}

Var Tape::constant(Mat m) {
    Node n;
    n.op = Op::Const;
    n.value = std::move(m);
    n.needs_grad = false;
    return push(std::move(n));
}

Var Tape::param(Mat m) {
    Node n;
    n.op = Op::Param;
    n.value = std::move(m);
    n.needs_grad = true;
    return push(std::move(n));
}

double Tape::scalar_value(Var x) const {
    const Mat& v = value(x);
    if (v.rows() != 1 || v.cols() != 1)
        throw dimension_error("scalar_value: node is " + shape_of(v));
    return v(0, 0);
}

Mat Tape::grad(Var x) const {
    const Node& n = node(x);
    if (n.adjoint.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.adjoint;
}

void Tape::reset_adjoints() {
    for (auto& n : nodes_) n.adjoint.resize(0, 0);
}

void Tape::accum(int idx, const Mat& m) {
    Node& n = nodes_[static_cast<std::size_t>(idx)];
    if (!n.needs_grad) return;
    if (n.adjoint.size() == 0)
        n.adjoint = m;
    else
        n.adjoint += m;
}

#define SPTTE_BINOP_PROLOGUE(a, b)                              \
    Node n;                                                     \
    n.in[0] = a.idx;                                            \
    n.in[1] = b.idx;                                            \
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;    \
    const Mat& va = node(a).value;                              \
    const Mat& vb = node(b).value;

#define SPTTE_UNOP_PROLOGUE(a)              \
    Node n;                                 \
    n.in[0] = a.idx;                        \
    n.needs_grad = node(a).needs_grad;      \
    const Mat& va = node(a).value;

Var Tape::add(Var a, Var b) {
    SPTTE_BINOP_PROLOGUE(a, b)
    if (va.rows() != vb.rows() || va.cols() != vb.cols()) shape_fail("add", va, vb);
    n.op = Op::Add;
    n.value = va + vb;
    return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
    SPTTE_BINOP_PROLOGUE(a, b)
    if (va.rows() != vb.rows() || va.cols() != vb.cols()) shape_fail("sub", va, vb);
    n.op = Op::Sub;
    n.value = va - vb;
    return push(std::move(n));
}

Var Tape::elem_mul(Var a, Var b) {
    SPTTE_BINOP_PROLOGUE(a, b)
    if (va.rows() != vb.rows() || va.cols() != vb.cols()) shape_fail("elem_mul", va, vb);
    n.op = Op::ElemMul;
    n.value = va.cwiseProduct(vb);
    return push(std::move(n));
}

Var Tape::elem_div(Var a, Var b) {
    SPTTE_BINOP_PROLOGUE(a, b)
    if (va.rows() != vb.rows() || va.cols() != vb.cols()) shape_fail("elem_div", va, vb);
    n.op = Op::ElemDiv;
    n.value = va.cwiseQuotient(vb);
    return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
    SPTTE_BINOP_PROLOGUE(a, b)
    if (va.cols() != vb.rows()) shape_fail("matmul", va, vb);
    n.op = Op::MatMul;
    n.value = va * vb;
    return push(std::move(n));
}

Var Tape::transpose(Var a) {
    SPTTE_UNOP_PROLOGUE(a)
    n.op = Op::Transpose;
    n.value = va.transpose();
    return push(std::move(n));
}

Var Tape::scale(Var a, double c) {
    SPTTE_UNOP_PROLOGUE(a)
    n.op = Op::ScaleConst;
    n.scalar = c;
    n.value = c * va;
    return push(std::move(n));
}

Var Tape::scalar_mul(Var s, Var x) {
    SPTTE_BINOP_PROLOGUE(s, x)
    if (va.rows() != 1 || va.cols() != 1) shape_fail("scalar_mul: first operand must be 1x1", va, vb);
    n.op = Op::ScalarMulVar;
    n.value = va(0, 0) * vb;
    return push(std::move(n));
}

Var Tape::gather_rows(Var a, std::vector<int> idx) {
    SPTTE_UNOP_PROLOGUE(a)
    n.op = Op::GatherRows;
    n.value = Mat(static_cast<int>(idx.size()), va.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= va.rows())
            throw dimension_error("gather_rows: index " + std::to_string(idx[i]) + " out of " +
                                  std::to_string(va.rows()) + " rows");
        n.value.row(static_cast<int>(i)) = va.row(idx[i]);
    }
    n.gather = std::make_shared<std::vector<int>>(std::move(idx));
    return push(std::move(n));
}

Var Tape::concat_cols(Var a, Var b) {
    SPTTE_BINOP_PROLOGUE(a, b)
    if (va.rows() != vb.rows()) shape_fail("concat_cols", va, vb);
    n.op = Op::ConcatCols;
    n.i0 = static_cast<int>(va.cols());
    n.value = Mat(va.rows(), va.cols() + vb.cols());
    n.value << va, vb;
    return push(std::move(n));
}

Var Tape::replicate_rows(Var a, int m) {
    SPTTE_UNOP_PROLOGUE(a)
    if (va.rows() != 1) throw dimension_error("replicate_rows: input is " + shape_of(va) + ", expected 1xN");
    n.op = Op::ReplicateRows;
    n.i0 = m;
    n.value = va.replicate(m, 1);
    return push(std::move(n));
}

Var Tape::replicate_cols(Var a, int ncols) {
    SPTTE_UNOP_PROLOGUE(a)
    if (va.cols() != 1) throw dimension_error("replicate_cols: input is " + shape_of(va) + ", expected Nx1");
    n.op = Op::ReplicateCols;
    n.i0 = ncols;
    n.value = va.replicate(1, ncols);
    return push(std::move(n));
}

Var Tape::sum(Var a) {
    SPTTE_UNOP_PROLOGUE(a)
    n.op = Op::SumAll;
    n.value = Mat::Constant(1, 1, va.sum());
    return push(std::move(n));
}

Var Tape::mean(Var a) {
    SPTTE_UNOP_PROLOGUE(a)
    n.op = Op::MeanAll;
    n.value = Mat::Constant(1, 1, va.mean());
    return push(std::move(n));
}

Var Tape::softplus(Var a) {
    SPTTE_UNOP_PROLOGUE(a)
    n.op = Op::Softplus;
    n.value = va.unaryExpr([](double x) { return stable_softplus(x); });
    return push(std::move(n));
}

Var Tape::sigmoid(Var a) {
    SPTTE_UNOP_PROLOGUE(a)
    n.op = Op::Sigmoid;
    n.value = va.unaryExpr([](double x) { return stable_sigmoid(x); });
    return push(std::move(n));
}

Var Tape::tanh(Var a) {
    SPTTE_UNOP_PROLOGUE(a)
    n.op = Op::Tanh;
    n.value = va.array().tanh();
    return push(std::move(n));
}

Var Tape::exp(Var a) {
    SPTTE_UNOP_PROLOGUE(a)
    n.op = Op::Exp;
    n.value = va.array().exp();
    return push(std::move(n));
}

Var Tape::log(Var a) {
    SPTTE_UNOP_PROLOGUE(a)
    n.op = Op::Log;
    n.value = va.array().log();
    return push(std::move(n));
}

Var Tape::square(Var a) {
    SPTTE_UNOP_PROLOGUE(a)
    n.op = Op::Square;
    n.value = va.array().square();
    return push(std::move(n));
}

Var Tape::sqrt(Var a) {
    SPTTE_UNOP_PROLOGUE(a)
    n.op = Op::Sqrt;
    n.value = va.array().sqrt();
    return push(std::move(n));
}

Var Tape::frobenius_sq(Var a) {
    SPTTE_UNOP_PROLOGUE(a)
    n.op = Op::FrobSq;
    n.value = Mat::Constant(1, 1, va.squaredNorm());
    return push(std::move(n));
}

Var Tape::trace(Var a) {
    SPTTE_UNOP_PROLOGUE(a)
    if (va.rows() != va.cols()) throw dimension_error("trace: input is " + shape_of(va));
    n.op = Op::Trace;
    n.value = Mat::Constant(1, 1, va.trace());
    return push(std::move(n));
}

std::pair<Var, Var> Tape::spd_logdet_and_solve(Var M, Var r, const JitterPolicy& policy) {
    const Mat& vm = node(M).value;
    const Mat& vr = node(r).value;
    if (vm.rows() != vm.cols()) throw dimension_error("spd: matrix is " + shape_of(vm));
    if (vr.rows() != vm.rows() || vr.cols() != 1) shape_fail("spd: rhs", vm, vr);
    const double scale = std::max(1.0, vm.cwiseAbs().maxCoeff());
    if ((vm - vm.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
        throw numeric_error("spd: matrix is not symmetric within 1e-10");

    const JitteredChol jc = jittered_cholesky(vm, policy);
    const int sz = static_cast<int>(vm.rows());

    Node f;
    f.op = Op::SpdFactor;
    f.in[0] = M.idx;
    f.needs_grad = node(M).needs_grad;
    f.value = jc.llt.matrixL();
    f.scalar = jc.rel_level;
    const Var factor = push(std::move(f));

    Node ld;
    ld.op = Op::SpdLogdet;
    ld.in[0] = factor.idx;
    ld.needs_grad = node(factor).needs_grad;
    double logdet = 0.0;
    const Mat& Lf = node(factor).value;
    for (int i = 0; i < sz; ++i) logdet += 2.0 * std::log(Lf(i, i));
    ld.value = Mat::Constant(1, 1, logdet);
    const Var logdet_var = push(std::move(ld));

    Node sv;
    sv.op = Op::SpdSolve;
    sv.in[0] = factor.idx;
    sv.in[1] = r.idx;
    sv.needs_grad = node(factor).needs_grad || node(r).needs_grad;
    // re-fetch: pushes may have reallocated the node storage
    sv.value = jc.llt.solve(node(r).value);
    const Var solve_var = push(std::move(sv));
    return {logdet_var, solve_var};
}

Var Tape::block_nll(Var mu, Var L, Var v, Var d, std::shared_ptr<const BatchBlocks> batch,
                    const JitterPolicy& policy, int threads) {
    const Mat& vmu = node(mu).value;
    const Mat& vL = node(L).value;
    const Mat& vv = node(v).value;
    const Mat& vd = node(d).value;
    const auto V = vmu.rows();
    if (vmu.cols() != 1 || vv.cols() != 1 || vd.cols() != 1 || vv.rows() != V || vd.rows() != V ||
        vL.rows() != V)
        throw dimension_error("block_nll: state shapes mu=" + shape_of(vmu) + " L=" + shape_of(vL) +
                              " v=" + shape_of(vv) + " d=" + shape_of(vd));

    LinkStateValues state;
    state.mu = vmu.col(0);
    state.L = vL;
    state.v = vv.col(0);
    state.d = vd.col(0);

    Node n;
    n.op = Op::BlockNll;
    n.in = {mu.idx, L.idx, v.idx, d.idx};
    n.needs_grad = node(mu).needs_grad || node(L).needs_grad || node(v).needs_grad || node(d).needs_grad;
    n.batch = std::move(batch);
    n.nll_threads = threads;
    n.nll = std::make_shared<NllResult>(batch_nll_parallel(state, *n.batch, policy, threads));
    n.value = Mat::Constant(1, 1, n.nll->nll);
    return push(std::move(n));
}

const NllResult& Tape::block_nll_result(Var x) const {
    const Node& n = node(x);
    if (n.op != Op::BlockNll || !n.nll) throw dimension_error("block_nll_result: not a BlockNll node");
    return *n.nll;
}

void Tape::backward(Var root) {
    Node& r = node(root);
    if (r.value.rows() != 1 || r.value.cols() != 1)
        throw dimension_error("backward: root must be scalar, got " + shape_of(r.value));
    r.adjoint = Mat::Constant(1, 1, 1.0);
    for (int i = root.idx; i >= 0; --i) backward_node(i);
}

void Tape::backward_node(int idx) {
    Node& n = nodes_[static_cast<std::size_t>(idx)];
    if (n.adjoint.size() == 0 || !n.needs_grad) return;
    const Mat& up = n.adjoint;
    switch (n.op) {
        case Op::Const:
        case Op::Param:
            break;
        case Op::Add:
            accum(n.in[0], up);
            accum(n.in[1], up);
            break;
        case Op::Sub:
            accum(n.in[0], up);
            accum(n.in[1], -up);
            break;
        case Op::ElemMul:
            accum(n.in[0], up.cwiseProduct(nodes_[n.in[1]].value));
            accum(n.in[1], up.cwiseProduct(nodes_[n.in[0]].value));
            break;
        case Op::ElemDiv: {
            const Mat& vb = nodes_[n.in[1]].value;
            accum(n.in[0], up.cwiseQuotient(vb));
            accum(n.in[1], -up.cwiseProduct(n.value).cwiseQuotient(vb));
            break;
        }
        case Op::MatMul:
            accum(n.in[0], up * nodes_[n.in[1]].value.transpose());
            accum(n.in[1], nodes_[n.in[0]].value.transpose() * up);
            break;
        case Op::Transpose:
            accum(n.in[0], up.transpose());
            break;
        case Op::ScaleConst:
            accum(n.in[0], n.scalar * up);
            break;
        case Op::ScalarMulVar: {
            const double s = nodes_[n.in[0]].value(0, 0);
            accum(n.in[1], s * up);
            accum(n.in[0], Mat::Constant(1, 1, up.cwiseProduct(nodes_[n.in[1]].value).sum()));
            break;
        }
        case Op::GatherRows: {
            const Mat& va = nodes_[n.in[0]].value;
            Mat g = Mat::Zero(va.rows(), va.cols());
            const auto& idxs = *n.gather;
            for (std::size_t i = 0; i < idxs.size(); ++i) g.row(idxs[i]) += up.row(static_cast<int>(i));
            accum(n.in[0], g);
            break;
        }
        case Op::ConcatCols:
            accum(n.in[0], up.leftCols(n.i0));
            accum(n.in[1], up.rightCols(up.cols() - n.i0));
            break;
        case Op::ReplicateRows:
            accum(n.in[0], up.colwise().sum());
            break;
        case Op::ReplicateCols:
            accum(n.in[0], up.rowwise().sum());
            break;
        case Op::SumAll: {
            const Mat& va = nodes_[n.in[0]].value;
            accum(n.in[0], Mat::Constant(va.rows(), va.cols(), up(0, 0)));
            break;
        }
        case Op::MeanAll: {
            const Mat& va = nodes_[n.in[0]].value;
            accum(n.in[0], Mat::Constant(va.rows(), va.cols(), up(0, 0) / static_cast<double>(va.size())));
            break;
        }
        case Op::Softplus:
            accum(n.in[0], up.cwiseProduct(nodes_[n.in[0]].value.unaryExpr(
                               [](double x) { return stable_sigmoid(x); })));
            break;
        case Op::Sigmoid:
            accum(n.in[0], up.cwiseProduct((n.value.array() * (1.0 - n.value.array())).matrix()));
            break;
        case Op::Tanh:
            accum(n.in[0], up.cwiseProduct((1.0 - n.value.array().square()).matrix()));
            break;
        case Op::Exp:
            accum(n.in[0], up.cwiseProduct(n.value));
            break;
        case Op::Log:
            accum(n.in[0], up.cwiseQuotient(nodes_[n.in[0]].value));
            break;
        case Op::Square:
            accum(n.in[0], 2.0 * up.cwiseProduct(nodes_[n.in[0]].value));
            break;
        case Op::Sqrt:
            accum(n.in[0], (up.array() / (2.0 * n.value.array())).matrix());
            break;
        case Op::FrobSq:
            accum(n.in[0], 2.0 * up(0, 0) * nodes_[n.in[0]].value);
            break;
        case Op::Trace: {
            const Mat& va = nodes_[n.in[0]].value;
            accum(n.in[0], up(0, 0) * Mat::Identity(va.rows(), va.cols()));
            break;
        }
        case Op::SpdFactor: {
            // adjoint holds Mbar w.r.t. the jittered matrix; chain through
            // j = rel * tr(M)/n
            const int sz = static_cast<int>(n.value.rows());
            Mat mbar = up;
            mbar.diagonal().array() += (n.scalar / sz) * up.trace();
            accum(n.in[0], mbar);
            break;
        }
        case Op::SpdLogdet: {
            Node& f = nodes_[n.in[0]];
            const int sz = static_cast<int>(f.value.rows());
            Mat Minv = Mat::Identity(sz, sz);
            f.value.triangularView<Eigen::Lower>().solveInPlace(Minv);
            f.value.transpose().triangularView<Eigen::Upper>().solveInPlace(Minv);
            accum(n.in[0], up(0, 0) * Minv);
            break;
        }
        case Op::SpdSolve: {
            Node& f = nodes_[n.in[0]];
            Mat z = up;
            f.value.triangularView<Eigen::Lower>().solveInPlace(z);
            f.value.transpose().triangularView<Eigen::Upper>().solveInPlace(z);
            accum(n.in[1], z);
            // symmetrized adjoint: -1/2 (z y^T + y z^T)
            accum(n.in[0], -0.5 * (z * n.value.transpose() + n.value * z.transpose()));
            break;
        }
        case Op::BlockNll: {
            LinkStateValues state;
            state.mu = nodes_[n.in[0]].value.col(0);
            state.L = nodes_[n.in[1]].value;
            state.v = nodes_[n.in[2]].value.col(0);
            state.d = nodes_[n.in[3]].value.col(0);
            const StateGrads g =
                batch_nll_backward(state, *n.batch, *n.nll, up(0, 0), n.nll_threads);
            accum(n.in[0], g.gmu);
            accum(n.in[1], g.gL);
            accum(n.in[2], g.gv);
            accum(n.in[3], g.gd);
            break;
        }
    }
}

#undef SPTTE_BINOP_PROLOGUE
#undef SPTTE_UNOP_PROLOGUE

GradCheckReport grad_check(const std::function<double(const std::vector<Mat>&)>& f,
                           const std::vector<Mat>& params, const std::vector<Mat>& analytic,
                           const std::vector<std::string>& names, double eps, int coord_threshold,
                           int probes, std::uint64_t seed) {
    if (params.size() != analytic.size())
        throw dimension_error("grad_check: params/analytic count mismatch");
    GradCheckReport report;
    Rng rng = make_rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<Mat> work = params;
    for (std::size_t t = 0; t < params.size(); ++t) {
        GradCheckReport::Entry entry;
        entry.name = t < names.size() ? names[t] : ("tensor" + std::to_string(t));
        const Mat& p = params[t];
        const Mat& g = analytic[t];
        double denom = std::max(g.cwiseAbs().maxCoeff(), 1e-6);

        if (p.size() <= coord_threshold) {
            Mat fd(p.rows(), p.cols());
            for (int i = 0; i < p.rows(); ++i) {
                for (int j = 0; j < p.cols(); ++j) {
                    const double orig = work[t](i, j);
                    const double h = eps * std::max(1.0, std::abs(orig));
                    work[t](i, j) = orig + h;
                    const double fp = f(work);
                    work[t](i, j) = orig - h;
                    const double fm = f(work);
                    work[t](i, j) = orig;
                    fd(i, j) = (fp - fm) / (2.0 * h);
                }
            }
            denom = std::max(denom, fd.cwiseAbs().maxCoeff());
            entry.max_abs = (g - fd).cwiseAbs().maxCoeff();
            entry.max_rel = entry.max_abs / denom;
        } else {
            entry.probed = true;
            for (int k = 0; k < probes; ++k) {
                Mat u(p.rows(), p.cols());
                for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = gauss(rng);
                u /= u.norm();
                const double h = eps * std::max(1.0, p.cwiseAbs().maxCoeff());
                work[t] = p + h * u;
                const double fp = f(work);
                work[t] = p - h * u;
                const double fm = f(work);
                work[t] = p;
                const double fd = (fp - fm) / (2.0 * h);
                const double an = g.cwiseProduct(u).sum();
                const double abs_err = std::abs(an - fd);
                const double dn = std::max({std::abs(an), std::abs(fd), 1e-6});
                entry.max_abs = std::max(entry.max_abs, abs_err);
                entry.max_rel = std::max(entry.max_rel, abs_err / dn);
            }
        }
        report.max_rel = std::max(report.max_rel, entry.max_rel);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

} // namespace sptte::ad
