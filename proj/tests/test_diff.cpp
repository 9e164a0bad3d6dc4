#include <doctest.h>

#include <random>

#include "sptte/ad.hpp"
#include "test_util.hpp"

using namespace sptte;
using ad::Tape;
using ad::Var;

namespace {

// central finite difference of a scalar function of one tensor
Mat fd_grad(const std::function<double(const Mat&)>& f, const Mat& x, double h = 1e-5) {
    Mat g(x.rows(), x.cols());
    Mat w = x;
    for (int i = 0; i < x.rows(); ++i) {
        for (int j = 0; j < x.cols(); ++j) {
            const double step = h * std::max(1.0, std::abs(x(i, j)));
            w(i, j) = x(i, j) + step;
            const double fp = f(w);
            w(i, j) = x(i, j) - step;
            const double fm = f(w);
            w(i, j) = x(i, j);
            g(i, j) = (fp - fm) / (2.0 * step);
        }
    }
    return g;
}

double rel_err(const Mat& a, const Mat& b) {
    const double scale = std::max({a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(), 1e-6});
    return (a - b).cwiseAbs().maxCoeff() / scale;
}

} // namespace

TEST_CASE("softplus basics") {
    Tape t;
    const Var x = t.param(Mat::Zero(1, 1));
    const Var y = t.softplus(x);
    CHECK(t.scalar_value(y) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    t.backward(y);
    CHECK(t.grad(x)(0, 0) == doctest::Approx(0.5).epsilon(1e-12)); // sigmoid(0)
}

TEST_CASE("gradient of tr(A^T A) is 2A") {
    std::mt19937_64 rng(3);
    const Mat A = test::random_mat(3, 3, rng);
    Tape t;
    const Var a = t.param(A);
    const Var loss = t.trace(t.matmul(t.transpose(a), a));
    t.backward(loss);
    CHECK(rel_err(t.grad(a), 2.0 * A) < 1e-12);
    const Mat fd = fd_grad(
        [](const Mat& m) { return (m.transpose() * m).trace(); }, A);
    CHECK(rel_err(t.grad(a), fd) < 1e-7);
}

TEST_CASE("every primitive's adjoint matches finite differences") {
    std::mt19937_64 rng(17);
    const int R = 3, C = 4;
    const Mat A = test::random_mat(R, C, rng);
    const Mat B = test::random_mat(R, C, rng).array() + 3.0; // positive, away from /0
    const Mat M2 = test::random_mat(C, 2, rng);
    const Mat row = test::random_mat(1, C, rng);
    const Mat col = test::random_mat(R, 1, rng);
    const Mat s11 = Mat::Constant(1, 1, 0.7);

    struct Case {
        const char* name;
        std::function<Var(Tape&, Var)> build;
        Mat input;
    };
    // reduce each op to a scalar by summing; checks both the op value path
    // and its adjoint rule
    const std::vector<Case> cases = {
        {"add", [&](Tape& t, Var x) { return t.sum(t.add(x, t.constant(B))); }, A},
        {"sub", [&](Tape& t, Var x) { return t.sum(t.sub(t.constant(B), x)); }, A},
        {"elem_mul", [&](Tape& t, Var x) { return t.sum(t.elem_mul(x, t.constant(B))); }, A},
        {"elem_div_num", [&](Tape& t, Var x) { return t.sum(t.elem_div(x, t.constant(B))); }, A},
        {"elem_div_den", [&](Tape& t, Var x) { return t.sum(t.elem_div(t.constant(A), x)); }, B},
        {"matmul_left", [&](Tape& t, Var x) { return t.sum(t.matmul(x, t.constant(M2))); }, A},
        {"matmul_right", [&](Tape& t, Var x) { return t.sum(t.matmul(t.constant(A), x)); }, M2},
        {"transpose", [&](Tape& t, Var x) { return t.sum(t.elem_mul(t.transpose(x), t.constant(A.transpose()))); }, A},
        {"scale", [&](Tape& t, Var x) { return t.sum(t.scale(x, -2.5)); }, A},
        {"scalar_mul_s", [&](Tape& t, Var x) { return t.sum(t.scalar_mul(x, t.constant(A))); }, s11},
        {"scalar_mul_x", [&](Tape& t, Var x) { return t.sum(t.scalar_mul(t.constant(s11), x)); }, A},
        {"gather", [&](Tape& t, Var x) { return t.sum(t.gather_rows(x, {0, 2, 2, 1})); }, A},
        {"concat", [&](Tape& t, Var x) { return t.frobenius_sq(t.concat_cols(x, t.constant(B))); }, A},
        {"repl_rows", [&](Tape& t, Var x) { return t.sum(t.elem_mul(t.replicate_rows(x, R), t.constant(A))); }, row},
        {"repl_cols", [&](Tape& t, Var x) { return t.sum(t.elem_mul(t.replicate_cols(x, C), t.constant(A))); }, col},
        {"mean", [&](Tape& t, Var x) { return t.mean(x); }, A},
        {"softplus", [&](Tape& t, Var x) { return t.sum(t.softplus(x)); }, A},
        {"sigmoid", [&](Tape& t, Var x) { return t.sum(t.sigmoid(x)); }, A},
        {"tanh", [&](Tape& t, Var x) { return t.sum(t.tanh(x)); }, A},
        {"exp", [&](Tape& t, Var x) { return t.sum(t.exp(x)); }, A},
        {"log", [&](Tape& t, Var x) { return t.sum(t.log(x)); }, B},
        {"square", [&](Tape& t, Var x) { return t.sum(t.square(x)); }, A},
        {"sqrt", [&](Tape& t, Var x) { return t.sum(t.sqrt(x)); }, B},
        {"frob", [&](Tape& t, Var x) { return t.frobenius_sq(x); }, A},
    };

    for (const auto& c : cases) {
        CAPTURE(c.name);
        Tape t;
        const Var x = t.param(c.input);
        const Var loss = c.build(t, x);
        t.backward(loss);
        const Mat analytic = t.grad(x);
        const Mat fd = fd_grad(
            [&](const Mat& m) {
                Tape t2;
                const Var x2 = t2.param(m);
                return t2.scalar_value(c.build(t2, x2));
            },
            c.input);
        CHECK(rel_err(analytic, fd) < 1e-4);
    }
}

TEST_CASE("shape mismatches name both shapes") {
    Tape t;
    const Var a = t.param(Mat::Zero(2, 3));
    const Var b = t.param(Mat::Zero(3, 2));
    CHECK_THROWS_WITH_AS(t.add(a, b), doctest::Contains("2x3"), dimension_error);
}

TEST_CASE("non-finite forward values abort with diagnostics") {
    Tape t;
    const Var a = t.param(Mat::Zero(2, 2));
    CHECK_THROWS_AS(t.log(a), numeric_error);
}

TEST_CASE("spd_logdet_and_solve") {
    SUBCASE("identity: logdet 0, solve returns rhs") {
        Tape t;
        const Var M = t.param(Mat::Identity(3, 3));
        const Mat rv = (Mat(3, 1) << 1.0, -2.0, 0.5).finished();
        const Var r = t.constant(rv);
        const auto [ld, sol] = t.spd_logdet_and_solve(M, r);
        CHECK(t.scalar_value(ld) == doctest::Approx(0.0));
        CHECK((t.value(sol) - rv).cwiseAbs().maxCoeff() < 1e-14);
    }
    SUBCASE("1x1: diag(4), rhs 2") {
        Tape t;
        const Var M = t.param(Mat::Constant(1, 1, 4.0));
        const Var r = t.constant(Mat::Constant(1, 1, 2.0));
        const auto [ld, sol] = t.spd_logdet_and_solve(M, r);
        CHECK(t.scalar_value(ld) == doctest::Approx(std::log(4.0)).epsilon(1e-14));
        CHECK(t.value(sol)(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
    }
    SUBCASE("random SPD gradients match finite differences") {
        std::mt19937_64 rng(23);
        const Mat G = test::random_mat(4, 4, rng);
        const Mat M0 = G * G.transpose() + 4.0 * Mat::Identity(4, 4);
        const Mat rv = test::random_mat(4, 1, rng);

        Tape t;
        const Var M = t.param(M0);
        const Var rr = t.param(rv);
        const auto [ld, sol] = t.spd_logdet_and_solve(M, rr);
        const Var quad = t.sum(t.elem_mul(rr, sol));
        const Var loss = t.add(ld, quad);
        t.backward(loss);

        const auto scalar_loss = [&](const Mat& m, const Mat& r) {
            Tape t2;
            const Var M2 = t2.param(m);
            const Var r2 = t2.param(r);
            const auto [ld2, sol2] = t2.spd_logdet_and_solve(M2, r2);
            return t2.scalar_value(t2.add(ld2, t2.sum(t2.elem_mul(r2, sol2))));
        };
        // perturb symmetrically so the matrix stays symmetric
        Mat fdM(4, 4);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) {
                const double h = 1e-5;
                Mat mp = M0, mm = M0;
                mp(i, j) += h / 2;
                mp(j, i) += h / 2;
                mm(i, j) -= h / 2;
                mm(j, i) -= h / 2;
                fdM(i, j) = (scalar_loss(mp, rv) - scalar_loss(mm, rv)) / (2.0 * h);
            }
        // analytic adjoint is the symmetrized one; symmetric FD probes match it
        CHECK(rel_err(t.grad(M), fdM) < 1e-5);
        const Mat fdr = fd_grad([&](const Mat& r) { return scalar_loss(M0, r); }, rv);
        CHECK(rel_err(t.grad(rr), fdr) < 1e-6);
    }
}

TEST_CASE("backward is deterministic and idempotent after adjoint reset") {
    std::mt19937_64 rng(5);
    const Mat A = test::random_mat(3, 3, rng);
    Tape t;
    const Var a = t.param(A);
    const Var loss = t.frobenius_sq(t.matmul(a, t.transpose(a)));
    t.backward(loss);
    const Mat g1 = t.grad(a);
    t.reset_adjoints();
    t.backward(loss);
    const Mat g2 = t.grad(a);
    CHECK((g1 - g2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gradients are linear in the loss combination") {
    std::mt19937_64 rng(9);
    const Mat A = test::random_mat(2, 3, rng);
    const double alpha = 0.3, beta = -1.7;

    const auto grad_of = [&](const std::function<Var(Tape&, Var)>& f) {
        Tape t;
        const Var x = t.param(A);
        t.backward(f(t, x));
        return t.grad(x);
    };
    const auto f1 = [](Tape& t, Var x) { return t.frobenius_sq(x); };
    const auto f2 = [](Tape& t, Var x) { return t.sum(t.softplus(x)); };
    const Mat g1 = grad_of(f1);
    const Mat g2 = grad_of(f2);
    const Mat gc = grad_of([&](Tape& t, Var x) {
        return t.add(t.scale(f1(t, x), alpha), t.scale(f2(t, x), beta));
    });
    CHECK(rel_err(gc, alpha * g1 + beta * g2) < 1e-12);
}

TEST_CASE("grad_check helper: quadratic and stationary cases") {
    SUBCASE("||x||^2 at [1,2]") {
        const Mat x = (Mat(2, 1) << 1.0, 2.0).finished();
        const auto f = [](const std::vector<Mat>& p) { return p[0].squaredNorm(); };
        const std::vector<Mat> analytic = {2.0 * x};
        const auto report = ad::grad_check(f, {x}, analytic, {"x"});
        CHECK(report.max_rel < 1e-8);
    }
    SUBCASE("constructed stationary point") {
        const Mat x = Mat::Zero(3, 1);
        const auto f = [](const std::vector<Mat>& p) { return p[0].squaredNorm(); };
        const std::vector<Mat> analytic = {Mat::Zero(3, 1)};
        const auto report = ad::grad_check(f, {x}, analytic, {"x"});
        CHECK(report.max_rel < 1e-4);
    }
    SUBCASE("wrong gradient is caught") {
        const Mat x = (Mat(2, 1) << 1.0, 2.0).finished();
        const auto f = [](const std::vector<Mat>& p) { return p[0].squaredNorm(); };
        const std::vector<Mat> analytic = {3.0 * x};
        const auto report = ad::grad_check(f, {x}, analytic, {"x"});
        CHECK(report.max_rel > 0.1);
    }
}
