#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <random>

#include "pcbf/solver.hpp"
#include "support/oracle_qp.hpp"

using namespace pcbf;

namespace {

QpProblem scalar_bound_qp() {
    // min z^2 s.t. z >= 1
    Mat H(1, 1), Ain(1, 1);
    H << 2.0;
    Ain << -1.0;
    Vec g = Vec::Zero(1), bin(1);
    bin << -1.0;
    return QpProblem::dense(H, g, Mat(0, 1), Vec(0), Ain, bin);
}

struct RandomQp {
    QpProblem qp;
    Mat H, Aeq, Ain;
    Vec g, beq, bin;
};

RandomQp random_strictly_convex_qp(std::mt19937_64& rng, int n) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto randn_mat = [&](int r, int c) {
        Mat M(r, c);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) M(i, j) = gauss(rng);
        return M;
    };
    RandomQp out;
    Mat M = randn_mat(n, n);
    out.H = M.transpose() * M + Mat::Identity(n, n);
    out.g = randn_mat(n, 1);
    const int me = n >= 4 ? 2 : 0;
    const int mi = 2 * n;
    out.Aeq = randn_mat(me, n);
    out.Ain = randn_mat(mi, n);
    Vec z_feas = randn_mat(n, 1);
    out.beq = out.Aeq * z_feas;
    out.bin = out.Ain * z_feas + Vec::Constant(mi, 0.5);
    out.qp = QpProblem::dense(out.H, out.g, out.Aeq, out.beq, out.Ain, out.bin);
    return out;
}

}  // namespace

TEST_CASE("scalar bound QP: KKT by hand") {
    SolverConfig cfg;
    auto res = solve_qp(scalar_bound_qp(), std::nullopt, cfg);
    REQUIRE(res.status == SolveStatus::Optimal);
    CHECK(res.z(0) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(res.value == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(res.in_duals(0) == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("equality QP: symmetric simplex point") {
    Mat H = 2.0 * Mat::Identity(3, 3);
    Mat Aeq(1, 3);
    Aeq << 1, 1, 1;
    Vec beq(1);
    beq << 1.0;
    auto res = solve_qp(QpProblem::dense(H, Vec::Zero(3), Aeq, beq, Mat(0, 3), Vec(0)),
                        std::nullopt, SolverConfig{});
    REQUIRE(res.status == SolveStatus::Optimal);
    for (int i = 0; i < 3; ++i) CHECK(res.z(i) == doctest::Approx(1.0 / 3).epsilon(1e-8));
}

TEST_CASE("random strictly convex QPs match the dense KKT oracle") {
    std::mt19937_64 rng(7);
    SolverConfig cfg;
    for (int trial = 0; trial < 25; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 9);
        RandomQp r = random_strictly_convex_qp(rng, n);
        auto res = solve_qp(r.qp, std::nullopt, cfg);
        REQUIRE(res.status == SolveStatus::Optimal);
        CHECK(res.feas_residual <= cfg.feas_tol);
        CHECK(res.stat_residual <= cfg.opt_tol);

        auto oracle = pcbf_test::solve_qp_ipm(r.H, r.g, r.Aeq, r.beq, r.Ain, r.bin);
        REQUIRE(oracle.ok);
        CHECK(std::abs(res.value - oracle.value) <= 1e-6 * std::max(1.0, std::abs(oracle.value)));
        CHECK((res.z - oracle.z).cwiseAbs().maxCoeff() <= 1e-6 * std::max(1.0, oracle.z.norm()));
    }
}

TEST_CASE("warmstarting with the exact solution converges immediately") {
    std::mt19937_64 rng(11);
    RandomQp r = random_strictly_convex_qp(rng, 6);
    SolverConfig cfg;
    auto cold = solve_qp(r.qp, std::nullopt, cfg);
    REQUIRE(cold.status == SolveStatus::Optimal);
    auto warm = solve_qp(r.qp, cold, cfg);
    REQUIRE(warm.status == SolveStatus::Optimal);
    CHECK(warm.iterations <= 2);
    CHECK(warm.iterations < cold.iterations);
}

TEST_CASE("deterministic iterate sequence") {
    std::mt19937_64 rng(13);
    RandomQp r = random_strictly_convex_qp(rng, 8);
    auto a = solve_qp(r.qp, std::nullopt, SolverConfig{});
    auto b = solve_qp(r.qp, std::nullopt, SolverConfig{});
    REQUIRE(a.z.size() == b.z.size());
    CHECK(std::memcmp(a.z.data(), b.z.data(), sizeof(double) * a.z.size()) == 0);
    CHECK(a.iterations == b.iterations);
    CHECK(a.value == b.value);
}

TEST_CASE("infeasible QP is certified") {
    // z <= -1 and -z <= -1 cannot hold together.
    Mat H(1, 1);
    H << 2.0;
    Mat Ain(2, 1);
    Ain << 1, -1;
    Vec bin(2);
    bin << -1, -1;
    auto res = solve_qp(QpProblem::dense(H, Vec::Zero(1), Mat(0, 1), Vec(0), Ain, bin),
                        std::nullopt, SolverConfig{});
    CHECK(res.status == SolveStatus::Infeasible);
}

namespace {

NlpProblem qp_as_nlp(const RandomQp& r) {
    NlpProblem p;
    const int n = static_cast<int>(r.g.size());
    p.dim = n;
    Mat H = r.H;
    Vec g = r.g;
    p.objective = [H, g](const Vec& z) { return 0.5 * z.dot(H * z) + g.dot(z); };
    p.gradient = [H, g](const Vec& z) -> Vec { return H * z + g; };
    p.objective_hessian = [H](const Vec&) -> SpMat { return H.sparseView(); };
    Mat Aeq = r.Aeq, Ain = r.Ain;
    Vec beq = r.beq, bin = r.bin;
    p.eq_cons = [Aeq, beq](const Vec& z) -> Vec { return Aeq * z - beq; };
    p.eq_jac = [Aeq](const Vec&) -> SpMat { return Aeq.sparseView(); };
    p.in_cons = [Ain, bin](const Vec& z) -> Vec { return Ain * z - bin; };
    p.in_jac = [Ain](const Vec&) -> SpMat { return Ain.sparseView(); };
    p.z0 = Vec::Zero(n);
    return p;
}

}  // namespace

TEST_CASE("convex QP posed as NLP matches solve_qp") {
    std::mt19937_64 rng(17);
    RandomQp r = random_strictly_convex_qp(rng, 5);
    auto direct = solve_qp(r.qp, std::nullopt, SolverConfig{});
    auto via_sqp = solve_nlp(qp_as_nlp(r), std::nullopt, SolverConfig{});
    REQUIRE(direct.status == SolveStatus::Optimal);
    REQUIRE(via_sqp.status == SolveStatus::Optimal);
    CHECK(std::abs(direct.value - via_sqp.value) <= 1e-6 * std::max(1.0, std::abs(direct.value)));
    CHECK((direct.z - via_sqp.z).cwiseAbs().maxCoeff() <= 1e-5);
}

TEST_CASE("projection NLP: min (z-2)^2 s.t. z^2 <= 1") {
    NlpProblem p;
    p.dim = 1;
    p.objective = [](const Vec& z) { return (z(0) - 2) * (z(0) - 2); };
    p.gradient = [](const Vec& z) -> Vec { return Vec::Constant(1, 2 * (z(0) - 2)); };
    p.in_cons = [](const Vec& z) -> Vec { return Vec::Constant(1, z(0) * z(0) - 1); };
    p.in_jac = [](const Vec& z) -> SpMat {
        Mat J(1, 1);
        J << 2 * z(0);
        return J.sparseView();
    };
    p.z0 = Vec::Zero(1);
    auto res = solve_nlp(p, std::nullopt, SolverConfig{});
    REQUIRE(res.status == SolveStatus::Optimal);
    CHECK(res.z(0) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("NLP warmstarted at the solution converges in <= 2 iterations") {
    std::mt19937_64 rng(19);
    RandomQp r = random_strictly_convex_qp(rng, 5);
    NlpProblem p = qp_as_nlp(r);
    auto first = solve_nlp(p, std::nullopt, SolverConfig{});
    REQUIRE(first.status == SolveStatus::Optimal);
    auto warm = solve_nlp(p, first, SolverConfig{});
    REQUIRE(warm.status == SolveStatus::Optimal);
    CHECK(warm.iterations <= 2);
}

TEST_CASE("NLP determinism") {
    std::mt19937_64 rng(23);
    RandomQp r = random_strictly_convex_qp(rng, 6);
    NlpProblem p = qp_as_nlp(r);
    auto a = solve_nlp(p, std::nullopt, SolverConfig{});
    auto b = solve_nlp(p, std::nullopt, SolverConfig{});
    CHECK(std::memcmp(a.z.data(), b.z.data(), sizeof(double) * a.z.size()) == 0);
    CHECK(a.iterations == b.iterations);
}

TEST_CASE("infeasible NLP surfaces as Infeasible via the elastic path") {
    NlpProblem p;
    p.dim = 1;
    p.objective = [](const Vec& z) { return z(0) * z(0); };
    p.gradient = [](const Vec& z) -> Vec { return Vec::Constant(1, 2 * z(0)); };
    p.in_cons = [](const Vec& z) -> Vec {
        Vec c(2);
        c << z(0) + 1, -z(0) + 1;  // z <= -1 and z >= 1
        return c;
    };
    p.in_jac = [](const Vec&) -> SpMat {
        Mat J(2, 1);
        J << 1, -1;
        return J.sparseView();
    };
    p.z0 = Vec::Zero(1);
    auto res = solve_nlp(p, std::nullopt, SolverConfig{});
    CHECK(res.status == SolveStatus::Infeasible);
}
