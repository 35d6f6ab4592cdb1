#include "pcbf/solver.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace pcbf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double inf_norm(const Vec& v) { return v.size() > 0 ? v.cwiseAbs().maxCoeff() : 0.0; }

Vec col_inf_norms(const SpMat& M) {
    Vec out = Vec::Zero(M.cols());
    for (int k = 0; k < M.outerSize(); ++k)
        for (SpMat::InnerIterator it(M, k); it; ++it)
            out(it.col()) = std::max(out(it.col()), std::abs(it.value()));
    return out;
}

Vec row_inf_norms(const SpMat& M) {
    Vec out = Vec::Zero(M.rows());
    for (int k = 0; k < M.outerSize(); ++k)
        for (SpMat::InnerIterator it(M, k); it; ++it)
            out(it.row()) = std::max(out(it.row()), std::abs(it.value()));
    return out;
}

double now_seconds() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

}  // namespace

std::string to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::Optimal: return "Optimal";
        case SolveStatus::MaxIter: return "MaxIter";
        case SolveStatus::Infeasible: return "Infeasible";
    }
    return "?";
}

QpProblem QpProblem::make(SpMat H, Vec g, SpMat A_eq, Vec b_eq, SpMat A_in, Vec b_in) {
    QpProblem p;
    SpMat Ht = H.transpose();
    p.H = 0.5 * (H + Ht);
    p.g = std::move(g);
    p.A_eq = std::move(A_eq);
    p.b_eq = std::move(b_eq);
    p.A_in = std::move(A_in);
    p.b_in = std::move(b_in);
    p.validate();
    return p;
}

QpProblem QpProblem::dense(const Mat& H, const Vec& g, const Mat& A_eq, const Vec& b_eq,
                           const Mat& A_in, const Vec& b_in) {
    return make(H.sparseView(), g, A_eq.sparseView(), b_eq, A_in.sparseView(), b_in);
}

void QpProblem::validate() const {
    const int n = dim();
    if (H.rows() != n || H.cols() != n) throw std::invalid_argument("QpProblem: H dimension");
    if (A_eq.rows() != b_eq.size() || (A_eq.rows() > 0 && A_eq.cols() != n))
        throw std::invalid_argument("QpProblem: equality block dimension");
    if (A_in.rows() != b_in.size() || (A_in.rows() > 0 && A_in.cols() != n))
        throw std::invalid_argument("QpProblem: inequality block dimension");
}

// ---------------------------------------------------------------------------
// ADMM QP solver
// ---------------------------------------------------------------------------

namespace {

struct StackedQp {
    SpMat H;  // n x n, scaled
    Vec g;
    SpMat A;  // (me+mi) x n, scaled
    Vec l, u;
    int n = 0, me = 0, mi = 0;
    // scaling: z = D zbar, y = E ybar / c
    Vec D, E;
    double c = 1.0;
};

StackedQp stack_and_scale(const QpProblem& p) {
    StackedQp s;
    s.n = p.dim();
    s.me = static_cast<int>(p.A_eq.rows());
    s.mi = static_cast<int>(p.A_in.rows());
    const int mt = s.me + s.mi;

    SpMat A(mt, s.n);
    {
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(p.A_eq.nonZeros() + p.A_in.nonZeros());
        for (int k = 0; k < p.A_eq.outerSize(); ++k)
            for (SpMat::InnerIterator it(p.A_eq, k); it; ++it)
                trip.emplace_back(it.row(), it.col(), it.value());
        for (int k = 0; k < p.A_in.outerSize(); ++k)
            for (SpMat::InnerIterator it(p.A_in, k); it; ++it)
                trip.emplace_back(s.me + it.row(), it.col(), it.value());
        A.setFromTriplets(trip.begin(), trip.end());
    }
    s.l = Vec::Constant(mt, -kInf);
    s.u = Vec(mt);
    s.l.head(s.me) = p.b_eq;
    s.u.head(s.me) = p.b_eq;
    s.u.tail(s.mi) = p.b_in;

    // Ruiz equilibration on [[H A'],[A 0]].
    s.D = Vec::Ones(s.n);
    s.E = Vec::Ones(mt);
    SpMat Hs = p.H;
    SpMat As = A;
    for (int pass = 0; pass < 10; ++pass) {
        Vec ch = col_inf_norms(Hs);
        Vec ca = col_inf_norms(As);
        Vec ra = row_inf_norms(As);
        Vec d(s.n), e(mt);
        for (int j = 0; j < s.n; ++j) {
            double m = std::max(ch(j), ca(j));
            d(j) = m > 1e-12 ? 1.0 / std::sqrt(m) : 1.0;
        }
        for (int i = 0; i < mt; ++i) e(i) = ra(i) > 1e-12 ? 1.0 / std::sqrt(ra(i)) : 1.0;
        Hs = d.asDiagonal() * Hs * d.asDiagonal();
        As = e.asDiagonal() * As * d.asDiagonal();
        s.D.array() *= d.array();
        s.E.array() *= e.array();
    }
    Vec gs = (s.D.array() * p.g.array()).matrix();
    Vec hnorm = col_inf_norms(Hs);
    double mean_h = s.n > 0 ? hnorm.sum() / s.n : 0.0;
    double denom = std::max(mean_h, inf_norm(gs));
    s.c = denom > 1e-12 ? 1.0 / denom : 1.0;
    s.c = std::min(std::max(s.c, 1e-8), 1e8);
    s.H = s.c * Hs;
    s.g = s.c * gs;
    s.A = As;
    s.l = (s.E.array() * s.l.array()).matrix();
    s.u = (s.E.array() * s.u.array()).matrix();
    for (int i = 0; i < mt; ++i) {
        if (std::isnan(s.l(i))) s.l(i) = -kInf;  // inf*0 guard; E>0 so only sign matters
        if (std::isnan(s.u(i))) s.u(i) = kInf;
    }
    return s;
}

struct Residuals {
    double prim = kInf, dual = kInf;
    double max_az = 0, max_s = 0, max_hx = 0, max_aty = 0;
};

Residuals unscaled_residuals(const StackedQp& sq, const QpProblem& p, const Vec& xb,
                             const Vec& sb, const Vec& yb) {
    Residuals r;
    Vec z = (sq.D.array() * xb.array()).matrix();
    Vec y_un = sq.mi + sq.me > 0 ? Vec((sq.E.array() * yb.array()).matrix() / sq.c) : Vec();
    Vec Az = Vec::Zero(sq.me + sq.mi);
    if (sq.me + sq.mi > 0) {
        Vec As_xb = sq.A * xb;
        Az = (As_xb.array() / sq.E.array()).matrix();
        Vec s_un = (sb.array() / sq.E.array()).matrix();
        r.prim = inf_norm(Az - s_un);
        r.max_az = inf_norm(Az);
        r.max_s = inf_norm(s_un);
    } else {
        r.prim = 0;
    }
    Vec Hz = p.H * z;
    Vec At_y = Vec::Zero(sq.n);
    if (sq.me + sq.mi > 0) {
        At_y = p.A_eq.transpose() * y_un.head(sq.me) + p.A_in.transpose() * y_un.tail(sq.mi);
    }
    r.dual = inf_norm(Hz + p.g + At_y);
    r.max_hx = inf_norm(Hz);
    r.max_aty = inf_norm(At_y);
    return r;
}

struct PolishOutcome {
    bool ok = false;
    Vec z, y;  // unscaled, y stacked
    double prim = kInf, stat = kInf;
};

// Equality-constrained KKT solve on the detected active set, with static
// regularization and iterative refinement against the unregularized system.
PolishOutcome polish(const QpProblem& p, const StackedQp& sq, const Vec& xb, const Vec& yb,
                     const SolverConfig& cfg) {
    PolishOutcome out;
    const int n = sq.n, me = sq.me, mi = sq.mi;
    Vec z = (sq.D.array() * xb.array()).matrix();
    Vec y_un = me + mi > 0 ? Vec((sq.E.array() * yb.array()).matrix() / sq.c) : Vec();

    std::vector<int> active;  // indices into stacked rows (upper bounds)
    active.reserve(me + mi);
    Vec Az_in = mi > 0 ? Vec(p.A_in * z) : Vec();
    for (int i = 0; i < mi; ++i) {
        const bool dual_on = y_un(me + i) > 1e-10 * std::max(1.0, inf_norm(y_un));
        const bool slack_on = p.b_in(i) - Az_in(i) < 1e-6 * std::max(1.0, std::abs(p.b_in(i)));
        if (dual_on || slack_on) active.push_back(i);
    }
    const int ma = static_cast<int>(active.size());
    const int dim = n + me + ma;

    const double reg = 1e-9;
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(p.H.nonZeros() + 2 * (p.A_eq.nonZeros() + p.A_in.nonZeros()) + dim);
    for (int k = 0; k < p.H.outerSize(); ++k)
        for (SpMat::InnerIterator it(p.H, k); it; ++it)
            trip.emplace_back(it.row(), it.col(), it.value());
    for (int i = 0; i < n; ++i) trip.emplace_back(i, i, reg);
    for (int k = 0; k < p.A_eq.outerSize(); ++k)
        for (SpMat::InnerIterator it(p.A_eq, k); it; ++it) {
            trip.emplace_back(n + it.row(), it.col(), it.value());
            trip.emplace_back(it.col(), n + it.row(), it.value());
        }
    // gather active inequality rows
    SpMat AinT = p.A_in.transpose();
    for (int a = 0; a < ma; ++a) {
        const int i = active[a];
        for (SpMat::InnerIterator it(AinT, i); it; ++it) {
            trip.emplace_back(n + me + a, it.row(), it.value());
            trip.emplace_back(it.row(), n + me + a, it.value());
        }
    }
    for (int i = 0; i < me + ma; ++i) trip.emplace_back(n + i, n + i, -reg);
    SpMat K(dim, dim);
    K.setFromTriplets(trip.begin(), trip.end());

    Vec rhs(dim);
    rhs.head(n) = -p.g;
    rhs.segment(n, me) = p.b_eq;
    for (int a = 0; a < ma; ++a) rhs(n + me + a) = p.b_in(active[a]);

    Eigen::SparseLU<SpMat> lu;
    lu.compute(K);
    if (lu.info() != Eigen::Success) return out;
    Vec w = lu.solve(rhs);

    // refinement against the unregularized KKT system
    auto apply_K0 = [&](const Vec& v) -> Vec {
        Vec r2(dim);
        Vec vz = v.head(n);
        Vec vnu = v.segment(n, me);
        Vec vla = v.tail(ma);
        Vec top = p.H * vz;
        if (me > 0) top += p.A_eq.transpose() * vnu;
        for (int a = 0; a < ma; ++a) {
            const int i = active[a];
            for (SpMat::InnerIterator it(AinT, i); it; ++it) top(it.row()) += it.value() * vla(a);
        }
        r2.head(n) = top;
        if (me > 0) r2.segment(n, me) = p.A_eq * vz;
        for (int a = 0; a < ma; ++a) {
            double acc = 0;
            for (SpMat::InnerIterator it(AinT, active[a]); it; ++it)
                acc += it.value() * vz(it.row());
            r2(n + me + a) = acc;
        }
        return r2;
    };
    for (int round = 0; round < 3; ++round) {
        Vec resid = rhs - apply_K0(w);
        if (inf_norm(resid) < 1e-14 * std::max(1.0, inf_norm(rhs))) break;
        w += lu.solve(resid);
    }

    Vec zp = w.head(n);
    Vec yp = Vec::Zero(me + mi);
    yp.head(me) = w.segment(n, me);
    bool sign_ok = true;
    for (int a = 0; a < ma; ++a) {
        double lam = w(n + me + a);
        if (lam < -1e-7 * std::max(1.0, inf_norm(w))) sign_ok = false;
        yp(me + active[a]) = std::max(lam, 0.0);
    }
    if (!sign_ok) return out;

    // verify
    double prim = me > 0 ? inf_norm(p.A_eq * zp - p.b_eq) : 0.0;
    if (mi > 0) {
        Vec r_in = p.A_in * zp - p.b_in;
        prim = std::max(prim, r_in.maxCoeff());
        prim = std::max(prim, 0.0);
    }
    Vec stat_v = p.H * zp + p.g;
    if (me > 0) stat_v += p.A_eq.transpose() * yp.head(me);
    if (mi > 0) stat_v += p.A_in.transpose() * yp.tail(mi);
    double stat = inf_norm(stat_v);

    out.prim = prim;
    out.stat = stat;
    if (prim <= cfg.feas_tol && stat <= cfg.opt_tol) {
        out.ok = true;
        out.z = zp;
        out.y = yp;
    }
    return out;
}

SpMat build_kkt(const StackedQp& sq, double sigma, const Vec& rho) {
    const int n = sq.n, mt = sq.me + sq.mi;
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(sq.H.nonZeros() + 2 * sq.A.nonZeros() + n + mt);
    for (int k = 0; k < sq.H.outerSize(); ++k)
        for (SpMat::InnerIterator it(sq.H, k); it; ++it)
            trip.emplace_back(it.row(), it.col(), it.value());
    for (int i = 0; i < n; ++i) trip.emplace_back(i, i, sigma);
    for (int k = 0; k < sq.A.outerSize(); ++k)
        for (SpMat::InnerIterator it(sq.A, k); it; ++it) {
            trip.emplace_back(n + it.row(), it.col(), it.value());
            trip.emplace_back(it.col(), n + it.row(), it.value());
        }
    for (int i = 0; i < mt; ++i) trip.emplace_back(n + i, n + i, -1.0 / rho(i));
    SpMat K(n + mt, n + mt);
    K.setFromTriplets(trip.begin(), trip.end());
    return K;
}

}  // namespace

SolveResult solve_qp(const QpProblem& p, const std::optional<SolveResult>& warmstart,
                     const SolverConfig& cfg) {
    const double t0 = now_seconds();
    p.validate();
    SolveResult res;
    const int n = p.dim();
    if (n == 0) {
        res.status = SolveStatus::Optimal;
        return res;
    }

    StackedQp sq = stack_and_scale(p);
    const int mt = sq.me + sq.mi;

    const double sigma = 1e-6;
    const double alpha = 1.6;
    double rho_bar = 0.1;
    auto make_rho = [&](double rb) {
        Vec rho(mt);
        for (int i = 0; i < mt; ++i) rho(i) = i < sq.me ? 1e3 * rb : rb;
        return rho;
    };
    Vec rho = make_rho(rho_bar);

    Vec xb = Vec::Zero(n), sb = Vec::Zero(mt), yb = Vec::Zero(mt);
    if (warmstart && warmstart->z.size() == n) {
        xb = (warmstart->z.array() / sq.D.array()).matrix();
        Vec y_un = Vec::Zero(mt);
        if (warmstart->eq_duals.size() == sq.me) y_un.head(sq.me) = warmstart->eq_duals;
        if (warmstart->in_duals.size() == sq.mi) y_un.tail(sq.mi) = warmstart->in_duals;
        yb = (sq.c * y_un.array() / sq.E.array()).matrix();
    }
    if (mt > 0) sb = (sq.A * xb).cwiseMax(sq.l).cwiseMin(sq.u);

    auto finish = [&](SolveStatus st, int iters, bool polished, const Vec& z_un, const Vec& y_un,
                      double prim, double stat) {
        res.status = st;
        res.iterations = iters;
        res.polished = polished;
        res.z = z_un;
        res.eq_duals = y_un.head(sq.me);
        res.in_duals = y_un.tail(sq.mi).cwiseMax(0.0);
        res.value = 0.5 * z_un.dot(p.H * z_un) + p.g.dot(z_un);
        res.feas_residual = prim;
        res.stat_residual = stat;
        res.wall_time = now_seconds() - t0;
        return res;
    };

    // Warmstart may already satisfy the tolerances.
    {
        Residuals r = unscaled_residuals(sq, p, xb, sb, yb);
        if (r.prim <= cfg.feas_tol && r.dual <= cfg.opt_tol) {
            Vec z = (sq.D.array() * xb.array()).matrix();
            Vec y_un = mt > 0 ? Vec((sq.E.array() * yb.array()).matrix() / sq.c) : Vec(0);
            return finish(SolveStatus::Optimal, 0, false, z, y_un, r.prim, r.dual);
        }
    }

    Eigen::SimplicialLDLT<SpMat, Eigen::Lower> ldlt;
    {
        SpMat K = build_kkt(sq, sigma, rho);
        ldlt.analyzePattern(K);
        ldlt.factorize(K);
        if (ldlt.info() != Eigen::Success)
            throw std::runtime_error("solve_qp: KKT factorization failed");
    }

    const int check_every = 25;
    int next_polish = 50;
    int refactor_count = 0;
    Vec xb_prev = xb, yb_prev = yb;

    for (int k = 1; k <= cfg.max_iter; ++k) {
        xb_prev = xb;
        yb_prev = yb;

        Vec rhs(n + mt);
        rhs.head(n) = sigma * xb - sq.g;
        for (int i = 0; i < mt; ++i) rhs(n + i) = sb(i) - yb(i) / rho(i);
        Vec sol = ldlt.solve(rhs);
        Vec xt = sol.head(n);
        Vec nu = sol.tail(mt);
        Vec st(mt);
        for (int i = 0; i < mt; ++i) st(i) = sb(i) + (nu(i) - yb(i)) / rho(i);

        xb = alpha * xt + (1.0 - alpha) * xb;
        Vec w(mt);
        for (int i = 0; i < mt; ++i) w(i) = alpha * st(i) + (1.0 - alpha) * sb(i) + yb(i) / rho(i);
        sb = w.cwiseMax(sq.l).cwiseMin(sq.u);
        for (int i = 0; i < mt; ++i) yb(i) = rho(i) * (w(i) - sb(i));

        if (k % check_every != 0 && k != cfg.max_iter) continue;

        Residuals r = unscaled_residuals(sq, p, xb, sb, yb);
        const double eps_p = cfg.feas_tol;
        const double eps_d = cfg.opt_tol;

        if (r.prim <= eps_p && r.dual <= eps_d) {
            Vec z = (sq.D.array() * xb.array()).matrix();
            Vec y_un = mt > 0 ? Vec((sq.E.array() * yb.array()).matrix() / sq.c) : Vec(0);
            PolishOutcome po = polish(p, sq, xb, yb, cfg);
            if (po.ok) return finish(SolveStatus::Optimal, k, true, po.z, po.y, po.prim, po.stat);
            return finish(SolveStatus::Optimal, k, false, z, y_un, r.prim, r.dual);
        }

        // Opportunistic polish once the iterates are roughly converged.
        const double rel_p = r.prim / std::max(1.0, std::max(r.max_az, r.max_s));
        const double rel_d = r.dual / std::max(1.0, std::max({r.max_hx, r.max_aty, inf_norm(p.g)}));
        if (k >= next_polish && rel_p < 1e-5 && rel_d < 1e-5) {
            PolishOutcome po = polish(p, sq, xb, yb, cfg);
            if (po.ok) return finish(SolveStatus::Optimal, k, true, po.z, po.y, po.prim, po.stat);
            next_polish = k + 100;
        }

        // Infeasibility certificates from the one-step iterate differences,
        // tested in the equilibrated space. The cone/range conditions use a
        // tighter tolerance than the objective/support margin so that slow
        // transients on badly scaled costs cannot fake a certificate.
        if (mt > 0) {
            const double eps_tight = 1e-7;
            const double eps_margin = 1e-4;
            Vec dy = yb - yb_prev;
            const double ndy = inf_norm(dy);
            if (ndy > 1e-12) {
                bool crit1 = inf_norm(sq.A.transpose() * dy) <= eps_tight * ndy;
                double support = 0.0;
                bool finite = true;
                for (int i = 0; i < mt; ++i) {
                    const double up = std::max(dy(i), 0.0), dn = std::min(dy(i), 0.0);
                    support += sq.u(i) * up;
                    if (std::isfinite(sq.l(i))) {
                        support += sq.l(i) * dn;
                    } else if (dn < -eps_tight * ndy) {
                        finite = false;
                        break;
                    }
                }
                if (crit1 && finite && support <= -eps_margin * ndy) {
                    Vec z = (sq.D.array() * xb.array()).matrix();
                    Vec y_un = Vec((sq.E.array() * yb.array()).matrix() / sq.c);
                    return finish(SolveStatus::Infeasible, k, false, z, y_un, r.prim, r.dual);
                }
            }
            Vec dx = xb - xb_prev;
            const double ndx = inf_norm(dx);
            if (ndx > 1e-12) {
                bool hdx = inf_norm(sq.H * dx) <= eps_tight * ndx;
                bool gdx = sq.g.dot(dx) <= -eps_margin * ndx;
                bool cone_ok = true;
                Vec Adx = sq.A * dx;
                for (int i = 0; cone_ok && i < mt; ++i) {
                    if (i < sq.me) {
                        if (std::abs(Adx(i)) > eps_tight * ndx) cone_ok = false;
                    } else if (Adx(i) > eps_tight * ndx) {
                        cone_ok = false;
                    }
                }
                if (hdx && gdx && cone_ok) {
                    Vec z = (sq.D.array() * xb.array()).matrix();
                    Vec y_un = Vec((sq.E.array() * yb.array()).matrix() / sq.c);
                    return finish(SolveStatus::Infeasible, k, false, z, y_un, r.prim, r.dual);
                }
            }
        }

        // rho adaptation
        if (k % 50 == 0 && refactor_count < 30) {
            const double denom_d = std::max(1e-12, std::max({r.max_hx, r.max_aty, inf_norm(p.g)}));
            const double denom_p = std::max(1e-12, std::max(r.max_az, r.max_s));
            const double ratio = std::sqrt((r.prim / denom_p) / std::max(1e-16, r.dual / denom_d));
            if (ratio > 5.0 || ratio < 0.2) {
                rho_bar = std::min(1e6, std::max(1e-6, rho_bar * ratio));
                rho = make_rho(rho_bar);
                SpMat K = build_kkt(sq, sigma, rho);
                ldlt.factorize(K);
                ++refactor_count;
            }
        }
    }

    // Last-chance polish before reporting MaxIter.
    {
        Residuals r = unscaled_residuals(sq, p, xb, sb, yb);
        PolishOutcome po = polish(p, sq, xb, yb, cfg);
        if (po.ok)
            return finish(SolveStatus::Optimal, cfg.max_iter, true, po.z, po.y, po.prim, po.stat);
        Vec z = (sq.D.array() * xb.array()).matrix();
        Vec y_un = mt > 0 ? Vec((sq.E.array() * yb.array()).matrix() / sq.c) : Vec(0);
        return finish(SolveStatus::MaxIter, cfg.max_iter, false, z, y_un, r.prim, r.dual);
    }
}

// ---------------------------------------------------------------------------
// SQP
// ---------------------------------------------------------------------------

namespace {

struct EvalPoint {
    double f = 0;
    Vec grad;
    Vec c_eq, c_in;
    SpMat J_eq, J_in;
};

EvalPoint eval_nlp(const NlpProblem& p, const Vec& z) {
    EvalPoint e;
    e.f = p.objective(z);
    e.grad = p.gradient(z);
    if (p.eq_cons) {
        e.c_eq = p.eq_cons(z);
        e.J_eq = p.eq_jac(z);
    } else {
        e.c_eq = Vec(0);
        e.J_eq = SpMat(0, p.dim);
    }
    if (p.in_cons) {
        e.c_in = p.in_cons(z);
        e.J_in = p.in_jac(z);
    } else {
        e.c_in = Vec(0);
        e.J_in = SpMat(0, p.dim);
    }
    return e;
}

double constraint_violation_l1(const EvalPoint& e) {
    double v = 0;
    for (int i = 0; i < e.c_eq.size(); ++i) v += std::abs(e.c_eq(i));
    for (int i = 0; i < e.c_in.size(); ++i) v += std::max(0.0, e.c_in(i));
    return v;
}

double kkt_stat(const EvalPoint& e, const Vec& nu, const Vec& lam) {
    Vec s = e.grad;
    if (e.c_eq.size() > 0) s += e.J_eq.transpose() * nu;
    if (e.c_in.size() > 0) s += e.J_in.transpose() * lam.cwiseMax(0.0);
    return inf_norm(s);
}

double kkt_feas(const EvalPoint& e) {
    double v = inf_norm(e.c_eq);
    for (int i = 0; i < e.c_in.size(); ++i) v = std::max(v, e.c_in(i));
    return std::max(v, 0.0);
}

double kkt_compl(const EvalPoint& e, const Vec& lam) {
    double v = 0;
    for (int i = 0; i < e.c_in.size(); ++i)
        v = std::max(v, std::abs(std::max(lam(i), 0.0) * e.c_in(i)));
    return v;
}

#ifndef NDEBUG
// Debug-build check: supplied Jacobians against central finite differences.
void check_jacobians_fd(const NlpProblem& p, const Vec& z0) {
    const double h = 1e-6;
    auto check = [&](const std::function<Vec(const Vec&)>& fn, const SpMat& J,
                     const char* what) {
        if (!fn) return;
        Mat Jd = Mat(J);
        for (int j = 0; j < p.dim; ++j) {
            Vec zp = z0, zm = z0;
            zp(j) += h;
            zm(j) -= h;
            Vec col = (fn(zp) - fn(zm)) / (2 * h);
            for (int i = 0; i < col.size(); ++i) {
                const double ref = std::max({1.0, std::abs(col(i)), std::abs(Jd(i, j))});
                if (std::abs(col(i) - Jd(i, j)) > 1e-4 * ref)
                    throw std::logic_error(std::string("solve_nlp: ") + what +
                                           " Jacobian mismatch with finite differences");
            }
        }
    };
    if (p.eq_cons) check(p.eq_cons, p.eq_jac(z0), "equality");
    if (p.in_cons) check(p.in_cons, p.in_jac(z0), "inequality");
    Vec g0 = p.gradient(z0);
    for (int j = 0; j < p.dim; ++j) {
        Vec zp = z0, zm = z0;
        zp(j) += h;
        zm(j) -= h;
        double fd = (p.objective(zp) - p.objective(zm)) / (2 * h);
        const double ref = std::max({1.0, std::abs(fd), std::abs(g0(j))});
        if (std::abs(fd - g0(j)) > 1e-4 * ref)
            throw std::logic_error("solve_nlp: objective gradient mismatch");
    }
}
#endif

}  // namespace

SolveResult solve_nlp(const NlpProblem& p, const std::optional<SolveResult>& warmstart,
                      const SolverConfig& cfg) {
    const double t0 = now_seconds();
    if (p.dim <= 0 || !p.objective || !p.gradient)
        throw std::invalid_argument("solve_nlp: incomplete problem");

    Vec z = (warmstart && warmstart->z.size() == p.dim) ? warmstart->z : p.z0;
    if (z.size() != p.dim) throw std::invalid_argument("solve_nlp: bad initial point");

#ifndef NDEBUG
    check_jacobians_fd(p, z);
#endif

    EvalPoint e = eval_nlp(p, z);
    const int me = static_cast<int>(e.c_eq.size());
    const int mi = static_cast<int>(e.c_in.size());
    Vec nu = Vec::Zero(me), lam = Vec::Zero(mi);
    if (warmstart && warmstart->eq_duals.size() == me && warmstart->in_duals.size() == mi) {
        nu = warmstart->eq_duals;
        lam = warmstart->in_duals;
    }

    const bool dense_bfgs = !p.objective_hessian && p.dim <= 64;
    double sigma_damp = std::max(1e-8, 1e-8 * inf_norm(e.grad));
    Mat B;
    if (dense_bfgs) B = sigma_damp * Mat::Identity(p.dim, p.dim);

    double mu = 1.0;
    SolveResult qp_warm;
    bool have_qp_warm = false;
    int consecutive_elastic = 0;
    double elastic_prev_feas = kInf;

    SolveResult res;
    res.status = SolveStatus::MaxIter;

    auto finish = [&](SolveStatus st, int iters) {
        res.status = st;
        res.z = z;
        res.eq_duals = nu;
        res.in_duals = lam;
        res.value = e.f;
        res.iterations = iters;
        res.feas_residual = kkt_feas(e);
        res.stat_residual = kkt_stat(e, nu, lam);
        res.wall_time = now_seconds() - t0;
        return res;
    };

    for (int iter = 0; iter <= cfg.max_sqp_iter; ++iter) {
        // Feasibility is absolute; stationarity and complementarity are
        // measured relative to the objective gradient scale.
        const double grad_scale = std::max(1.0, inf_norm(e.grad));
        const double stat = kkt_stat(e, nu, lam);
        const double feas = kkt_feas(e);
        const double compl_ = kkt_compl(e, lam);
        if (feas <= cfg.nlp_tol && stat <= cfg.nlp_tol * grad_scale &&
            compl_ <= cfg.nlp_tol * grad_scale)
            return finish(SolveStatus::Optimal, iter);
        if (iter == cfg.max_sqp_iter) break;

        // QP subproblem in the step d.
        SpMat Hq;
        if (p.objective_hessian) {
            Hq = p.objective_hessian(z);
        } else if (dense_bfgs) {
            Hq = B.sparseView();
        } else {
            Hq = SpMat(p.dim, p.dim);
            Hq.setIdentity();
            Hq = Hq * sigma_damp;
        }
        QpProblem qp = QpProblem::make(Hq, e.grad, e.J_eq, -e.c_eq, e.J_in, -e.c_in);
        SolverConfig qcfg = cfg;
        SolveResult qr = solve_qp(qp, have_qp_warm ? std::optional<SolveResult>(qp_warm)
                                                   : std::nullopt,
                                  qcfg);

        bool used_elastic = false;
        if (qr.status == SolveStatus::Infeasible ||
            (qr.status == SolveStatus::MaxIter && qr.feas_residual > 1e3 * cfg.feas_tol)) {
            // Elastic relaxation: slacks on the linearized constraints.
            used_elastic = true;
            const int nd = p.dim;
            const int dim2 = nd + 2 * me + mi;
            std::vector<Eigen::Triplet<double>> ht;
            for (int k = 0; k < Hq.outerSize(); ++k)
                for (SpMat::InnerIterator it(Hq, k); it; ++it)
                    ht.emplace_back(it.row(), it.col(), it.value());
            for (int i = nd; i < dim2; ++i) ht.emplace_back(i, i, 1e-9);
            SpMat H2(dim2, dim2);
            H2.setFromTriplets(ht.begin(), ht.end());
            Vec g2 = Vec::Constant(dim2, cfg.elastic_penalty);
            g2.head(nd) = e.grad;

            std::vector<Eigen::Triplet<double>> at;
            for (int k = 0; k < e.J_eq.outerSize(); ++k)
                for (SpMat::InnerIterator it(e.J_eq, k); it; ++it)
                    at.emplace_back(it.row(), it.col(), it.value());
            for (int i = 0; i < me; ++i) {
                at.emplace_back(i, nd + i, -1.0);
                at.emplace_back(i, nd + me + i, 1.0);
            }
            SpMat A2(me, dim2);
            A2.setFromTriplets(at.begin(), at.end());

            std::vector<Eigen::Triplet<double>> it2;
            for (int k = 0; k < e.J_in.outerSize(); ++k)
                for (SpMat::InnerIterator it(e.J_in, k); it; ++it)
                    it2.emplace_back(it.row(), it.col(), it.value());
            for (int i = 0; i < mi; ++i) it2.emplace_back(i, nd + 2 * me + i, -1.0);
            for (int i = 0; i < 2 * me + mi; ++i)
                it2.emplace_back(mi + i, nd + i, -1.0);  // slacks >= 0
            SpMat A2in(mi + 2 * me + mi, dim2);
            A2in.setFromTriplets(it2.begin(), it2.end());
            Vec b2in = Vec::Zero(mi + 2 * me + mi);
            b2in.head(mi) = -e.c_in;

            QpProblem qpe = QpProblem::make(H2, g2, A2, -e.c_eq, A2in, b2in);
            qr = solve_qp(qpe, std::nullopt, qcfg);
            if (qr.status == SolveStatus::Infeasible)
                return finish(SolveStatus::Infeasible, iter);
            qr.z = qr.z.head(nd).eval();
            qr.in_duals = qr.in_duals.head(mi).eval();
        } else {
            qp_warm = qr;
            qp_warm.z.setZero();
            have_qp_warm = true;
        }

        Vec d = qr.z;
        Vec nu_new = qr.eq_duals.size() == me ? qr.eq_duals : Vec::Zero(me);
        Vec lam_new = qr.in_duals.size() == mi ? qr.in_duals : Vec::Zero(mi);

        // l1 merit line search
        mu = std::max(mu, 1.1 * std::max(inf_norm(nu_new), inf_norm(lam_new)) + 1e-3);
        const double viol0 = constraint_violation_l1(e);
        const double phi0 = e.f + mu * viol0;
        const double Dphi = e.grad.dot(d) - mu * viol0;

        bool took_step = false;
        Vec z_try;
        EvalPoint e_try;
        if (Dphi < 0) {
            double step = 1.0;
            while (step >= cfg.min_step) {
                z_try = z + step * d;
                e_try = eval_nlp(p, z_try);
                const double phi = e_try.f + mu * constraint_violation_l1(e_try);
                if (phi <= phi0 + 1e-4 * step * Dphi) {
                    took_step = true;
                    break;
                }
                step *= cfg.backtrack;
            }
        }

        if (took_step) {
            if (dense_bfgs) {
                // Damped BFGS on the objective.
                Vec s = z_try - z;
                Vec yv = e_try.grad - e.grad;
                double sBs = s.dot(B * s);
                double sy = s.dot(yv);
                if (s.squaredNorm() > 1e-16 * (1 + z.squaredNorm()) && sBs > 1e-16) {
                    double theta = sy >= 0.2 * sBs ? 1.0 : 0.8 * sBs / (sBs - sy);
                    Vec r = theta * yv + (1 - theta) * (B * s);
                    double sr = s.dot(r);
                    if (sr > 1e-14 * sBs)
                        B += r * r.transpose() / sr - (B * s) * (B * s).transpose() / sBs;
                }
            }
            z = z_try;
            e = e_try;
        } else {
            // No merit descent available: raise damping and re-check the KKT
            // point with the fresh multipliers.
            sigma_damp = std::min(sigma_damp * 10.0, 1e6);
            if (dense_bfgs) B += sigma_damp * Mat::Identity(p.dim, p.dim);
        }
        nu = nu_new;
        lam = lam_new;

        if (used_elastic) {
            const double feas_now = kkt_feas(e);
            if (feas_now >= 0.9 * elastic_prev_feas) {
                if (++consecutive_elastic >= 5) return finish(SolveStatus::Infeasible, iter + 1);
            } else {
                consecutive_elastic = 0;
            }
            elastic_prev_feas = std::min(elastic_prev_feas, feas_now);
        } else {
            consecutive_elastic = 0;
            elastic_prev_feas = kInf;
        }
    }
    return finish(SolveStatus::MaxIter, cfg.max_sqp_iter);
}

}  // namespace pcbf
