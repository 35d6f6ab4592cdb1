#include "support/oracle_qp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pcbf_test {

namespace {
double inf_norm(const Vec& v) { return v.size() > 0 ? v.cwiseAbs().maxCoeff() : 0.0; }
}

IpmResult solve_qp_ipm(const Mat& H, const Vec& g, const Mat& Aeq, const Vec& beq,
                       const Mat& Ain, const Vec& bin, double tol, int max_iter) {
    const int n = static_cast<int>(g.size());
    const int me = static_cast<int>(beq.size());
    const int mi = static_cast<int>(bin.size());
    IpmResult out;

    if (mi == 0) {
        // Pure equality-constrained QP: one KKT factorization.
        Mat K = Mat::Zero(n + me, n + me);
        K.topLeftCorner(n, n) = H + 1e-12 * Mat::Identity(n, n);
        K.topRightCorner(n, me) = Aeq.transpose();
        K.bottomLeftCorner(me, n) = Aeq;
        Vec rhs(n + me);
        rhs.head(n) = -g;
        rhs.tail(me) = beq;
        Vec w = K.partialPivLu().solve(rhs);
        out.z = w.head(n);
        out.eq_duals = w.tail(me);
        out.in_duals = Vec(0);
        out.value = 0.5 * out.z.dot(H * out.z) + g.dot(out.z);
        out.ok = true;
        return out;
    }

    Vec z = Vec::Zero(n);
    Vec nu = Vec::Zero(me);
    Vec s = Vec::Ones(mi), lam = Vec::Ones(mi);
    for (int i = 0; i < mi; ++i) s(i) = std::max(1.0, bin(i) - (Ain.row(i) * z).value());

    const double scale_d = std::max(1.0, inf_norm(g));
    const double scale_p = std::max({1.0, inf_norm(beq), inf_norm(bin)});

    for (int it = 0; it < max_iter; ++it) {
        Vec rd = H * z + g + Ain.transpose() * lam;
        if (me > 0) rd += Aeq.transpose() * nu;
        Vec rp = me > 0 ? Vec(Aeq * z - beq) : Vec(0);
        Vec rg = Ain * z + s - bin;
        double mu = lam.dot(s) / mi;

        if (inf_norm(rd) <= tol * scale_d && inf_norm(rp) <= tol * scale_p &&
            inf_norm(rg) <= tol * scale_p && mu <= tol * std::max(1.0, scale_d)) {
            out.ok = true;
            out.iterations = it;
            break;
        }
        out.iterations = it + 1;

        Vec w_diag = (lam.array() / s.array()).matrix();
        Mat M = Mat::Zero(n + me, n + me);
        M.topLeftCorner(n, n) =
            H + Ain.transpose() * w_diag.asDiagonal() * Ain + 1e-13 * Mat::Identity(n, n);
        if (me > 0) {
            M.topRightCorner(n, me) = Aeq.transpose();
            M.bottomLeftCorner(me, n) = Aeq;
            M.bottomRightCorner(me, me) = -1e-13 * Mat::Identity(me, me);
        }
        Eigen::PartialPivLU<Mat> lu(M);

        auto solve_step = [&](const Vec& rc) {
            // Eliminate (ds, dlam): dlam = -S^{-1}(rc + Lam ds), ds = -rg - Ain dz.
            Vec tmp = (w_diag.array() * rg.array()).matrix() - (rc.array() / s.array()).matrix();
            Vec rhs(n + me);
            rhs.head(n) = -rd - Ain.transpose() * tmp;
            if (me > 0) rhs.tail(me) = -rp;
            Vec dw = lu.solve(rhs);
            Vec dz = dw.head(n);
            Vec dnu = me > 0 ? Vec(dw.tail(me)) : Vec(0);
            Vec ds = -rg - Ain * dz;
            Vec dlam = -((rc.array() + lam.array() * ds.array()) / s.array()).matrix();
            return std::make_tuple(dz, dnu, ds, dlam);
        };

        // Affine predictor
        Vec rc_aff = (lam.array() * s.array()).matrix();
        auto [dz_a, dnu_a, ds_a, dlam_a] = solve_step(rc_aff);
        auto max_step = [&](const Vec& v, const Vec& dv) {
            double a = 1.0;
            for (int i = 0; i < v.size(); ++i)
                if (dv(i) < 0) a = std::min(a, -v(i) / dv(i));
            return a;
        };
        double ap = max_step(s, ds_a), ad = max_step(lam, dlam_a);
        double mu_aff = (lam + ad * dlam_a).dot(s + ap * ds_a) / mi;
        double sigma = std::pow(mu_aff / std::max(mu, 1e-300), 3.0);
        sigma = std::min(std::max(sigma, 0.0), 1.0);

        // Corrector
        Vec rc = (lam.array() * s.array()).matrix() +
                 (dlam_a.array() * ds_a.array()).matrix() - Vec::Constant(mi, sigma * mu).array().matrix();
        auto [dz, dnu, ds, dlam] = solve_step(rc);
        double a = 0.995 * std::min(max_step(s, ds), max_step(lam, dlam));
        a = std::min(a, 1.0);

        z += a * dz;
        if (me > 0) nu += a * dnu;
        s += a * ds;
        lam += a * dlam;
    }

    out.z = z;
    out.eq_duals = nu;
    out.in_duals = lam;
    out.value = 0.5 * z.dot(H * z) + g.dot(z);
    return out;
}

}  // namespace pcbf_test
