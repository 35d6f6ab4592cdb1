#include "pcbf/pcbf.hpp"

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

namespace pcbf {

void HorizonProblem::validate() const {
    if (N < 1) throw std::invalid_argument("HorizonProblem: N >= 1 required");
    if (alpha_f <= 0.0) throw std::invalid_argument("HorizonProblem: alpha_f > 0 required");
    if (spec.tightening.size() < N + 1)
        throw std::invalid_argument("HorizonProblem: tightening schedule shorter than horizon");
    validate_tightening(spec.tightening);
    if (c_h < 0.0) throw std::invalid_argument("HorizonProblem: c_h >= 0 required");
}

std::uint64_t HorizonProblem::config_hash() const {
    char buf[64];
    std::string s = model.id + "|" + spec.signature + "|";
    auto add = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g,", v);
        s += buf;
    };
    add(static_cast<double>(N));
    add(alpha_f);
    add(c_h);
    add(tol_zero);
    for (int i = 0; i <= N; ++i) add(spec.tightening(i));
    for (int j = 0; j < model.m; ++j) {
        add(spec.u_lo(j));
        add(spec.u_hi(j));
    }
    if (has_cbf_terminal()) {
        const auto& t = cbf_terminal();
        s += "cbf:";
        for (int i = 0; i < t.P.rows(); ++i)
            for (int j = 0; j < t.P.cols(); ++j) add(t.P(i, j));
        for (int i = 0; i < t.K.rows(); ++i)
            for (int j = 0; j < t.K.cols(); ++j) add(t.K(i, j));
        add(t.gamma_f);
    } else {
        s += "hard:";
        for (int idx : hard_terminal().zero_state_idx) add(static_cast<double>(idx));
    }
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

HorizonProblem make_pendulum_problem() {
    ModelSetup setup = pendulum_model();
    TerminalCbf cbf = synthesize_terminal_cbf(setup.model, setup.spec, Mat::Identity(2, 2),
                                              Mat::Identity(1, 1));
    HorizonProblem hp;
    hp.model = std::move(setup.model);
    hp.spec = std::move(setup.spec);
    hp.terminal = cbf;
    hp.N = setup.default_horizon;
    hp.alpha_f = setup.alpha_f;
    hp.validate();
    return hp;
}

HorizonProblem make_car_problem(int N) { return make_car_problem(default_car_obstacles(), N); }

HorizonProblem make_car_problem(const std::vector<Obstacle>& obstacles, int N) {
    ModelSetup setup = car_model(obstacles);
    HorizonProblem hp;
    hp.model = std::move(setup.model);
    hp.spec = std::move(setup.spec);
    hp.terminal = HardStopTerminal{{3}};  // v_N = 0
    hp.N = N;
    hp.alpha_f = setup.alpha_f;
    hp.validate();
    return hp;
}

Vec PcbfSolution::state_gradient() const {
    const int n = static_cast<int>(xs.rows());
    return -eq_duals.head(n);
}

// ---------------------------------------------------------------------------
// Horizon NLP assembly
// ---------------------------------------------------------------------------

namespace {

enum class Kind { Hpb, Hbar, PsfFixed, PsfSoft };

struct Ctx {
    const HorizonProblem* hp = nullptr;
    Kind kind = Kind::Hpb;
    Vec x0;
    int n = 0, m = 0, nx = 0, N = 0;
    bool cbf = false;
    std::vector<int> hard_idx;

    // psf extras
    Vec u_p;
    Mat slack_fix;
    double term_slack_fix = 0.0;
    double c_xi = 0.0;

    int xoff(int i) const { return i * n; }
    int uoff(int i) const { return n * (N + 1) + i * m; }
    bool stage_slacks() const { return kind == Kind::Hpb || kind == Kind::PsfSoft; }
    int soff(int i) const { return n * (N + 1) + m * N + i * nx; }
    bool extra_var() const {
        if (kind == Kind::Hbar) return true;
        return (kind == Kind::Hpb || kind == Kind::PsfSoft) && cbf;
    }
    int extra_off() const {
        return n * (N + 1) + m * N + (stage_slacks() ? nx * N : 0);
    }
    int dim() const { return extra_off() + (extra_var() ? 1 : 0); }

    int n_eq() const { return n + n * N + static_cast<int>(hard_idx.size()); }
    int terminal_rows() const {
        if (cbf) {
            if (kind == Kind::Hpb || kind == Kind::PsfSoft) return 2;  // hf row + xi_N >= 0
            return 1;
        }
        return nx;  // hard stage-N state rows (epigraph-relaxed for Hbar)
    }
    int n_in() const {
        return 2 * m * N + nx * N + (stage_slacks() ? nx * N : 0) + terminal_rows();
    }
};

using CtxPtr = std::shared_ptr<const Ctx>;

Vec eq_fn(const CtxPtr& c, const Vec& z) {
    const auto& model = c->hp->model;
    Vec out(c->n_eq());
    out.head(c->n) = z.segment(c->xoff(0), c->n) - c->x0;
    for (int i = 0; i < c->N; ++i) {
        Vec xi = z.segment(c->xoff(i), c->n);
        Vec ui = z.segment(c->uoff(i), c->m);
        out.segment(c->n + i * c->n, c->n) = z.segment(c->xoff(i + 1), c->n) - model.step0(xi, ui);
    }
    for (size_t k = 0; k < c->hard_idx.size(); ++k)
        out(c->n + c->N * c->n + static_cast<int>(k)) = z(c->xoff(c->N) + c->hard_idx[k]);
    return out;
}

SpMat eq_jac(const CtxPtr& c, const Vec& z) {
    const auto& model = c->hp->model;
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<size_t>(c->n_eq()) * (2 * c->n + c->m));
    for (int j = 0; j < c->n; ++j) trip.emplace_back(j, c->xoff(0) + j, 1.0);
    for (int i = 0; i < c->N; ++i) {
        Vec xi = z.segment(c->xoff(i), c->n);
        Vec ui = z.segment(c->uoff(i), c->m);
        Mat A = model.dfdx(xi, ui);
        Mat B = model.dfdu(xi, ui);
        const int r0 = c->n + i * c->n;
        for (int r = 0; r < c->n; ++r) {
            trip.emplace_back(r0 + r, c->xoff(i + 1) + r, 1.0);
            for (int l = 0; l < c->n; ++l)
                if (A(r, l) != 0.0) trip.emplace_back(r0 + r, c->xoff(i) + l, -A(r, l));
            for (int l = 0; l < c->m; ++l)
                if (B(r, l) != 0.0) trip.emplace_back(r0 + r, c->uoff(i) + l, -B(r, l));
        }
    }
    for (size_t k = 0; k < c->hard_idx.size(); ++k)
        trip.emplace_back(c->n + c->N * c->n + static_cast<int>(k),
                          c->xoff(c->N) + c->hard_idx[k], 1.0);
    SpMat J(c->n_eq(), c->dim());
    J.setFromTriplets(trip.begin(), trip.end());
    return J;
}

Vec in_fn(const CtxPtr& c, const Vec& z) {
    const auto& spec = c->hp->spec;
    Vec out(c->n_in());
    int r = 0;
    for (int i = 0; i < c->N; ++i)
        for (int j = 0; j < c->m; ++j) out(r++) = z(c->uoff(i) + j) - spec.u_hi(j);
    for (int i = 0; i < c->N; ++i)
        for (int j = 0; j < c->m; ++j) out(r++) = spec.u_lo(j) - z(c->uoff(i) + j);
    for (int i = 0; i < c->N; ++i) {
        Vec cxv = spec.cx(z.segment(c->xoff(i), c->n));
        const double delta = spec.tightening(i);
        for (int j = 0; j < c->nx; ++j) {
            double slack = 0.0;
            switch (c->kind) {
                case Kind::Hpb:
                case Kind::PsfSoft: slack = z(c->soff(i) + j); break;
                case Kind::PsfFixed: slack = c->slack_fix(j, i); break;
                case Kind::Hbar: slack = z(c->extra_off()); break;
            }
            out(r++) = cxv(j) + delta - slack;
        }
    }
    if (c->stage_slacks())
        for (int i = 0; i < c->N; ++i)
            for (int j = 0; j < c->nx; ++j) out(r++) = -z(c->soff(i) + j);

    Vec xN = z.segment(c->xoff(c->N), c->n);
    if (c->cbf) {
        const auto& t = c->hp->cbf_terminal();
        const double hf = t.offset(xN);
        switch (c->kind) {
            case Kind::Hpb:
            case Kind::PsfSoft:
                out(r++) = hf - z(c->extra_off());
                out(r++) = -z(c->extra_off());
                break;
            case Kind::Hbar: out(r++) = hf - z(c->extra_off()); break;
            case Kind::PsfFixed: out(r++) = hf - c->term_slack_fix; break;
        }
    } else {
        Vec cxN = spec.cx(xN);
        const double deltaN = spec.tightening(c->N);
        for (int j = 0; j < c->nx; ++j) {
            double v = cxN(j) + deltaN;
            if (c->kind == Kind::Hbar) v -= z(c->extra_off());
            out(r++) = v;
        }
    }
    return out;
}

SpMat in_jac(const CtxPtr& c, const Vec& z) {
    const auto& spec = c->hp->spec;
    std::vector<Eigen::Triplet<double>> trip;
    int r = 0;
    for (int i = 0; i < c->N; ++i)
        for (int j = 0; j < c->m; ++j) trip.emplace_back(r++, c->uoff(i) + j, 1.0);
    for (int i = 0; i < c->N; ++i)
        for (int j = 0; j < c->m; ++j) trip.emplace_back(r++, c->uoff(i) + j, -1.0);
    for (int i = 0; i < c->N; ++i) {
        Mat J = spec.cx_jac(z.segment(c->xoff(i), c->n));
        for (int j = 0; j < c->nx; ++j) {
            for (int l = 0; l < c->n; ++l)
                if (J(j, l) != 0.0) trip.emplace_back(r, c->xoff(i) + l, J(j, l));
            switch (c->kind) {
                case Kind::Hpb:
                case Kind::PsfSoft: trip.emplace_back(r, c->soff(i) + j, -1.0); break;
                case Kind::Hbar: trip.emplace_back(r, c->extra_off(), -1.0); break;
                case Kind::PsfFixed: break;
            }
            ++r;
        }
    }
    if (c->stage_slacks())
        for (int i = 0; i < c->N; ++i)
            for (int j = 0; j < c->nx; ++j) {
                trip.emplace_back(r, c->soff(i) + j, -1.0);
                ++r;
            }

    Vec xN = z.segment(c->xoff(c->N), c->n);
    if (c->cbf) {
        const auto& t = c->hp->cbf_terminal();
        Vec grad = t.offset_grad(xN);
        switch (c->kind) {
            case Kind::Hpb:
            case Kind::PsfSoft:
                for (int l = 0; l < c->n; ++l)
                    trip.emplace_back(r, c->xoff(c->N) + l, grad(l));
                trip.emplace_back(r, c->extra_off(), -1.0);
                ++r;
                trip.emplace_back(r, c->extra_off(), -1.0);
                ++r;
                break;
            case Kind::Hbar:
                for (int l = 0; l < c->n; ++l)
                    trip.emplace_back(r, c->xoff(c->N) + l, grad(l));
                trip.emplace_back(r, c->extra_off(), -1.0);
                ++r;
                break;
            case Kind::PsfFixed:
                for (int l = 0; l < c->n; ++l)
                    trip.emplace_back(r, c->xoff(c->N) + l, grad(l));
                ++r;
                break;
        }
    } else {
        Mat J = spec.cx_jac(xN);
        for (int j = 0; j < c->nx; ++j) {
            for (int l = 0; l < c->n; ++l)
                if (J(j, l) != 0.0) trip.emplace_back(r, c->xoff(c->N) + l, J(j, l));
            if (c->kind == Kind::Hbar) trip.emplace_back(r, c->extra_off(), -1.0);
            ++r;
        }
    }
    SpMat Jm(c->n_in(), c->dim());
    Jm.setFromTriplets(trip.begin(), trip.end());
    return Jm;
}

double obj_fn(const CtxPtr& c, const Vec& z) {
    switch (c->kind) {
        case Kind::Hpb: {
            double v = 0;
            for (int i = 0; i < c->N; ++i) v += z.segment(c->soff(i), c->nx).sum();
            if (c->cbf) v += c->hp->alpha_f * z(c->extra_off());
            return v;
        }
        case Kind::Hbar: return z(c->extra_off());
        case Kind::PsfFixed: {
            Vec d = z.segment(c->uoff(0), c->m) - c->u_p;
            return d.squaredNorm();
        }
        case Kind::PsfSoft: {
            // Stage slacks weighted by c_xi; the terminal slack keeps the
            // alpha_f weight of the value-function problem.
            Vec d = z.segment(c->uoff(0), c->m) - c->u_p;
            double v = d.squaredNorm();
            for (int i = 0; i < c->N; ++i)
                v += c->c_xi * z.segment(c->soff(i), c->nx).sum();
            if (c->cbf) v += c->hp->alpha_f * z(c->extra_off());
            return v;
        }
    }
    return 0;
}

Vec obj_grad(const CtxPtr& c, const Vec& z) {
    Vec g = Vec::Zero(c->dim());
    switch (c->kind) {
        case Kind::Hpb:
            for (int i = 0; i < c->N; ++i) g.segment(c->soff(i), c->nx).setOnes();
            if (c->cbf) g(c->extra_off()) = c->hp->alpha_f;
            break;
        case Kind::Hbar: g(c->extra_off()) = 1.0; break;
        case Kind::PsfFixed:
            g.segment(c->uoff(0), c->m) = 2.0 * (z.segment(c->uoff(0), c->m) - c->u_p);
            break;
        case Kind::PsfSoft:
            g.segment(c->uoff(0), c->m) = 2.0 * (z.segment(c->uoff(0), c->m) - c->u_p);
            for (int i = 0; i < c->N; ++i)
                g.segment(c->soff(i), c->nx).setConstant(c->c_xi);
            if (c->cbf) g(c->extra_off()) = c->c_xi * c->hp->alpha_f;
            break;
    }
    return g;
}

SpMat obj_hess(const CtxPtr& c, const Vec&) {
    std::vector<Eigen::Triplet<double>> trip;
    if (c->kind == Kind::PsfFixed || c->kind == Kind::PsfSoft)
        for (int j = 0; j < c->m; ++j) trip.emplace_back(c->uoff(0) + j, c->uoff(0) + j, 2.0);
    SpMat H(c->dim(), c->dim());
    H.setFromTriplets(trip.begin(), trip.end());
    return H;
}

NlpProblem build_nlp(const CtxPtr& c) {
    NlpProblem p;
    p.dim = c->dim();
    p.objective = [c](const Vec& z) { return obj_fn(c, z); };
    p.gradient = [c](const Vec& z) { return obj_grad(c, z); };
    p.objective_hessian = [c](const Vec& z) { return obj_hess(c, z); };
    p.eq_cons = [c](const Vec& z) { return eq_fn(c, z); };
    p.eq_jac = [c](const Vec& z) { return eq_jac(c, z); };
    p.in_cons = [c](const Vec& z) { return in_fn(c, z); };
    p.in_jac = [c](const Vec& z) { return in_jac(c, z); };
    return p;
}

// Cold start: propagate with zero input, slacks from the residuals.
Vec cold_start(const CtxPtr& c) {
    const auto& hp = *c->hp;
    Vec z = Vec::Zero(c->dim());
    Mat xs(c->n, c->N + 1);
    xs.col(0) = c->x0;
    const Vec u0 = Vec::Zero(c->m);
    for (int i = 0; i < c->N; ++i) xs.col(i + 1) = hp.model.step0(xs.col(i), u0);
    for (int i = 0; i <= c->N; ++i) z.segment(c->xoff(i), c->n) = xs.col(i);

    double tmax = -1e30;
    for (int i = 0; i < c->N; ++i) {
        Vec res = hp.spec.cx(xs.col(i)).array() + hp.spec.tightening(i);
        tmax = std::max(tmax, res.maxCoeff());
        if (c->stage_slacks()) z.segment(c->soff(i), c->nx) = res.cwiseMax(0.0);
    }
    if (c->cbf) {
        const double hf = hp.cbf_terminal().offset(xs.col(c->N));
        tmax = std::max(tmax, hf);
        if (c->kind == Kind::Hpb || c->kind == Kind::PsfSoft)
            z(c->extra_off()) = std::max(0.0, hf);
    } else {
        Vec res = hp.spec.cx(xs.col(c->N)).array() + hp.spec.tightening(c->N);
        tmax = std::max(tmax, res.maxCoeff());
    }
    if (c->kind == Kind::Hbar) z(c->extra_off()) = tmax;
    return z;
}

// Packs a previous solution into the decision layout of the target kind.
Vec warm_primal(const CtxPtr& c, const PcbfSolution& ws) {
    const auto& hp = *c->hp;
    Vec z = Vec::Zero(c->dim());
    for (int i = 0; i <= c->N; ++i) z.segment(c->xoff(i), c->n) = ws.xs.col(i);
    for (int i = 0; i < c->N; ++i) z.segment(c->uoff(i), c->m) = ws.us.col(i);
    double tmax = -1e30;
    for (int i = 0; i < c->N; ++i) {
        Vec res = hp.spec.cx(ws.xs.col(i)).array() + hp.spec.tightening(i);
        tmax = std::max(tmax, res.maxCoeff());
        if (c->stage_slacks()) z.segment(c->soff(i), c->nx) = res.cwiseMax(0.0);
    }
    if (c->cbf) {
        const double hf = hp.cbf_terminal().offset(ws.xs.col(c->N));
        tmax = std::max(tmax, hf);
        if (c->kind == Kind::Hpb || c->kind == Kind::PsfSoft)
            z(c->extra_off()) = std::max(0.0, hf);
    } else {
        Vec res = hp.spec.cx(ws.xs.col(c->N)).array() + hp.spec.tightening(c->N);
        tmax = std::max(tmax, res.maxCoeff());
    }
    if (c->kind == Kind::Hbar) z(c->extra_off()) = tmax;
    return z;
}

PcbfSolution unpack(const CtxPtr& c, const SolveResult& res, PcbfBranch branch) {
    const auto& hp = *c->hp;
    PcbfSolution sol;
    sol.xs = Mat(c->n, c->N + 1);
    sol.us = Mat(c->m, c->N);
    for (int i = 0; i <= c->N; ++i) sol.xs.col(i) = res.z.segment(c->xoff(i), c->n);
    for (int i = 0; i < c->N; ++i) sol.us.col(i) = res.z.segment(c->uoff(i), c->m);
    sol.slacks = Mat(c->nx, c->N);
    if (c->stage_slacks()) {
        for (int i = 0; i < c->N; ++i) sol.slacks.col(i) = res.z.segment(c->soff(i), c->nx);
    } else {
        for (int i = 0; i < c->N; ++i)
            sol.slacks.col(i) = hp.spec.cx(sol.xs.col(i)).array() + hp.spec.tightening(i);
    }
    if (c->cbf) {
        sol.terminal_slack = c->extra_var() && c->kind != Kind::Hbar
                                 ? res.z(c->extra_off())
                                 : hp.cbf_terminal().offset(sol.xs.col(c->N));
    } else {
        Vec res_N = hp.spec.cx(sol.xs.col(c->N)).array() + hp.spec.tightening(c->N);
        sol.terminal_slack = res_N.maxCoeff();
    }
    sol.eq_duals = res.eq_duals;
    sol.in_duals = res.in_duals;
    sol.value = res.value;
    sol.branch = branch;
    sol.stats = {res.iterations, res.wall_time, res.status};
    return sol;
}

PcbfSolution solve_horizon(const HorizonProblem& hp, Kind kind, const Vec& x,
                           const PcbfSolution* warmstart, const char* what,
                           const Ctx* extras = nullptr) {
    hp.validate();
    if (x.size() != hp.model.n) throw std::invalid_argument("horizon solve: state dimension");

    auto ctx = std::make_shared<Ctx>();
    if (extras) *ctx = *extras;
    ctx->hp = &hp;
    ctx->kind = kind;
    ctx->x0 = x;
    ctx->n = hp.model.n;
    ctx->m = hp.model.m;
    ctx->nx = hp.spec.nx;
    ctx->N = hp.N;
    ctx->cbf = hp.has_cbf_terminal();
    if (!ctx->cbf) ctx->hard_idx = hp.hard_terminal().zero_state_idx;
    CtxPtr c = ctx;

    NlpProblem p = build_nlp(c);
    const PcbfBranch branch = kind == Kind::Hbar ? PcbfBranch::Inside : PcbfBranch::Outside;

    std::optional<SolveResult> warm;
    if (warmstart && warmstart->xs.cols() == hp.N + 1 && warmstart->xs.rows() == hp.model.n) {
        SolveResult w;
        w.z = warm_primal(c, *warmstart);
        if (warmstart->eq_duals.size() == c->n_eq()) w.eq_duals = warmstart->eq_duals;
        if (warmstart->branch == branch && warmstart->in_duals.size() == c->n_in() &&
            (kind == Kind::Hpb || kind == Kind::Hbar))
            w.in_duals = warmstart->in_duals;
        warm = std::move(w);
    } else {
        SolveResult w;
        w.z = cold_start(c);
        warm = std::move(w);
    }

    SolveResult res = solve_nlp(p, warm, hp.solver);
    if (res.status != SolveStatus::Optimal) {
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "%s failed: status=%s iters=%d feas=%.3e stat=%.3e at x[0]=%.6g", what,
                      to_string(res.status).c_str(), res.iterations, res.feas_residual,
                      res.stat_residual, x(0));
        throw std::runtime_error(buf);
    }
    return unpack(c, res, branch);
}

}  // namespace

PcbfSolution eval_hpb(const HorizonProblem& hp, const Vec& x, const PcbfSolution* warmstart) {
    return solve_horizon(hp, Kind::Hpb, x, warmstart, "eval_hpb");
}

PcbfSolution eval_hbar(const HorizonProblem& hp, const Vec& x, const PcbfSolution* warmstart) {
    PcbfSolution sol = solve_horizon(hp, Kind::Hbar, x, warmstart, "eval_hbar");
    return sol;
}

CeValue eval_hce(const HorizonProblem& hp, const Vec& x, const std::optional<CeHint>& hint) {
    CeValue out;
    if (hint && hint->branch == PcbfBranch::Inside) {
        PcbfSolution bar = eval_hbar(hp, x, hint->warmstart);
        if (bar.value > hp.tol_zero) {
            // Left the safe set: fall back to the nonnegative problem.
            PcbfSolution sol = eval_hpb(hp, x, &bar);
            out.value = sol.value;
            out.branch = PcbfBranch::Outside;
            out.solution = std::move(sol);
            return out;
        }
        out.value = hp.c_h * bar.value;
        out.branch = PcbfBranch::Inside;
        out.solution = std::move(bar);
        return out;
    }
    const PcbfSolution* ws = hint ? hint->warmstart : nullptr;
    PcbfSolution sol = eval_hpb(hp, x, ws);
    if (sol.value > hp.tol_zero) {
        out.value = sol.value;
        out.branch = PcbfBranch::Outside;
        out.solution = std::move(sol);
        return out;
    }
    PcbfSolution bar = eval_hbar(hp, x, &sol);
    out.value = hp.c_h * bar.value;
    out.branch = PcbfBranch::Inside;
    out.solution = std::move(bar);
    return out;
}

PsfResult psf_filter(const HorizonProblem& hp, const Vec& x, const Vec& u_p, const PsfMode& mode,
                     const PcbfSolution* hpb_solution) {
    if (u_p.size() != hp.model.m) throw std::invalid_argument("psf_filter: input dimension");

    Ctx extras;
    extras.u_p = u_p;
    PcbfSolution owned;
    const PcbfSolution* warm = hpb_solution;
    Kind kind;
    if (mode.kind == PsfMode::FromEq6) {
        kind = Kind::PsfFixed;
        if (!warm) {
            owned = eval_hpb(hp, x, nullptr);
            warm = &owned;
        }
        extras.slack_fix = warm->slacks;
        extras.term_slack_fix = warm->terminal_slack;
    } else {
        kind = Kind::PsfSoft;
        extras.c_xi = mode.c_xi;
    }

    PsfResult out;
    try {
        PcbfSolution sol = solve_horizon(hp, kind, x, warm, "psf_filter", &extras);
        out.u = sol.us.col(0);
        out.intervention_mag = (out.u - u_p).norm();
        out.stats = sol.stats;
        out.solution = std::move(sol);
    } catch (const std::runtime_error& err) {
        if (mode.kind == PsfMode::FromEq6) {
            // Recursive feasibility should make this impossible.
            std::string state;
            char buf[32];
            for (int i = 0; i < x.size(); ++i) {
                std::snprintf(buf, sizeof(buf), "%.6g ", x(i));
                state += buf;
            }
            throw std::runtime_error("psf_filter contract violation at state [" + state +
                                     "]: " + err.what());
        }
        throw;
    }
    return out;
}

}  // namespace pcbf
