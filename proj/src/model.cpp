#include "pcbf/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace pcbf {

void validate_tightening(const Vec& tightening) {
    if (tightening.size() < 1 || tightening(0) != 0.0)
        throw std::invalid_argument("tightening: Delta_0 must be 0");
    for (int i = 1; i < tightening.size(); ++i)
        if (tightening(i) <= tightening(i - 1))
            throw std::invalid_argument("tightening: schedule must be strictly increasing");
}

ModelSetup pendulum_model() {
    const double Ts = 0.1, c = 1.0, l = 1.3, g = 9.81;
    Mat A(2, 2);
    A << 1.0, Ts, Ts * g / l, 1.0 - Ts * c;
    Mat B(2, 1);
    B << 0.0, 5.0 * Ts;

    SystemModel model;
    model.n = 2;
    model.m = 1;
    model.p = 2;
    model.id = "pendulum";
    model.step = [A, B](const Vec& x, const Vec& u, const Vec& w) -> Vec {
        return A * x + B * u + w;
    };
    model.dfdx = [A](const Vec&, const Vec&) { return A; };
    model.dfdu = [B](const Vec&, const Vec&) { return B; };

    ConstraintSpec spec;
    spec.nx = 4;
    spec.Ax = Mat(4, 2);
    spec.Ax << 1, 0, -1, 0, 0, 1, 0, -1;
    spec.bx = Vec(4);
    spec.bx << 0.5, 0.5, 1.5, 1.5;
    spec.has_affine = true;
    Mat Ax = spec.Ax;
    Vec bx = spec.bx;
    spec.cx = [Ax, bx](const Vec& x) -> Vec { return Ax * x - bx; };
    spec.cx_jac = [Ax](const Vec&) { return Ax; };
    spec.u_lo = Vec::Constant(1, -3.0);
    spec.u_hi = Vec::Constant(1, 3.0);
    const int N = 10;
    spec.tightening = Vec(N + 1);
    for (int i = 0; i <= N; ++i) spec.tightening(i) = i * 1e-3;
    spec.row_labels = {"psi+", "psi-", "omega+", "omega-"};
    spec.signature = "pendulum-box:0.5,1.5,u3";

    return ModelSetup{std::move(model), std::move(spec), N, 1e6};
}

std::vector<Obstacle> default_car_obstacles() {
    return {
        {0.00, 0.00, 0.40},  {-1.10, 0.55, 0.30}, {1.15, 0.60, 0.28},
        {0.60, -1.05, 0.30}, {-0.75, -1.10, 0.28}, {-1.45, -0.35, 0.25},
        {1.40, -0.50, 0.26}, {0.25, 1.25, 0.30},  {-0.40, -1.70, 0.22},
    };
}

ModelSetup car_model() { return car_model(default_car_obstacles()); }

ModelSetup car_model(const std::vector<Obstacle>& obstacles) {
    const double Ts = 0.02, l = 0.09;

    SystemModel model;
    model.n = 5;
    model.m = 2;
    model.p = 5;
    model.id = "car";
    model.step = [Ts, l](const Vec& x, const Vec& u, const Vec& w) -> Vec {
        Vec xp(5);
        xp(0) = x(0) + Ts * x(3) * std::cos(x(2));
        xp(1) = x(1) + Ts * x(3) * std::sin(x(2));
        xp(2) = x(2) + Ts * x(3) / l * std::tan(x(4));
        xp(3) = x(3) + Ts * u(0);
        xp(4) = x(4) + Ts * u(1);
        return xp + w;
    };
    model.dfdx = [Ts, l](const Vec& x, const Vec&) -> Mat {
        Mat J = Mat::Identity(5, 5);
        const double cp = std::cos(x(2)), sp = std::sin(x(2));
        const double td = std::tan(x(4));
        J(0, 2) = -Ts * x(3) * sp;
        J(0, 3) = Ts * cp;
        J(1, 2) = Ts * x(3) * cp;
        J(1, 3) = Ts * sp;
        J(2, 3) = Ts * td / l;
        J(2, 4) = Ts * x(3) / l * (1.0 + td * td);
        return J;
    };
    model.dfdu = [Ts](const Vec&, const Vec&) -> Mat {
        Mat J = Mat::Zero(5, 2);
        J(3, 0) = Ts;
        J(4, 1) = Ts;
        return J;
    };

    ConstraintSpec spec;
    const int n_obs = static_cast<int>(obstacles.size());
    spec.nx = n_obs + 2;
    spec.cx = [obstacles](const Vec& x) -> Vec {
        Vec r(obstacles.size() + 2);
        for (size_t i = 0; i < obstacles.size(); ++i) {
            const double dx = x(0) - obstacles[i].ox;
            const double dy = x(1) - obstacles[i].oy;
            r(static_cast<int>(i)) = obstacles[i].r * obstacles[i].r - dx * dx - dy * dy;
        }
        r(obstacles.size()) = x(4) - 0.75;
        r(obstacles.size() + 1) = -x(4) - 0.75;
        return r;
    };
    spec.cx_jac = [obstacles](const Vec& x) -> Mat {
        Mat J = Mat::Zero(obstacles.size() + 2, 5);
        for (size_t i = 0; i < obstacles.size(); ++i) {
            J(static_cast<int>(i), 0) = -2.0 * (x(0) - obstacles[i].ox);
            J(static_cast<int>(i), 1) = -2.0 * (x(1) - obstacles[i].oy);
        }
        J(obstacles.size(), 4) = 1.0;
        J(obstacles.size() + 1, 4) = -1.0;
        return J;
    };
    spec.u_lo = Vec(2);
    spec.u_lo << -5.0, -2.8;
    spec.u_hi = Vec(2);
    spec.u_hi << 2.0, 2.8;
    const int N = 50;
    spec.tightening = Vec(N + 1);
    for (int j = 0; j <= N; ++j) spec.tightening(j) = j * 1e-4;
    for (int i = 0; i < n_obs; ++i) spec.row_labels.push_back("obstacle" + std::to_string(i));
    spec.row_labels.push_back("steer+");
    spec.row_labels.push_back("steer-");
    {
        char buf[96];
        spec.signature = "car-obstacles:";
        for (const auto& o : obstacles) {
            std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g;", o.ox, o.oy, o.r);
            spec.signature += buf;
        }
    }

    return ModelSetup{std::move(model), std::move(spec), N, 1e6};
}

Mat solve_dare(const Mat& A, const Mat& B, const Mat& Q, const Mat& R) {
    const int n = static_cast<int>(A.rows());
    if (A.cols() != n || B.rows() != n || Q.rows() != n || Q.cols() != n ||
        R.rows() != B.cols() || R.cols() != B.cols())
        throw std::invalid_argument("solve_dare: inconsistent dimensions");

    Eigen::LLT<Mat> R_llt(R);
    if (R_llt.info() != Eigen::Success)
        throw std::invalid_argument("solve_dare: R must be positive definite");

    // Structure-preserving doubling iteration.
    Mat Ak = A;
    Mat Gk = B * R_llt.solve(B.transpose());
    Mat Hk, Hk1 = Q;
    const Mat I = Mat::Identity(n, n);
    int iter = 0;
    do {
        Hk = Hk1;
        Mat W = I + Gk * Hk;
        Eigen::PartialPivLU<Mat> W_lu(W);
        Mat V1 = W_lu.solve(Ak);
        Mat V2 = W_lu.solve(Gk.transpose()).transpose();
        Gk += Ak * V2 * Ak.transpose();
        Hk1 = Hk + V1.transpose() * Hk * Ak;
        Ak *= V1;
        if (++iter > 200) throw std::runtime_error("solve_dare: no convergence");
    } while ((Hk1 - Hk).norm() > 1e-12 * std::max(1.0, Hk1.norm()));

    Mat P = 0.5 * (Hk1 + Hk1.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> es(P);
    if (es.eigenvalues().minCoeff() <= 0.0)
        throw std::runtime_error("solve_dare: solution not positive definite");
    return P;
}

namespace {

// Largest s such that the ellipse {x'Px <= s} satisfies c'x <= beta for all
// rows (c, beta): support function sqrt(s * c'P^{-1}c) <= beta. Located by
// bisection; returns 0 if some beta <= 0.
double bisect_ellipse_level(const Mat& P_inv, const std::vector<std::pair<Vec, double>>& rows,
                            double s_hi) {
    auto fits = [&](double s) {
        for (const auto& [c, beta] : rows) {
            if (beta <= 0.0) return false;
            if (std::sqrt(s * c.dot(P_inv * c)) > beta) return false;
        }
        return true;
    };
    if (!fits(1e-12)) return 0.0;
    while (fits(s_hi)) s_hi *= 2.0;
    double lo = 1e-12, hi = s_hi;
    for (int it = 0; it < 200 && (hi - lo) > 1e-14 * hi; ++it) {
        double mid = 0.5 * (lo + hi);
        (fits(mid) ? lo : hi) = mid;
    }
    return lo;
}

}  // namespace

TerminalCbf synthesize_terminal_cbf(const SystemModel& model, const ConstraintSpec& spec,
                                    const Mat& Q, const Mat& R) {
    if (!spec.has_affine)
        throw std::invalid_argument(
            "synthesize_terminal_cbf: requires affine state constraints");

    const Vec x0 = Vec::Zero(model.n);
    const Vec u0 = Vec::Zero(model.m);
    const Mat A = model.dfdx(x0, u0);
    const Mat B = model.dfdu(x0, u0);

    const Mat P = solve_dare(A, B, Q, R);
    const Mat K = -(R + B.transpose() * P * B).ldlt().solve(B.transpose() * P * A);

    const double delta_Nm1 = spec.tightening(spec.tightening.size() - 2);
    const Mat P_inv = P.llt().solve(Mat::Identity(model.n, model.n));

    // Ellipse {x'Px <= s} inside the tightened state constraints with Kx in
    // the input box.
    std::vector<std::pair<Vec, double>> rows;
    for (int i = 0; i < spec.nx; ++i)
        rows.emplace_back(spec.Ax.row(i).transpose(), spec.bx(i) - delta_Nm1);
    for (int j = 0; j < model.m; ++j) {
        rows.emplace_back(K.row(j).transpose(), spec.u_hi(j));
        rows.emplace_back(-K.row(j).transpose(), -spec.u_lo(j));
    }
    const double s = bisect_ellipse_level(P_inv, rows, 1.0);
    if (s <= 0.0)
        throw std::runtime_error(
            "synthesize_terminal_cbf: no positive scaling fits the constraints");

    TerminalCbf cbf;
    cbf.P = P / s;
    cbf.K = K;

    // gamma_f: largest extra level on which Kx stays inside the input box.
    const Mat Pt_inv = cbf.P.llt().solve(Mat::Identity(model.n, model.n));
    std::vector<std::pair<Vec, double>> input_rows;
    for (int j = 0; j < model.m; ++j) {
        input_rows.emplace_back(K.row(j).transpose(), spec.u_hi(j));
        input_rows.emplace_back(-K.row(j).transpose(), -spec.u_lo(j));
    }
    const double level = bisect_ellipse_level(Pt_inv, input_rows, 2.0);
    if (level <= 1.0)
        throw std::runtime_error("synthesize_terminal_cbf: gamma_f not positive");
    cbf.gamma_f = level - 1.0;

    // Sampled verification of the invariants before returning.
    Eigen::LLT<Mat> llt(cbf.P);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("synthesize_terminal_cbf: P not positive definite");
    const Mat L = llt.matrixL();
    std::mt19937_64 rng(0x7e51ab);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int k = 0; k < 1000; ++k) {
        Vec dir(model.n);
        for (int i = 0; i < model.n; ++i) dir(i) = gauss(rng);
        dir.normalize();
        const double radius = std::pow(unif(rng), 1.0 / model.n);
        const Vec u_ball = radius * dir;
        const Vec x = std::sqrt(1.0 + cbf.gamma_f) *
                      L.transpose().triangularView<Eigen::Upper>().solve(u_ball);

        const Vec ux = cbf.K * x;
        if (!spec.input_in_box(ux, 1e-9))
            throw std::runtime_error("synthesize_terminal_cbf: Kx leaves input box on D_f");
        const double hf = cbf.offset(x);
        const double hf_next = cbf.offset(model.step0(x, ux));
        if (hf_next - hf > 0.0)
            throw std::runtime_error("synthesize_terminal_cbf: decrease violation");
        if (hf > 0.0 && hf_next - hf > -1e-8)
            throw std::runtime_error("synthesize_terminal_cbf: strict decrease margin violation");
        if (hf <= 0.0) {
            const Vec res = spec.cx(x);
            if ((res.array() > -delta_Nm1 + 1e-12).any())
                throw std::runtime_error(
                    "synthesize_terminal_cbf: safe set leaves tightened constraints");
        }
    }
    return cbf;
}

std::string KvConfig::get_string(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw std::invalid_argument("config: missing key '" + key + "'");
    return it->second;
}

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
}

double KvConfig::get_double(const std::string& key) const {
    return std::stod(get_string(key));
}

double KvConfig::get_double(const std::string& key, double fallback) const {
    return has(key) ? std::stod(get_string(key)) : fallback;
}

int KvConfig::get_int(const std::string& key, int fallback) const {
    return has(key) ? std::stoi(get_string(key)) : fallback;
}

std::vector<double> KvConfig::get_array(const std::string& key) const {
    std::vector<double> out;
    std::stringstream ss(get_string(key));
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
    return out;
}

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

KvConfig load_kv_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (!key.empty()) kv[key] = val;
    }
    return KvConfig(std::move(kv));
}

std::vector<Obstacle> load_obstacle_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open obstacle file: " + path);
    std::vector<Obstacle> obs;
    std::string line;
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        Obstacle o;
        if (!(ss >> o.ox >> o.oy >> o.r))
            throw std::runtime_error("obstacle file: malformed line '" + line + "'");
        obs.push_back(o);
    }
    return obs;
}

ModelSetup model_from_config(const KvConfig& cfg, const std::string& config_dir) {
    const std::string id = cfg.get_string("model");
    ModelSetup setup;
    if (id == "pendulum") {
        setup = pendulum_model();
    } else if (id == "car") {
        if (cfg.has("obstacle_file")) {
            std::string path = cfg.get_string("obstacle_file");
            if (!config_dir.empty() && path.front() != '/') path = config_dir + "/" + path;
            setup = car_model(load_obstacle_file(path));
        } else {
            setup = car_model();
        }
    } else {
        throw std::invalid_argument("config: unknown model '" + id + "'");
    }
    setup.default_horizon = cfg.get_int("horizon", setup.default_horizon);
    setup.alpha_f = cfg.get_double("alpha_f", setup.alpha_f);
    if (setup.default_horizon + 1 > setup.spec.tightening.size()) {
        const int N = setup.default_horizon;
        const double step = setup.spec.tightening(1);
        setup.spec.tightening = Vec(N + 1);
        for (int i = 0; i <= N; ++i) setup.spec.tightening(i) = i * step;
    }
    validate_tightening(setup.spec.tightening);
    return setup;
}

}  // namespace pcbf
