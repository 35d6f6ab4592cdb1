#ifndef PCBF_MODEL_HPP
#define PCBF_MODEL_HPP

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace pcbf {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Discrete-time dynamics x+ = step(x, u, w) with analytic Jacobians.
/// All hooks are pure; instances are immutable after construction and safe
/// to share across threads.
struct SystemModel {
    int n = 0;  ///< state dimension
    int m = 0;  ///< input dimension
    int p = 0;  ///< disturbance dimension
    std::string id;
    std::function<Vec(const Vec&, const Vec&, const Vec&)> step;
    std::function<Mat(const Vec&, const Vec&)> dfdx;  ///< n x n
    std::function<Mat(const Vec&, const Vec&)> dfdu;  ///< n x m

    Vec step0(const Vec& x, const Vec& u) const { return step(x, u, Vec::Zero(p)); }
};

/// State constraint residuals cx(x) <= 0, input box and the stage tightening
/// schedule. The optional affine form (Ax, bx) is available for the built-in
/// pendulum and enables band-densified grid sampling.
struct ConstraintSpec {
    int nx = 0;  ///< number of state constraint rows
    std::function<Vec(const Vec&)> cx;
    std::function<Mat(const Vec&)> cx_jac;  ///< nx x n
    Vec u_lo, u_hi;
    Vec tightening;  ///< Delta_0..Delta_N, Delta_0 = 0, strictly increasing
    bool has_affine = false;
    Mat Ax;  ///< cx(x) = Ax*x - bx when has_affine
    Vec bx;
    std::vector<std::string> row_labels;
    std::string signature;  ///< canonical parameter string, feeds config hashing

    bool input_in_box(const Vec& u, double tol = 0.0) const {
        return (u.array() >= u_lo.array() - tol).all() &&
               (u.array() <= u_hi.array() + tol).all();
    }
};

/// Throws unless Delta_0 = 0 and the schedule is strictly increasing.
void validate_tightening(const Vec& tightening);

/// Quadratic terminal CBF h_f(x) = x'Px - 1 with linear feedback u = Kx,
/// valid on the domain {h_f <= gamma_f}.
struct TerminalCbf {
    Mat P;        ///< symmetric positive definite
    Mat K;        ///< m x n feedback gain
    double gamma_f = 0.0;

    double offset(const Vec& x) const { return x.dot(P * x) - 1.0; }
    Vec offset_grad(const Vec& x) const { return 2.0 * (P * x); }
};

/// Model + constraints + the per-model horizon defaults.
struct ModelSetup {
    SystemModel model;
    ConstraintSpec spec;
    int default_horizon = 0;
    double alpha_f = 0.0;
};

/// Circular obstacle for the car environment.
struct Obstacle {
    double ox = 0.0, oy = 0.0, r = 0.0;
};

/// Unstable linearised pendulum with damper; 2 states, 1 input.
/// Ts = 0.1, c = 1, l = 1.3, g = 9.81; |psi| <= 0.5, |omega| <= 1.5,
/// |u| <= 3, tightening i*1e-3, N = 10, alpha_f = 1e6.
ModelSetup pendulum_model();

/// Kinematic car, Euler forward; 5 states [px py psi v delta], 2 inputs.
/// l = 0.09, Ts = 0.02; -5 <= u0 <= 2, |u1| <= 2.8, |delta| <= 0.75;
/// 9 circular obstacles, tightening j*1e-4, N = 50.
ModelSetup car_model();
ModelSetup car_model(const std::vector<Obstacle>& obstacles);

/// Default obstacle layout shipped with the car model (9 circles in [-2,2]^2).
std::vector<Obstacle> default_car_obstacles();

/// Discrete algebraic Riccati equation solver (structure-preserving doubling).
Mat solve_dare(const Mat& A, const Mat& B, const Mat& Q, const Mat& R);

/// Riccati-based terminal CBF synthesis: P from the DARE at the linearised
/// equilibrium, the ellipse x'Px <= 1 scaled by bisection into the tightened
/// state constraints with Kx inside the input box, gamma_f the largest extra
/// level keeping Kx feasible. All invariants checked on 1000 samples before
/// returning; throws on any violation or when no positive scaling exists.
TerminalCbf synthesize_terminal_cbf(const SystemModel& model, const ConstraintSpec& spec,
                                    const Mat& Q, const Mat& R);

/// Plain-text key = value configuration (arrays comma-separated, '#' comments).
class KvConfig {
public:
    KvConfig() = default;
    explicit KvConfig(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

    bool has(const std::string& key) const { return kv_.count(key) > 0; }
    std::string get_string(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    std::vector<double> get_array(const std::string& key) const;

private:
    std::map<std::string, std::string> kv_;
};

KvConfig load_kv_config(const std::string& path);

/// Obstacle layout file: one line per obstacle, `ox oy r`.
std::vector<Obstacle> load_obstacle_file(const std::string& path);

/// Builds a ModelSetup from a config: `model = pendulum|car`, optional
/// `horizon`, `alpha_f` and `obstacle_file` overrides.
ModelSetup model_from_config(const KvConfig& cfg, const std::string& config_dir = "");

}  // namespace pcbf

#endif  // PCBF_MODEL_HPP
