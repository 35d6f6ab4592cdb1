#ifndef PCBF_SOLVER_HPP
#define PCBF_SOLVER_HPP

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <functional>
#include <optional>
#include <string>

#include "pcbf/model.hpp"

namespace pcbf {

using SpMat = Eigen::SparseMatrix<double>;

struct SolverConfig {
    double feas_tol = 1e-8;   ///< QP primal feasibility tolerance
    double opt_tol = 1e-8;    ///< QP stationarity tolerance
    int max_iter = 5000;      ///< QP iteration cap

    double nlp_tol = 1e-6;    ///< SQP KKT residual tolerance
    int max_sqp_iter = 100;
    double elastic_penalty = 1e4;  ///< slack penalty when a QP subproblem is infeasible

    // Line-search constants.
    double backtrack = 0.5;
    double min_step = 1e-10;
};

enum class SolveStatus { Optimal, MaxIter, Infeasible };

std::string to_string(SolveStatus s);

struct SolveResult {
    Vec z;
    Vec eq_duals;  ///< stationarity convention: grad + A_eq' nu + A_in' lambda = 0
    Vec in_duals;  ///< lambda >= 0
    double value = 0.0;
    SolveStatus status = SolveStatus::MaxIter;
    int iterations = 0;
    double wall_time = 0.0;
    double feas_residual = 0.0;
    double stat_residual = 0.0;
    bool polished = false;
};

/// Convex QP  min 1/2 z'Hz + g'z  s.t.  A_eq z = b_eq,  A_in z <= b_in.
/// H is symmetrized at construction.
struct QpProblem {
    SpMat H;
    Vec g;
    SpMat A_eq;
    Vec b_eq;
    SpMat A_in;
    Vec b_in;

    static QpProblem make(SpMat H, Vec g, SpMat A_eq, Vec b_eq, SpMat A_in, Vec b_in);
    static QpProblem dense(const Mat& H, const Vec& g, const Mat& A_eq, const Vec& b_eq,
                           const Mat& A_in, const Vec& b_in);
    void validate() const;
    int dim() const { return static_cast<int>(g.size()); }
};

/// Operator-splitting (ADMM) QP solver with Ruiz equilibration and an
/// active-set polish step; detects primal/dual infeasibility certificates.
/// Deterministic: identical inputs give an identical iterate sequence.
SolveResult solve_qp(const QpProblem& p, const std::optional<SolveResult>& warmstart,
                     const SolverConfig& cfg);

/// Smooth NLP  min f(z)  s.t.  eq(z) = 0,  in(z) <= 0.
struct NlpProblem {
    int dim = 0;
    std::function<double(const Vec&)> objective;
    std::function<Vec(const Vec&)> gradient;
    /// Exact objective Hessian for quadratic/Gauss-Newton objectives; when
    /// absent the SQP layer uses a damped BFGS approximation (small dims) or
    /// a fixed diagonal.
    std::function<SpMat(const Vec&)> objective_hessian;
    std::function<Vec(const Vec&)> eq_cons;
    std::function<SpMat(const Vec&)> eq_jac;
    std::function<Vec(const Vec&)> in_cons;
    std::function<SpMat(const Vec&)> in_jac;
    Vec z0;

    int n_eq(const Vec& z) const { return eq_cons ? static_cast<int>(eq_cons(z).size()) : 0; }
    int n_in(const Vec& z) const { return in_cons ? static_cast<int>(in_cons(z).size()) : 0; }
};

/// SQP with l1 merit line search. QP subproblem infeasibility triggers an
/// elastic relaxation of the linearized constraints before the problem is
/// declared infeasible.
SolveResult solve_nlp(const NlpProblem& p, const std::optional<SolveResult>& warmstart,
                      const SolverConfig& cfg);

}  // namespace pcbf

#endif  // PCBF_SOLVER_HPP
