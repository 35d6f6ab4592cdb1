// Test-only oracles for the horizon value functions: a direct dense epigraph
// QP formulation (linear dynamics only) solved by the interior-point oracle,
// with adaptive tangent cuts for the quadratic terminal constraint, plus a
// bisection locator for the safe-set boundary.
#ifndef PCBF_TESTS_ORACLES_HPP
#define PCBF_TESTS_ORACLES_HPP

#include "pcbf/pcbf.hpp"
#include "support/oracle_qp.hpp"

namespace pcbf_test {

/// h_PB by dense epigraph QP + interior point + terminal tangent cuts.
/// Valid for linear models with affine state constraints (the pendulum).
double oracle_hpb(const pcbf::HorizonProblem& hp, const pcbf::Vec& x);

/// hbar by the same route.
double oracle_hbar(const pcbf::HorizonProblem& hp, const pcbf::Vec& x);

/// Walks t in [0, t_hi] until h_PB(t * dir) crosses tol_zero, then bisects
/// the crossing to `param_tol`. Returns the bracketing parameter pair
/// (inside, outside); throws if no crossing exists on the ray.
std::pair<double, double> bisect_boundary(const pcbf::HorizonProblem& hp, const pcbf::Vec& dir,
                                          double t_hi, double param_tol = 1e-8);

}  // namespace pcbf_test

#endif
