#ifndef PCBF_PCBF_HPP
#define PCBF_PCBF_HPP

#include <cstdint>
#include <optional>
#include <variant>

#include "pcbf/model.hpp"
#include "pcbf/solver.hpp"

namespace pcbf {

/// Terminal condition pinning selected state components to zero at stage N,
/// with the stage-N tightened state constraints kept hard (car study).
struct HardStopTerminal {
    std::vector<int> zero_state_idx;
};

/// Everything defining the horizon value problems: model, constraints,
/// terminal condition, horizon length, terminal slack weight.
struct HorizonProblem {
    SystemModel model;
    ConstraintSpec spec;
    std::variant<TerminalCbf, HardStopTerminal> terminal;
    int N = 0;
    double alpha_f = 0.0;
    double c_h = 1.0;        ///< scaling of the negative extension inside the safe set
    double tol_zero = 1e-6;  ///< numerical membership threshold for S_PB
    SolverConfig solver;

    bool has_cbf_terminal() const { return std::holds_alternative<TerminalCbf>(terminal); }
    const TerminalCbf& cbf_terminal() const { return std::get<TerminalCbf>(terminal); }
    const HardStopTerminal& hard_terminal() const { return std::get<HardStopTerminal>(terminal); }

    void validate() const;
    std::uint64_t config_hash() const;
};

/// Pendulum problem with the synthesized quadratic terminal CBF (Q = I, R = I).
HorizonProblem make_pendulum_problem();

/// Car problem with the hard stop terminal (v_N = 0). The paper's horizon is
/// 50; the desk-scale studies use a shorter one that still covers braking
/// from the top sampling speed.
HorizonProblem make_car_problem(int N = 35);
HorizonProblem make_car_problem(const std::vector<Obstacle>& obstacles, int N);

enum class PcbfBranch { Outside, Inside };

struct PcbfStats {
    int iterations = 0;
    double wall_time = 0.0;
    SolveStatus status = SolveStatus::MaxIter;
};

/// Optimal trajectory, slacks and duals of one horizon solve; the warmstart
/// currency of the sampler.
struct PcbfSolution {
    Mat xs;      ///< n x (N+1)
    Mat us;      ///< m x N
    Mat slacks;  ///< nx x N stage slacks (for the min-max problem: residuals)
    double terminal_slack = 0.0;
    Vec eq_duals, in_duals;
    double value = 0.0;
    PcbfBranch branch = PcbfBranch::Outside;
    PcbfStats stats;

    /// Gradient of the value w.r.t. the query state (from the initial-state
    /// equality multipliers).
    Vec state_gradient() const;
};

/// Continuous-extension value with the branch that produced it.
struct CeValue {
    double value = 0.0;
    PcbfBranch branch = PcbfBranch::Outside;
    PcbfSolution solution;
};

/// PCBF value function: weighted terminal slack plus the l1 sum of stage
/// slacks, all slacks nonnegative. Always feasible for the CBF terminal.
/// Throws on solver failure.
PcbfSolution eval_hpb(const HorizonProblem& hp, const Vec& x,
                      const PcbfSolution* warmstart = nullptr);

/// Negative continuous extension: minimize the maximum slack with slacks
/// unconstrained in sign (epigraph form). Negative inside S_PB, zero on its
/// boundary.
PcbfSolution eval_hbar(const HorizonProblem& hp, const Vec& x,
                       const PcbfSolution* warmstart = nullptr);

struct CeHint {
    PcbfBranch branch = PcbfBranch::Outside;
    const PcbfSolution* warmstart = nullptr;
};

/// Continuous extension dispatch: h_PB outside S_PB, c_h * hbar inside. The
/// hint solves the indicated branch first and falls back on the membership
/// tests, so trusted hints cost a single solve.
CeValue eval_hce(const HorizonProblem& hp, const Vec& x,
                 const std::optional<CeHint>& hint = std::nullopt);

struct PsfMode {
    enum Kind { FromEq6, SoftPenalty } kind = FromEq6;
    double c_xi = 0.0;  ///< slack penalty weight in SoftPenalty mode

    static PsfMode from_eq6() { return {FromEq6, 0.0}; }
    static PsfMode soft(double c_xi) { return {SoftPenalty, c_xi}; }
};

struct PsfResult {
    Vec u;
    double intervention_mag = 0.0;
    PcbfSolution solution;
    PcbfStats stats;
};

/// Predictive safety filter: minimize ||u_0 - u_p||^2 over safe trajectories.
/// FromEq6 freezes the slacks of a PCBF solve (two-stage algorithm; pass the
/// solve in `hpb_solution` or it is computed here). SoftPenalty folds the
/// weighted slack cost into the objective instead. Infeasibility in FromEq6
/// mode is a contract violation and throws with the offending state.
PsfResult psf_filter(const HorizonProblem& hp, const Vec& x, const Vec& u_p, const PsfMode& mode,
                     const PcbfSolution* hpb_solution = nullptr);

}  // namespace pcbf

#endif  // PCBF_PCBF_HPP
