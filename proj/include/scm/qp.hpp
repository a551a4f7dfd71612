#pragma once

#include <Eigen/Dense>

#include <vector>

namespace scm {

struct QpSettings {
    /// Largest tolerated violation of w >= 0 / sum(w) = 1 by the interior
    /// iterate before the final projection; beyond it the result is flagged
    /// as not converged.
    double violation_tolerance = 0.05;
    int max_iterations = 1000;
    /// Upper bound kept on every iterate (never active on the simplex).
    double variable_clip_bound = 10.0;
    /// Stop once scaled complementarity and residuals fall below this.
    double kkt_tolerance = 1e-9;
};

/// min_w ||A w - b||^2 + linear' w  subject to  w >= 0, sum(w) = 1.
///
/// `linear` is empty for the plain synthetic-control problem; the penalized
/// estimator supplies its per-donor discrepancy term through it.
struct SimplexQp {
    Eigen::MatrixXd a;  ///< K x J
    Eigen::VectorXd b;  ///< K
    Eigen::VectorXd linear;
    QpSettings settings;
};

struct WeightVector {
    Eigen::VectorXd w;
    double objective = 0.0;
    bool converged = false;
    int iterations = 0;
    /// kkt_residual of each interior iterate, in order.
    std::vector<double> residual_trace;
};

double qp_objective(const SimplexQp& problem, const Eigen::VectorXd& w);

/// Primal-dual path-following interior-point solve (Mehrotra predictor-
/// corrector) followed by an active-set polish and a final clip-and-
/// renormalize projection. Single-predictor problems are solved in closed
/// form, returning the lowest-index optimal extreme point.
///
/// Throws std::invalid_argument on shape errors or non-finite input.
WeightVector solve_simplex_qp(const SimplexQp& problem);

/// Optimality certificate for a feasible w: with g the objective gradient,
/// returns max_j w_j (g_j - min_i g_i). Zero exactly at an optimum.
/// Throws std::invalid_argument if w is not on the simplex (tolerance 1e-8).
double kkt_residual(const SimplexQp& problem, const Eigen::VectorXd& w);
inline double kkt_residual(const SimplexQp& problem, const WeightVector& w) { return kkt_residual(problem, w.w); }

}  // namespace scm
