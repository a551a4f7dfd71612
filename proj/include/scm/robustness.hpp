#pragma once

#include "scm/inference.hpp"
#include "scm/scm.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace scm {

// Leave-one-out ------------------------------------------------------------

enum class LooMode { LargestWeight, EachNonzero };

/// Donor weights above this count as nonzero.
inline constexpr double kNonzeroWeight = 1e-6;

struct LooResult {
    std::string excluded_unit;
    ScmFit refit;
    double baseline_gap_end = 0.0;
    double loo_gap_end = 0.0;
    /// Pearson correlation of baseline and refit gaps over the post-period.
    double gap_correlation = 0.0;
};

struct LooOutcome {
    ScmFit baseline;
    std::vector<LooResult> results;
    std::vector<std::string> warnings;
};

LooOutcome leave_one_out(const PanelDataset& dataset, const StudySpec& spec, LooMode mode);

// Penalized synthetic control ----------------------------------------------

struct PenalizedFit {
    ScmFit base;
    double lambda = 0.0;
    /// sum_j w_j ||X1 - X0 e_j||^2_V
    double pairwise_penalty_value = 0.0;
    /// ||X1 - X0 W||^2_V + lambda * pairwise_penalty_value
    double objective = 0.0;
    /// ||X1 - X0 e_j||^2_V per donor.
    Eigen::VectorXd discrepancies;
};

/// Pairwise discrepancies d_j = ||X1 - X0 e_j||^2_V on the fit's standardized design.
Eigen::VectorXd pairwise_discrepancies(const ScmFit& fit);

/// Re-solves W with penalty lambda, keeping the V and standardized design of `plain`.
PenalizedFit penalized_fit(const ScmFit& plain, double lambda);
PenalizedFit penalized_fit(const PanelDataset& dataset, const StudySpec& spec, double lambda);

std::vector<double> default_penalty_grid();

struct PenaltyChoice {
    double lambda = 0.0;
    std::vector<double> grid;
    std::vector<double> holdout_mse;
};

/// Fits V and W on the pre-period minus its last third, then picks the lambda
/// with the smallest outcome MSE over that held-out last third (smallest
/// lambda wins ties).
PenaltyChoice choose_penalty(const PanelDataset& dataset, const StudySpec& spec,
                             std::vector<double> grid = default_penalty_grid());

struct BiasCorrection {
    Eigen::VectorXd counterfactual;
    Eigen::VectorXd gap;
    /// Elastic-net penalty chosen for each period.
    std::vector<double> lambdas;
    /// Pearson correlation with the uncorrected gap over all periods.
    double correlation_with_classic = 0.0;
};

/// Regression-adjusted counterfactual: for each period an elastic-net model
/// mu_t of donor outcomes on standardized predictors (lambda by leave-one-
/// donor-out error) gives cf_t = sum_j w_j (Y_jt - mu_t(X_j)) + mu_t(X_1).
BiasCorrection bias_correct(const ScmFit& fit, double alpha = 0.5);

// LASSO weights ------------------------------------------------------------

struct LassoOptions {
    std::vector<double> lambda_grid;
    double alpha = 1.0;
    /// Held-out window; defaults to the last third of the pre-period.
    std::optional<YearWindow> holdout;
};

struct LassoFit {
    Eigen::VectorXd weights;  ///< may be negative
    double intercept = 0.0;
    std::vector<double> lambda_path;  ///< ascending
    double chosen_lambda = 0.0;
    std::vector<double> holdout_mse;  ///< per lambda_path entry
    std::vector<int> nonzero_counts;  ///< full pre-period fit per lambda_path entry
    std::vector<std::string> donor_ids;
    std::vector<int> periods;
    int treatment_period = 0;
    YearWindow holdout;
    Eigen::VectorXd observed;
    Eigen::VectorXd counterfactual;
    Eigen::VectorXd gap;
    double pre_rmse = 0.0;
    double post_rmse = 0.0;

    GapSeries gap_series() const { return {periods, gap, treatment_period}; }
};

/// Elastic-net regression of the treated pre-period path on donor paths
/// (with intercept). The path is solved from the largest lambda down with
/// warm starts on the training rows; the lambda with the smallest holdout
/// MSE (largest lambda wins ties) is refitted on the whole pre-period.
LassoFit lasso_fit(const PanelDataset& dataset, const StudySpec& spec, const LassoOptions& options);

// Average effect -----------------------------------------------------------

enum class SeMethod { PlaceboSpread, Jackknife, Unavailable };
const char* to_string(SeMethod m);

struct AttResult {
    double att = 0.0;
    std::optional<double> se;
    std::optional<std::pair<double, double>> ci95;
    SeMethod method = SeMethod::Unavailable;
    int post_periods = 0;
};

/// Mean post-period gap. SE is the sample sd of the retained placebo donors'
/// ATTs when `placebos` is given with at least 2 retained donors, else the
/// jackknife over post periods (which for a mean equals sd/sqrt(n));
/// unavailable with fewer than 2 post periods.
AttResult att(const GapSeries& series, const PlaceboDistribution* placebos = nullptr);

}  // namespace scm
