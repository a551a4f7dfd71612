#pragma once

#include "scm/panel.hpp"
#include "scm/qp.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace scm {

enum class VMethod { RegressionBased, CrossValidated, Uniform, NestedSearch };

const char* to_string(VMethod m);

/// Diagonal of the predictor-importance matrix V (non-negative, trace one).
struct PredictorWeights {
    Eigen::VectorXd v;
    VMethod method = VMethod::Uniform;
    /// Set when regression-based weights fell back to uniform.
    std::string note;
};

PredictorWeights uniform_v(Eigen::Index k);

/// |beta_k| / sum |beta| from an OLS projection, across the treated unit and
/// all donors, of each unit's mean pre-period outcome on an intercept and
/// its K predictor values. Falls back to uniform weights (with `note` set)
/// when the stacked regression is rank deficient or has no more rows than
/// coefficients.
PredictorWeights regression_v(const DesignMatrices& design);

/// Builds the simplex QP for donor weights under V: A = V^{1/2} X0, b = V^{1/2} X1.
SimplexQp weight_problem(const DesignMatrices& design, const PredictorWeights& v, const QpSettings& settings = {});

/// Mean squared pre-period outcome discrepancy of the synthetic unit built
/// from w: (Q1 - Q0 w)'(Q1 - Q0 w) / T_pre.
double outcome_loss(const DesignMatrices& design, const Eigen::VectorXd& w);

/// Candidate V set in its fixed order: regression-based, uniform, then
/// `dirichlet_draws` flat-Dirichlet draws from stream (seed, "vcand", i).
std::vector<PredictorWeights> v_candidates(const DesignMatrices& standardized, int dirichlet_draws,
                                           std::uint64_t seed);

struct VSelection {
    PredictorWeights v;
    WeightVector w;
    std::size_t index = 0;
    std::vector<double> losses;
};

/// Picks the candidate whose W(V) minimizes `outcome_loss` on `standardized`
/// (lowest index wins ties).
VSelection select_v_nested(const DesignMatrices& standardized, const std::vector<PredictorWeights>& candidates,
                           const QpSettings& settings = {});

struct CvSplit {
    /// Last training period; validation runs to the period before the fit cutoff.
    int training_end = 0;
    /// Explicit candidate set; empty means the default v_candidates() set
    /// built from the training design.
    std::vector<PredictorWeights> candidates;
};

struct CvResult {
    PredictorWeights weights;
    std::size_t best_index = 0;
    std::vector<double> validation_losses;
    int training_end = 0;
};

/// Midpoint of the pre-period: the training window holds floor(P / 2) periods.
int default_training_end(const PanelDataset& dataset, const StudySpec& spec);

/// Out-of-sample V selection. Each candidate V is used to fit W on the
/// training-stage design (predictors shifted back by the validation length,
/// see build_shifted_design); the candidate with the smallest mean squared
/// outcome error over the validation window wins. Throws SpecError when
/// either window has fewer than 2 periods.
CvResult cross_validate_v(const PanelDataset& dataset, const StudySpec& spec, const CvSplit& split);

struct GapSeries {
    std::vector<int> periods;
    Eigen::VectorXd gap;
    int treatment_period = 0;
};

struct ScmFit {
    WeightVector weights;
    PredictorWeights vweights;
    Eigen::VectorXd counterfactual;
    Eigen::VectorXd observed;
    Eigen::VectorXd gap;
    double pre_rmse = 0.0;
    double post_rmse = 0.0;
    StudySpec spec;
    std::vector<std::string> donor_ids;
    std::vector<int> periods;
    int treatment_period = 0;

    DesignMatrices design;              ///< raw-scale blocks
    StandardizedDesign standardized;   ///< blocks used by the optimizer
    std::vector<std::string> warnings;

    GapSeries gap_series() const { return {periods, gap, treatment_period}; }
    /// Donor outcome paths (periods x J).
    Eigen::MatrixXd donor_paths() const { return design.paths.rightCols(design.donors()); }
};

struct FitSettings {
    bool nested = true;
    int v_candidates = 200;
    std::uint64_t seed = 0;
    /// Extra candidate appended to the nested search (the cross-validated V).
    std::optional<PredictorWeights> extra_candidate;
    /// Bypasses V selection entirely.
    std::optional<PredictorWeights> fixed_v;
    QpSettings qp;
};

/// Standardizes, selects V and solves W on an already-built design.
ScmFit fit_design(const DesignMatrices& design, const FitSettings& settings);

/// Assembles a fit from explicit donor weights (counterfactual, gap, RMSEs).
ScmFit make_fit(const DesignMatrices& design, StandardizedDesign standardized, PredictorWeights v,
                WeightVector w);

/// Full estimator: build design, standardize, select V, solve W.
///
/// With nested optimization the V search covers the regression-based V,
/// uniform V, `spec.v_candidates` seeded Dirichlet draws and, when the
/// pre-period allows a training/validation split, the cross-validated V;
/// the winner minimizes the pre-period outcome loss. Without it V is
/// regression-based. Solver non-convergence is reported in `warnings`.
ScmFit fit(const PanelDataset& dataset, const StudySpec& spec, const QpSettings& qp = {});

struct Window {
    enum class Kind { Pre, Post, Custom };
    Kind kind = Kind::Pre;
    int first = 0;
    int last = 0;

    static Window pre() { return {Kind::Pre, 0, 0}; }
    static Window post() { return {Kind::Post, 0, 0}; }
    static Window range(int first, int last) { return {Kind::Custom, first, last}; }
};

/// Root mean squared gap over a window; std::invalid_argument when empty.
double rmse(const GapSeries& series, const Window& window);
inline double rmse(const ScmFit& fit, const Window& window) { return rmse(fit.gap_series(), window); }

}  // namespace scm
