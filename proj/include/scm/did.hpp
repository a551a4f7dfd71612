#pragma once

#include "scm/inference.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace scm {

/// One unit's gap series entering the panel.
struct UnitGaps {
    std::string unit_id;
    std::vector<int> periods;
    Eigen::VectorXd gap;
    bool treated = false;
    int treatment_period = 0;
};

/// Long-format gap panel; row r belongs to units[unit[r]].
struct GapPanel {
    std::vector<std::string> units;
    std::vector<bool> unit_treated;
    std::vector<std::size_t> unit;
    std::vector<int> period;
    Eigen::VectorXd gap;
    std::vector<bool> post;
    Eigen::MatrixXd lag_values;  ///< rows x lags; column l is the gap lagged l + 1 periods
    int lags = 0;
    std::vector<std::string> warnings;

    Eigen::Index rows() const noexcept { return gap.size(); }
};

/// Stacks the series and drops the first `lags` periods of each unit to fill
/// the lag columns. Series shorter than lags + 2 are dropped with a warning.
GapPanel build_gap_panel(const std::vector<UnitGaps>& series, int lags);
/// Treated record plus every retained donor record.
GapPanel build_gap_panel(const PlaceboDistribution& dist, int lags);

struct DidResult {
    double effect = 0.0;
    double clustered_se = 0.0;
    std::pair<double, double> ci95;
    double fe_unit_pvalue = 1.0;
    double fe_time_pvalue = 1.0;
    double r2_within = 0.0;
    double r2_between = 0.0;
    double r2_overall = 0.0;
    /// Coefficients on the lag columns.
    Eigen::VectorXd lag_coef;
    std::size_t clusters = 0;
    Eigen::Index observations = 0;
    Eigen::Index parameters = 0;
};

/// OLS of gap on treated x post, the lag columns, unit dummies and time
/// dummies (first period dropped). Standard errors are clustered by unit
/// with the CR1 factor G/(G-1) (N-1)/(N-k); FE blocks get joint F tests.
/// Throws RegressionError naming the first collinear block.
DidResult did_regress(const GapPanel& panel);

/// Same interaction and lag coefficients via two-way alternating demeaning.
Eigen::VectorXd did_within_coefficients(const GapPanel& panel);

struct DidSubsample {
    std::vector<double> effects;
    double mean_effect = 0.0;
    double sd_effect = 0.0;
    /// Share of draws whose 95% interval excludes zero.
    double rejection_share = 0.0;
};

/// Repeats did_regress on the treated unit plus `subset_size` donors drawn
/// without replacement, `draws` times, from stream (seed, "did", draw).
DidSubsample did_subsample(const PlaceboDistribution& dist, int lags, int draws, int subset_size,
                           std::uint64_t seed);

}  // namespace scm
