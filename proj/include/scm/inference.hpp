#pragma once

#include "scm/scm.hpp"

#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace scm {

struct PlaceboRecord {
    std::string unit_id;
    /// Empty when the fit failed.
    std::optional<ScmFit> fit;
    double pre_rmspe = 0.0;
    double post_rmspe = 0.0;
    double ratio = 0.0;
    /// Pre-period RMSPE is zero, so the ratio is +inf.
    bool infinite_ratio = false;
    bool failed = false;
    std::string failure;
    /// Removed by the pre-fit filter; kept for auditing.
    bool excluded = false;

    bool retained() const noexcept { return !failed && !excluded; }
};

struct PlaceboDistribution {
    PlaceboRecord treated;
    std::vector<PlaceboRecord> donors;  ///< sorted by unit id
    double filter_multiple = 4.0;
    std::map<int, double> per_period_pvalues;
    double overall_pvalue = 1.0;

    /// Retained donor records plus the treated record.
    std::size_t retained_count() const;
};

/// Post-period RMSPE over pre-period RMSPE; +inf when the pre-period RMSPE is zero.
double rmspe_ratio(const ScmFit& fit);

/// Builds a record (RMSPEs, ratio, flags) from a completed fit.
PlaceboRecord make_record(std::string unit_id, ScmFit fit);

struct PlaceboOptions {
    /// Pre-fit filter multiple; +inf keeps every donor.
    double filter_multiple = 4.0;
    /// Worker threads for the placebo fits; results do not depend on it.
    int threads = 1;
    QpSettings qp;
};

/// Re-fits the study once per donor with that donor as pseudo-treated unit
/// and the true treated unit moved into its donor pool. Each placebo runs the
/// spec's own V selection. Failed fits are flagged and left out of every
/// p-value.
PlaceboDistribution in_space_placebo(const PanelDataset& dataset, const StudySpec& spec,
                                     const PlaceboOptions& options = {});

/// Marks donors with pre_rmspe > multiple * treated pre_rmspe as excluded and
/// recomputes the p-values. Throws InferenceError when every donor is excluded.
PlaceboDistribution prefit_filter(PlaceboDistribution dist, double multiple);

/// For each post period, the share of retained units (treated included) with
/// |gap_t| >= |treated gap_t|.
std::map<int, double> per_period_pvalues(const PlaceboDistribution& dist);

/// Share of retained units (treated included) whose RMSPE ratio is at least
/// the treated unit's.
double overall_pvalue(const PlaceboDistribution& dist);

/// 1-based rank of the treated ratio among retained units, largest first;
/// ties resolve in the treated unit's favour (lowest rank).
std::size_t treated_ratio_rank(const PlaceboDistribution& dist);

/// Copy of `spec` whose fit stops before `cutoff`: benchmark years at or
/// after it are dropped, covariate windows are clipped before it (a window
/// starting at or after it reverts to the default) and fit_cutoff = cutoff.
/// training_end is reset to its default.
StudySpec restrict_spec_before(const StudySpec& spec, int cutoff);

/// Refit with the treatment date moved to `false_t0`.
///
/// Backdated (false_t0 < T0): only periods <= fit_end are used, fit_end must
/// precede T0, benchmark years at or after false_t0 are dropped and covariate
/// windows are clipped before false_t0.
/// Forwarded (false_t0 > T0): weights are fitted on pre-T0 data only, the
/// treatment is labelled at false_t0 and periods up to fit_end are kept.
ScmFit in_time_placebo(const PanelDataset& dataset, const StudySpec& spec, int false_t0, int fit_end);

/// Observed and counterfactual paths of `fit` extended over every period of
/// `dataset` with the fitted donor weights.
struct ExtendedPaths {
    std::vector<int> periods;
    Eigen::VectorXd observed;
    Eigen::VectorXd counterfactual;
};
ExtendedPaths extend_paths(const ScmFit& fit, const PanelDataset& dataset);

}  // namespace scm
