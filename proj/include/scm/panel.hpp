#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace scm {

enum class VariableRole { Outcome, Covariate };

struct Unit {
    std::string id;
    std::string name;
    bool operator==(const Unit&) const = default;
};

struct Variable {
    std::string name;
    VariableRole role = VariableRole::Covariate;
    bool operator==(const Variable&) const = default;
};

/// Balanced unit x period x variable panel. Immutable once constructed.
///
/// Units keep the order in which they were first seen in the source; that
/// order defines donor column order everywhere downstream.
class PanelDataset {
public:
    PanelDataset() = default;
    /// `values` is laid out variable-major, then unit, then period. Throws
    /// ValidationError if any invariant (unique ids, strictly increasing
    /// periods, finite values, sizes) is violated.
    PanelDataset(std::vector<Unit> units, std::vector<int> periods, std::vector<Variable> variables,
                 std::vector<double> values);

    const std::vector<Unit>& units() const noexcept { return units_; }
    const std::vector<int>& periods() const noexcept { return periods_; }
    const std::vector<Variable>& variables() const noexcept { return variables_; }

    std::size_t unit_count() const noexcept { return units_.size(); }
    std::size_t period_count() const noexcept { return periods_.size(); }
    std::size_t row_count() const noexcept { return units_.size() * periods_.size(); }

    std::optional<std::size_t> find_unit(std::string_view id) const;
    std::optional<std::size_t> find_period(int year) const;
    std::optional<std::size_t> find_variable(std::string_view name) const;

    double value(std::size_t unit, std::size_t period, std::size_t variable) const {
        return values_[(variable * units_.size() + unit) * periods_.size() + period];
    }
    /// Full time path of one variable for one unit.
    Eigen::VectorXd series(std::size_t unit, std::size_t variable) const;

    /// Copy restricted to periods <= last_period.
    PanelDataset truncated(int last_period) const;
    /// Copy restricted to the listed unit ids (kept in dataset order).
    PanelDataset with_units(const std::vector<std::string>& ids) const;

    const std::vector<double>& raw_values() const noexcept { return values_; }

    bool operator==(const PanelDataset&) const = default;

private:
    std::vector<Unit> units_;
    std::vector<int> periods_;
    std::vector<Variable> variables_;
    std::vector<double> values_;
};

/// Column mapping for delimiter-separated input.
struct PanelSchema {
    std::string unit_column = "unit";
    std::string year_column = "year";
    std::optional<std::string> name_column;
    char delimiter = ',';
    /// Variables registered as outcomes; all other value columns are covariates.
    std::vector<std::string> outcome_columns;
    /// When set, an unbalanced unit is a ValidationError instead of being dropped.
    bool strict = false;
};

struct LoadReport {
    std::vector<std::string> dropped_units;
    std::vector<int> dropped_periods;
    std::vector<std::string> warnings;
};

struct LoadResult {
    PanelDataset dataset;
    LoadReport report;
};

/// Parses `unit,year,<var>...` text. A period with no rows for more than
/// half of the units is dropped first; any unit still missing a cell is then
/// dropped (or rejected in strict mode).
LoadResult load_panel(std::istream& in, const PanelSchema& schema = {});
LoadResult load_panel_file(const std::filesystem::path& path, const PanelSchema& schema = {});

/// Writes the canonical format. Values use shortest round-trip formatting,
/// so load_panel(write_panel(d)) reproduces d bit for bit.
void write_panel(std::ostream& out, const PanelDataset& dataset);

struct BenchmarkYears {
    std::vector<int> years;
    bool operator==(const BenchmarkYears&) const = default;
};
struct LaggedOutcomes {
    int count = 1;
    bool operator==(const LaggedOutcomes&) const = default;
};
struct FullPrePath {
    bool operator==(const FullPrePath&) const = default;
};
using PredictorScheme = std::variant<BenchmarkYears, LaggedOutcomes, FullPrePath>;

struct YearWindow {
    int first = 0;
    int last = 0;
    bool operator==(const YearWindow&) const = default;
};

struct CovariateSpec {
    std::string variable;
    /// Inclusive averaging window; defaults to the full pre-period.
    std::optional<YearWindow> window;
    bool operator==(const CovariateSpec&) const = default;
};

struct StudySpec {
    std::string treated_unit;
    /// First post-treatment period.
    int treatment_period = 0;
    std::string outcome;
    PredictorScheme predictors = FullPrePath{};
    std::vector<CovariateSpec> covariates;
    std::vector<std::string> donor_exclusions;
    bool nested_optimization = true;
    /// Last period of the training window used by cross-validated V
    /// selection; defaults to the midpoint of the pre-period.
    std::optional<int> training_end;
    /// Predictors and pre-period outcome blocks only use periods strictly
    /// before the cutoff; defaults to treatment_period.
    std::optional<int> fit_cutoff;
    /// Number of seeded Dirichlet V candidates in the nested search.
    int v_candidates = 200;
    std::uint64_t seed = 0;

    bool operator==(const StudySpec&) const = default;
};

int effective_cutoff(const StudySpec& spec);

/// Throws SpecError (or DonorPoolError when fewer than two donors remain).
void validate_spec(const PanelDataset& dataset, const StudySpec& spec);

/// Donor ids in dataset order: every unit except the treated unit and the
/// exclusions.
std::vector<std::string> donor_pool(const PanelDataset& dataset, const StudySpec& spec);

/// Predictor and outcome blocks for one study.
///
/// Predictor rows: the predictor-scheme rows first, covariate rows after.
/// Column j of x0/q0 (and column j + 1 of paths) is donor_ids[j].
struct DesignMatrices {
    Eigen::VectorXd x1;     ///< K treated predictor values
    Eigen::MatrixXd x0;     ///< K x J donor predictor values
    Eigen::VectorXd q1;     ///< treated outcomes over the pre-period
    Eigen::MatrixXd q0;     ///< pre-period x J donor outcomes
    Eigen::MatrixXd paths;  ///< all periods x (J + 1); column 0 is the treated unit

    std::string treated_id;
    std::vector<std::string> donor_ids;
    std::vector<std::string> predictor_labels;
    std::vector<int> periods;      ///< rows of `paths`
    std::vector<int> pre_periods;  ///< rows of `q1`/`q0`
    int treatment_period = 0;
    Eigen::Index scheme_rows = 0;  ///< leading predictor rows that come from the scheme

    Eigen::Index predictors() const noexcept { return x1.size(); }
    Eigen::Index donors() const noexcept { return x0.cols(); }
};

DesignMatrices build_design(const PanelDataset& dataset, const StudySpec& spec);

/// Training-stage design for cross-validation: the pre-period ends at
/// `cutoff` and every predictor year (benchmark years, full-path years and
/// covariate windows) is moved `shift` periods earlier, clamped into the
/// available training window. Lagged-outcome rows are already relative to
/// the cutoff and are not shifted further.
DesignMatrices build_shifted_design(const PanelDataset& dataset, const StudySpec& spec, int cutoff,
                                    int shift);

struct ScalingRecord {
    Eigen::VectorXd mean;
    Eigen::VectorXd scale;  ///< population sd; 1 for constant rows
    std::vector<bool> constant;
};

struct StandardizedDesign {
    DesignMatrices design;
    ScalingRecord scaling;
    std::vector<std::string> warnings;
};

/// Z-scores every predictor row across {treated, donors} using the
/// population standard deviation. Constant rows become zero with a warning.
StandardizedDesign standardize_predictors(const DesignMatrices& design);

/// Maps standardized predictor values back to the raw scale.
Eigen::VectorXd unstandardize(const ScalingRecord& scaling, const Eigen::VectorXd& standardized);

}  // namespace scm
