#pragma once

#include "scm/break_tests.hpp"
#include "scm/config.hpp"
#include "scm/did.hpp"
#include "scm/inference.hpp"
#include "scm/robustness.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace scm {

struct BalanceRow {
    std::string predictor;
    double treated = 0.0;
    double synthetic = 0.0;
    double donor_mean = 0.0;
    double v_weight = 0.0;
};

/// Treated vs synthetic predictor values (raw scale) with the V weights.
std::vector<BalanceRow> balance_table(const ScmFit& fit);

struct PerformanceRow {
    double rmse_nested = 0.0;
    double rmse_unnested = 0.0;
    /// 100 (unnested - nested) / unnested; NaN when both are zero.
    double improvement_pct = 0.0;
    /// Mean |treated - donor average| over standardized predictors.
    double bias_without_matching = 0.0;
    /// Mean |treated - synthetic| over standardized predictors.
    double bias_with_matching = 0.0;
    /// 100 (1 - with / without); NaN when the unmatched bias is zero.
    double bias_reduction_pct = 0.0;
    int donors = 0;
    int predictors = 0;
};

/// Throws std::invalid_argument when the fits differ in anything but the
/// nested-optimization flag.
PerformanceRow performance_table(const ScmFit& nested, const ScmFit& unnested);

struct PlaceboTimeRun {
    int false_year = 0;
    int fit_end = 0;
    ScmFit fit;
    ExtendedPaths paths;
};

/// Everything one run computed. Optional members are filled only for the
/// analyses that ran.
struct ReportBundle {
    std::string treated_name;
    std::map<std::string, std::string> unit_names;
    ScmFit fit;
    std::optional<ScmFit> unnested;
    std::optional<PlaceboDistribution> placebo_space;
    std::vector<PlaceboTimeRun> placebo_time;
    std::optional<LooOutcome> loo;
    std::optional<PenaltyChoice> penalty_choice;
    std::optional<PenalizedFit> penalized;
    std::optional<BiasCorrection> bias_correction;
    std::optional<LassoFit> lasso;
    std::vector<BreakTestResult> breaks;
    std::optional<TrendFit> trend;
    std::optional<DidResult> did;
    std::optional<DidSubsample> did_subsample;
    std::vector<std::string> warnings;
};

enum class Stage { Fit, PlaceboSpace, PlaceboTime, Loo, Penalized, Lasso, Breaks, Did, Report };

/// Analyses a stage runs: the stage's own analysis (forced on) for the
/// single-analysis stages, every enabled analysis for Report.
RunConfig stage_config(const RunConfig& config, Stage stage);

/// Runs the enabled analyses in dependency order (fit, placebos, variants,
/// breaks, DiD). Failures of individual break tests become warnings; any
/// other failure propagates.
ReportBundle analyze(const PanelDataset& dataset, const RunConfig& config);

/// CSV tables and report.md keyed by file name.
std::map<std::string, std::string> render_tables(const ReportBundle& bundle, const RunConfig& config);

/// Figure names: counterfactual, gap, placebo_spaghetti, placebo_ratios,
/// placebo_time_<year>, loo, bias_correction. ReportError names the missing
/// analysis when a requested figure cannot be drawn.
std::map<std::string, std::string> emit_figures(const ReportBundle& bundle, const std::vector<std::string>& names);

/// Figures available for a bundle.
std::vector<std::string> available_figures(const ReportBundle& bundle);

struct ReplicationCheck {
    std::string table;
    std::string quantity;
    double printed = 0.0;
    std::optional<double> computed;
    double tolerance = 0.0;
    /// "agree", "disagree" or "not computed".
    std::string status;
};

/// Compares a bundle against the printed reference values for one outcome
/// key (see replication_outcomes()). Donor weights are matched on unit name
/// or id, case-insensitively.
std::vector<ReplicationCheck> replication_checks(const ReportBundle& bundle, const std::string& outcome);

/// Shortest round-trip decimal; "inf"/"-inf"/"nan" for non-finite values.
std::string format_number(double v);

std::string sha256_hex(const std::string& bytes);

/// Writes `files` into a staging directory next to `out_dir`, then swaps it
/// into place. On failure the staging directory is removed and `out_dir` is
/// left as it was.
void write_atomically(const std::filesystem::path& out_dir, const std::map<std::string, std::string>& files);

struct ManifestInputs {
    std::string command;
    std::string config_text;
    std::string data_bytes;
    std::optional<std::uint64_t> seed;
    int threads = 1;
};

/// manifest.json listing every file with its SHA-256 plus config, data and
/// combined run hashes. Contains no timestamps, so it is reproducible.
std::string render_manifest(const ManifestInputs& in, const std::map<std::string, std::string>& files);

/// Loads data, runs the stage and writes every output plus manifest.json.
/// Returns the file names written (manifest last).
std::vector<std::string> run(const RunConfig& config, Stage stage, const std::filesystem::path& out_dir);

/// Writes the generated panel (panel.csv) and a manifest; needs [data] preset.
std::vector<std::string> run_simulate(const RunConfig& config, const std::filesystem::path& out_dir);

inline constexpr const char* kToolVersion = "1.0.0";

}  // namespace scm
