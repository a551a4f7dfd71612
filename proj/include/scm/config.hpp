#pragma once

#include "scm/break_tests.hpp"
#include "scm/panel.hpp"
#include "scm/robustness.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace scm {

/// Where the panel comes from: a delimited file or a generator preset.
struct DataSource {
    std::optional<std::filesystem::path> path;
    PanelSchema schema;
    std::optional<std::string> preset;
    std::uint64_t draw = 0;
};

struct PlaceboSpaceConfig {
    bool enabled = false;
    double filter_multiple = 4.0;
};

struct PlaceboTimeConfig {
    bool enabled = false;
    std::vector<int> years;
    /// Last period of the backdated window; defaults to treatment year - 1.
    std::optional<int> fit_end;
};

struct LooConfig {
    bool enabled = false;
    LooMode mode = LooMode::LargestWeight;
};

struct PenalizedConfig {
    bool enabled = false;
    /// Fixed penalty; chosen by holdout over `grid` when absent.
    std::optional<double> lambda;
    std::vector<double> grid = default_penalty_grid();
};

struct LassoConfig {
    bool enabled = false;
    /// Empty means 30 log-spaced values from the smallest all-zero penalty down by 1e-4.
    std::vector<double> grid;
    double alpha = 1.0;
    std::optional<YearWindow> holdout;
};

struct BiasCorrectionConfig {
    bool enabled = false;
    double alpha = 0.5;
};

enum class BreakTestKind { Wald, Chow, GhLevel, GhTrend, GhRegime, Trend };

struct BreaksConfig {
    bool enabled = false;
    std::vector<BreakTestKind> tests{BreakTestKind::Wald, BreakTestKind::Chow, BreakTestKind::GhRegime,
                                     BreakTestKind::GhTrend, BreakTestKind::Trend};
    /// Known break for Wald, Chow and the trend test; defaults to the treatment year.
    std::optional<int> break_year;
    Covariance covariance = Covariance::Classical;
    double trim = 0.15;
    std::optional<int> lag;
    bool supremum = true;
};

struct DidConfig {
    bool enabled = false;
    int lags = 2;
    int subsample_draws = 0;
    int subsample_size = 0;
};

struct ReplicationConfig {
    bool enabled = false;
    /// One of replication_outcomes().
    std::string outcome;
};

struct RunConfig {
    DataSource data;
    StudySpec study;
    std::optional<std::uint64_t> seed;
    int threads = 1;
    std::optional<std::filesystem::path> out;
    bool figures = true;

    PlaceboSpaceConfig placebo_space;
    PlaceboTimeConfig placebo_time;
    LooConfig loo;
    PenalizedConfig penalized;
    LassoConfig lasso;
    BiasCorrectionConfig bias_correction;
    BreaksConfig breaks;
    DidConfig did;
    ReplicationConfig replication;

    /// Raw configuration text, hashed into the manifest.
    std::string source_text;
};

/// Parses the INI grammar documented in the README. Relative data paths are
/// resolved against `base_dir`. Unknown sections or keys, malformed values
/// and missing required keys raise ConfigError.
RunConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

/// True when the run draws random numbers: nested V search, DiD subsampling
/// or generated data.
bool needs_seed(const RunConfig& config);

/// Applies command-line overrides, copies the seed into the study spec and
/// checks cross-field rules (seed present when needed, threads >= 1).
void finalize_config(RunConfig& config, std::optional<std::uint64_t> seed_override,
                     std::optional<int> threads_override);

const char* to_string(BreakTestKind k);

/// Outcome keys with printed reference values for replication mode.
const std::vector<std::string>& replication_outcomes();

}  // namespace scm
