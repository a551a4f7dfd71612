#pragma once

#include "scm/panel.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace scm {

enum class EffectKind { None, Step, Ramp };

/// Treatment effect added to the treated unit from the treatment year on.
/// Step: constant `size`. Ramp: `size * (s + 1)` in the s-th post period.
struct EffectShape {
    EffectKind kind = EffectKind::None;
    double size = 0.0;
};

/// Linear factor model
///
///   Y_jt = phi_t + theta' Z_jt + lambda_t' mu_j + eps_jt (+ effect)
///
/// with phi a Gaussian random walk, lambda_t ~ N(0, I_F), mu_j ~ U[0, 1]^F,
/// Z_jt = zeta_j + noise with zeta_j ~ U[0, 1]^r, eps ~ N(0, noise_sd^2).
struct SyntheticDgp {
    int factors = 2;
    double noise_sd = 0.1;
    int pre_periods = 20;
    int start_year = 1987;
    int covariates = 2;
    /// Covariate coefficients; empty means 1 for every covariate.
    std::vector<double> theta;
    double covariate_noise_sd = 0.1;
    double common_shock_sd = 0.1;
    /// When set, every unit gets this loading on every factor.
    std::optional<double> fixed_loading;
    EffectShape effect;
    /// Donor `first` reproduces every draw of donor `second` (1-based donor indices).
    std::optional<std::pair<int, int>> twin;
};

inline constexpr const char* kDgpTreatedId = "U00";

int dgp_treatment_year(const SyntheticDgp& dgp);

/// Unit "U00" is treated, donors are "U01".."UJ". Variables: outcome "y",
/// covariates "z1".."zr". Deterministic in (dgp, seed).
PanelDataset generate_dgp_panel(const SyntheticDgp& dgp, std::uint64_t seed, int donors, int periods);

struct DgpScenario {
    std::string name;
    int donors = 0;
    int periods = 0;
    SyntheticDgp dgp;
    std::uint64_t seed_root = 0;
    /// Whether scenario_study() includes benchmark outcome years.
    bool benchmark_outcomes = true;
};

/// Presets: null_small, null_paperlike, step_effect, ramp_effect,
/// twin_donors, one_informative_predictor. std::invalid_argument otherwise.
DgpScenario dgp_preset(std::string_view name);
std::vector<std::string> dgp_preset_names();

/// Panel for replicate `draw` of a scenario.
PanelDataset generate_scenario(const DgpScenario& scenario, std::uint64_t draw);

/// Study of the treated unit: benchmark outcome years every fourth pre-period
/// counting back from the last one (unless disabled), plus every covariate
/// averaged over the pre-period.
StudySpec scenario_study(const DgpScenario& scenario);

}  // namespace scm
