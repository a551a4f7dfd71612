#include "scm/dgp.hpp"

#include "scm/rng.hpp"

#include <cstdio>
#include <stdexcept>

namespace scm {

namespace {

enum Stream : std::uint64_t { kShock = 1, kFactor, kLoading, kLevel, kCovNoise, kNoise };

std::string unit_id(int j, int width) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "U%0*d", width, j);
    return buf;
}

}  // namespace

int dgp_treatment_year(const SyntheticDgp& dgp) { return dgp.start_year + dgp.pre_periods; }

PanelDataset generate_dgp_panel(const SyntheticDgp& dgp, std::uint64_t seed, int donors, int periods) {
    if (donors < 2) throw std::invalid_argument("dgp: need at least 2 donors");
    if (dgp.pre_periods < 2 || periods <= dgp.pre_periods)
        throw std::invalid_argument("dgp: need >= 2 pre-periods and at least one post-period");
    if (dgp.factors < 1 || dgp.covariates < 0) throw std::invalid_argument("dgp: invalid factor or covariate count");
    if (!dgp.theta.empty() && static_cast<int>(dgp.theta.size()) != dgp.covariates)
        throw std::invalid_argument("dgp: theta length must match the covariate count");
    if (dgp.twin && (dgp.twin->first < 1 || dgp.twin->first > donors || dgp.twin->second < 1 ||
                     dgp.twin->second > donors || dgp.twin->first == dgp.twin->second))
        throw std::invalid_argument("dgp: invalid twin donor pair");

    const int n_units = donors + 1;
    const int r = dgp.covariates;
    const auto u64 = [](int x) { return static_cast<std::uint64_t>(x); };
    auto source = [&](int j) { return dgp.twin && j == dgp.twin->first ? dgp.twin->second : j; };

    std::vector<double> phi(static_cast<std::size_t>(periods));
    double level = 0.0;
    for (int t = 0; t < periods; ++t) {
        KeyedRng rng(seed, {kShock, u64(t)});
        level += dgp.common_shock_sd * rng.normal();
        phi[static_cast<std::size_t>(t)] = level;
    }

    const int width = donors >= 100 ? 3 : 2;
    std::vector<Unit> units;
    for (int j = 0; j < n_units; ++j) units.push_back({unit_id(j, width), unit_id(j, width)});
    std::vector<int> years;
    for (int t = 0; t < periods; ++t) years.push_back(dgp.start_year + t);
    std::vector<Variable> vars{{"y", VariableRole::Outcome}};
    for (int c = 0; c < r; ++c) vars.push_back({"z" + std::to_string(c + 1), VariableRole::Covariate});

    const auto n_t = static_cast<std::size_t>(periods);
    const auto n_u = static_cast<std::size_t>(n_units);
    std::vector<double> values(vars.size() * n_u * n_t, 0.0);
    auto at = [&](std::size_t v, int j, int t) -> double& {
        return values[(v * n_u + static_cast<std::size_t>(j)) * n_t + static_cast<std::size_t>(t)];
    };

    for (int j = 0; j < n_units; ++j) {
        const int s = source(j);
        std::vector<double> mu(static_cast<std::size_t>(dgp.factors));
        for (int f = 0; f < dgp.factors; ++f) {
            KeyedRng rng(seed, {kLoading, u64(s), u64(f)});
            mu[static_cast<std::size_t>(f)] = dgp.fixed_loading ? *dgp.fixed_loading : rng.uniform();
        }
        std::vector<double> zeta(static_cast<std::size_t>(r));
        for (int c = 0; c < r; ++c) zeta[static_cast<std::size_t>(c)] = KeyedRng(seed, {kLevel, u64(s), u64(c)}).uniform();

        for (int t = 0; t < periods; ++t) {
            double y = phi[static_cast<std::size_t>(t)];
            for (int c = 0; c < r; ++c) {
                KeyedRng rng(seed, {kCovNoise, u64(s), u64(t), u64(c)});
                const double z = zeta[static_cast<std::size_t>(c)] + dgp.covariate_noise_sd * rng.normal();
                at(static_cast<std::size_t>(c) + 1, j, t) = z;
                y += (dgp.theta.empty() ? 1.0 : dgp.theta[static_cast<std::size_t>(c)]) * z;
            }
            for (int f = 0; f < dgp.factors; ++f) {
                KeyedRng rng(seed, {kFactor, u64(t), u64(f)});
                y += rng.normal() * mu[static_cast<std::size_t>(f)];
            }
            KeyedRng noise(seed, {kNoise, u64(s), u64(t)});
            y += dgp.noise_sd * noise.normal();
            if (j == 0 && t >= dgp.pre_periods) {
                const int since = t - dgp.pre_periods;
                if (dgp.effect.kind == EffectKind::Step) y += dgp.effect.size;
                else if (dgp.effect.kind == EffectKind::Ramp) y += dgp.effect.size * (since + 1);
            }
            at(0, j, t) = y;
        }
    }
    return PanelDataset(std::move(units), std::move(years), std::move(vars), std::move(values));
}

DgpScenario dgp_preset(std::string_view name) {
    DgpScenario s;
    s.name = std::string(name);
    if (name == "null_small") {
        s.donors = 8, s.periods = 20, s.dgp.pre_periods = 12, s.seed_root = 1001;
    } else if (name == "null_paperlike") {
        s.donors = 15, s.periods = 37, s.dgp.pre_periods = 24, s.seed_root = 1002;
    } else if (name == "step_effect") {
        s.donors = 12, s.periods = 35, s.dgp.pre_periods = 25, s.seed_root = 1003;
        s.dgp.effect = {EffectKind::Step, -1.0};
    } else if (name == "ramp_effect") {
        s.donors = 12, s.periods = 35, s.dgp.pre_periods = 25, s.seed_root = 1004;
        s.dgp.effect = {EffectKind::Ramp, -0.1};
    } else if (name == "twin_donors") {
        s.donors = 10, s.periods = 30, s.dgp.pre_periods = 20, s.seed_root = 1005;
        s.dgp.twin = std::pair{2, 1};
    } else if (name == "one_informative_predictor") {
        s.donors = 10, s.periods = 30, s.dgp.pre_periods = 20, s.seed_root = 1006;
        s.dgp.factors = 1;
        s.dgp.fixed_loading = 0.5;
        s.dgp.noise_sd = 0.001;
        s.dgp.covariate_noise_sd = 0.0;
        s.dgp.covariates = 4;
        s.dgp.theta = {3.0, 0.0, 0.0, 0.0};
        s.benchmark_outcomes = false;
    } else {
        throw std::invalid_argument("unknown DGP preset '" + std::string(name) + "'");
    }
    return s;
}

std::vector<std::string> dgp_preset_names() {
    return {"null_small", "null_paperlike", "step_effect", "ramp_effect", "twin_donors", "one_informative_predictor"};
}

PanelDataset generate_scenario(const DgpScenario& scenario, std::uint64_t draw) {
    return generate_dgp_panel(scenario.dgp, splitmix64_mix(scenario.seed_root ^ splitmix64_mix(draw)), scenario.donors,
                              scenario.periods);
}

StudySpec scenario_study(const DgpScenario& scenario) {
    StudySpec spec;
    spec.treated_unit = kDgpTreatedId;
    spec.treatment_period = dgp_treatment_year(scenario.dgp);
    spec.outcome = "y";
    BenchmarkYears years;
    if (scenario.benchmark_outcomes)
        for (int t = scenario.dgp.pre_periods - 1; t >= 0; t -= 4)
            years.years.insert(years.years.begin(), scenario.dgp.start_year + t);
    spec.predictors = years;
    for (int c = 0; c < scenario.dgp.covariates; ++c) spec.covariates.push_back({"z" + std::to_string(c + 1), {}});
    spec.seed = scenario.seed_root;
    return spec;
}

}  // namespace scm
