#include "doctest.h"
#include "oracles.hpp"

#include "scm/dgp.hpp"
#include "scm/elastic_net.hpp"
#include "scm/errors.hpp"
#include "scm/robustness.hpp"
#include "scm/stats.hpp"

#include <algorithm>
#include <cmath>

using namespace scm;

namespace {

/// Copies `dataset` with every variable of the treated unit replaced by a
/// combination of other units.
PanelDataset with_mixture(const PanelDataset& d, const std::string& treated,
                          const std::vector<std::pair<std::string, double>>& mix) {
    std::vector<double> values = d.raw_values();
    const auto t = *d.find_unit(treated);
    const auto np = d.period_count(), nu = d.unit_count();
    for (std::size_t v = 0; v < d.variables().size(); ++v)
        for (std::size_t p = 0; p < np; ++p) {
            double x = 0.0;
            for (const auto& [id, c] : mix) x += c * d.raw_values()[(v * nu + *d.find_unit(id)) * np + p];
            values[(v * nu + t) * np + p] = x;
        }
    return PanelDataset(d.units(), d.periods(), d.variables(), values);
}

bool contains(const std::vector<std::string>& ids, const std::string& id) {
    return std::find(ids.begin(), ids.end(), id) != ids.end();
}

}  // namespace

TEST_CASE("leave-one-out mechanics") {
    const auto sc = dgp_preset("null_small");
    const auto d = with_mixture(generate_scenario(sc, 3), "U00", {{"U05", 1.0}});
    const auto spec = scenario_study(sc);
    const auto loo = leave_one_out(d, spec, LooMode::LargestWeight);
    const auto& base_w = loo.baseline.weights.w;
    Eigen::Index top = 0;
    base_w.maxCoeff(&top);
    CHECK(loo.baseline.donor_ids[static_cast<std::size_t>(top)] == "U05");
    CHECK(base_w[top] > 0.999);
    REQUIRE(loo.results.size() == 1);
    const auto& r = loo.results[0];
    CHECK(r.excluded_unit == "U05");
    CHECK_FALSE(contains(r.refit.donor_ids, "U05"));
    CHECK(r.refit.donor_ids.size() == 7);
    CHECK(std::abs(r.refit.weights.w.sum() - 1.0) < 1e-9);
    CHECK(r.loo_gap_end == r.refit.gap[r.refit.gap.size() - 1]);

    const auto each = leave_one_out(d, scenario_study(sc), LooMode::EachNonzero);
    int nonzero = 0;
    for (Eigen::Index j = 0; j < each.baseline.weights.w.size(); ++j) nonzero += each.baseline.weights.w[j] > kNonzeroWeight;
    CHECK(static_cast<int>(each.results.size()) == nonzero);
}

TEST_CASE("leave-one-out every nonzero donor on random data") {
    const auto sc = dgp_preset("null_small");
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto out = leave_one_out(generate_scenario(sc, s), scenario_study(sc), LooMode::EachNonzero);
        std::vector<std::string> expected;
        for (Eigen::Index j = 0; j < out.baseline.weights.w.size(); ++j)
            if (out.baseline.weights.w[j] > kNonzeroWeight) expected.push_back(out.baseline.donor_ids[static_cast<std::size_t>(j)]);
        REQUIRE(out.results.size() == expected.size());
        for (std::size_t i = 0; i < expected.size(); ++i) {
            CHECK(out.results[i].excluded_unit == expected[i]);
            CHECK_FALSE(contains(out.results[i].refit.donor_ids, expected[i]));
        }
    }
}

TEST_CASE("leave-one-out skips exclusions that empty the pool") {
    const auto sc = dgp_preset("null_small");
    auto spec = scenario_study(sc);
    spec.donor_exclusions = {"U03", "U04", "U05", "U06", "U07", "U08"};
    const auto out = leave_one_out(generate_scenario(sc, 1), spec, LooMode::EachNonzero);
    CHECK(out.results.empty());
    CHECK_FALSE(out.warnings.empty());
}

TEST_CASE("excluding one of two twin donors leaves the gap unchanged") {
    const auto sc = dgp_preset("twin_donors");
    int checked = 0;
    for (std::uint64_t s = 0; s < 5; ++s) {
        // U02 is an exact copy of U01; the treated unit loads on the pair.
        const auto d = with_mixture(generate_scenario(sc, s), "U00", {{"U01", 0.7}, {"U04", 0.3}});
        const auto loo = leave_one_out(d, scenario_study(sc), LooMode::EachNonzero);
        for (const auto& r : loo.results) {
            if (r.excluded_unit != "U01" && r.excluded_unit != "U02") continue;
            ++checked;
            CHECK((r.refit.gap - loo.baseline.gap).cwiseAbs().maxCoeff() < 1e-3);
        }
    }
    CHECK(checked >= 5);
}

TEST_CASE("penalized fit reduces to the plain fit at lambda 0") {
    const auto sc = dgp_preset("null_small");
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto d = generate_scenario(sc, s);
        const auto plain = fit(d, scenario_study(sc));
        const auto p = penalized_fit(plain, 0.0);
        const double plain_obj = oracle::objective(weight_problem(plain.standardized.design, plain.vweights).a,
                                                   weight_problem(plain.standardized.design, plain.vweights).b,
                                                   plain.weights.w);
        CHECK(std::abs(p.objective - plain_obj) <= 1e-8);
        CHECK((p.base.weights.w - plain.weights.w).cwiseAbs().maxCoeff() < 1e-6);
        CHECK(p.pairwise_penalty_value >= 0.0);
    }
}

TEST_CASE("penalized fit: large lambda picks the nearest donor, objective grows with lambda") {
    const auto sc = dgp_preset("null_small");
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto plain = fit(generate_scenario(sc, s), scenario_study(sc));
        const auto disc = pairwise_discrepancies(plain);
        // Independent recomputation of the V-metric discrepancies.
        const auto& sd = plain.standardized.design;
        for (Eigen::Index j = 0; j < disc.size(); ++j) {
            double acc = 0.0;
            for (Eigen::Index k = 0; k < sd.x1.size(); ++k)
                acc += plain.vweights.v[k] * std::pow(sd.x1[k] - sd.x0(k, j), 2);
            CHECK(std::abs(acc - disc[j]) < 1e-12 * (1.0 + acc));
        }
        Eigen::Index nearest = 0;
        disc.minCoeff(&nearest);
        const auto big = penalized_fit(plain, 1e6);
        CHECK(big.base.weights.w[nearest] > 1.0 - 1e-6);

        double prev = -1.0;
        for (double l : {0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1e6}) {
            const auto p = penalized_fit(plain, l);
            CHECK(p.objective >= prev - 1e-10);
            prev = p.objective;
        }
    }
    const auto plain = fit(generate_scenario(sc, 0), scenario_study(sc));
    CHECK_THROWS_AS(penalized_fit(plain, -1.0), std::invalid_argument);
}

TEST_CASE("penalty selection by holdout") {
    const auto sc = dgp_preset("null_paperlike");
    const auto d = generate_scenario(sc, 4);
    const auto c = choose_penalty(d, scenario_study(sc));
    CHECK(c.grid.size() == 7);
    REQUIRE(c.holdout_mse.size() == c.grid.size());
    const auto best = std::min_element(c.holdout_mse.begin(), c.holdout_mse.end()) - c.holdout_mse.begin();
    CHECK(c.lambda == c.grid[static_cast<std::size_t>(best)]);
    CHECK_THROWS_AS(choose_penalty(d, scenario_study(sc), {}), std::invalid_argument);
}

TEST_CASE("LASSO at lambda 0 is OLS") {
    const auto sc = dgp_preset("null_paperlike");
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto d = generate_scenario(sc, s);
        const auto spec = scenario_study(sc);
        LassoOptions o;
        o.lambda_grid = {0.0};
        const auto l = lasso_fit(d, spec, o);
        const auto design = build_design(d, spec);
        Eigen::MatrixXd x(design.q0.rows(), design.q0.cols() + 1);
        x << Eigen::VectorXd::Ones(design.q0.rows()), design.q0;
        const Eigen::VectorXd beta = oracle::normal_equations(x, design.q1);
        CHECK(std::abs(l.intercept - beta[0]) < 1e-6);
        CHECK((l.weights - beta.tail(design.q0.cols())).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("LASSO path properties") {
    const auto sc = dgp_preset("null_paperlike");
    const auto d = generate_scenario(sc, 8);
    const auto spec = scenario_study(sc);
    const auto design = build_design(d, spec);
    LassoOptions o;
    for (int e = -4; e <= 1; ++e) o.lambda_grid.push_back(std::pow(10.0, e));
    o.lambda_grid.push_back(1e6);
    const auto l = lasso_fit(d, spec, o);
    CHECK(std::is_sorted(l.lambda_path.begin(), l.lambda_path.end()));
    CHECK(l.nonzero_counts.back() == 0);
    CHECK(l.nonzero_counts.front() >= l.nonzero_counts.back());
    const auto best = std::min_element(l.holdout_mse.begin(), l.holdout_mse.end()) - l.holdout_mse.begin();
    CHECK(l.chosen_lambda == l.lambda_path[static_cast<std::size_t>(best)]);
    CHECK(l.holdout.last == design.pre_periods.back());
    CHECK(l.holdout.first == design.pre_periods[design.pre_periods.size() - 8]);

    LassoOptions huge;
    huge.lambda_grid = {1e6};
    const auto z = lasso_fit(d, spec, huge);
    CHECK(z.weights.cwiseAbs().maxCoeff() == 0.0);
    CHECK(std::abs(z.intercept - design.q1.mean()) < 1e-12);
    CHECK((z.counterfactual.array() - z.intercept).abs().maxCoeff() < 1e-12);

    CHECK_THROWS_AS(lasso_fit(d, spec, LassoOptions{}), std::invalid_argument);
    LassoOptions short_hold = o;
    short_hold.holdout = YearWindow{2010, 2010};
    CHECK_THROWS_AS(lasso_fit(d, spec, short_hold), SpecError);
}

TEST_CASE("LASSO grid solutions satisfy the optimality conditions") {
    const auto sc = dgp_preset("null_paperlike");
    const auto d = generate_scenario(sc, 1);
    const auto design = build_design(d, scenario_study(sc));
    const Eigen::MatrixXd xc = design.q0.rowwise() - design.q0.colwise().mean();
    const Eigen::VectorXd yc = design.q1.array() - design.q1.mean();
    const double n = static_cast<double>(xc.rows());
    std::vector<int> counts;
    for (double lam : {0.2512, 0.1995}) {
        const auto f = elastic_net(design.q0, design.q1, lam, 1.0);
        const Eigen::VectorXd g = xc.transpose() * (yc - xc * f.beta) / n;
        for (Eigen::Index j = 0; j < g.size(); ++j) {
            if (f.beta[j] == 0.0) CHECK(std::abs(g[j]) <= lam + 1e-10);
            else CHECK(std::abs(g[j] - lam * (f.beta[j] > 0.0 ? 1.0 : -1.0)) < 1e-10);
        }
        counts.push_back(static_cast<int>((f.beta.array() != 0.0).count()));
    }
    // An active donor leaves as lambda shrinks: nonzero counts are not monotone in lambda.
    CHECK(counts[0] == 2);
    CHECK(counts[1] == 1);
}

TEST_CASE("LASSO weights may be negative") {
    const auto sc = dgp_preset("null_paperlike");
    const auto base = generate_scenario(sc, 2);
    const auto d = with_mixture(base, "U00", {{"U01", 1.5}, {"U02", -0.5}});
    LassoOptions o;
    o.lambda_grid = {0.0};
    const auto l = lasso_fit(d, scenario_study(sc), o);
    CHECK(l.weights.minCoeff() < 0.0);
    CHECK(l.pre_rmse < 1e-6);
}

TEST_CASE("ATT arithmetic") {
    GapSeries g{{1, 2, 3, 4, 5}, Eigen::VectorXd(5), 3};
    g.gap << 0.2, -0.1, -1, -1, -1;
    const auto a = att(g);
    CHECK(a.att == doctest::Approx(-1.0));
    CHECK(a.method == SeMethod::Jackknife);
    CHECK(*a.se == doctest::Approx(0.0));

    g.gap << 0, 0, 1, 2, 6;
    const auto b = att(g);
    CHECK(b.att == doctest::Approx(3.0));
    // Jackknife over post periods: leave-one-out means 4, 3.5, 1.5.
    const double jk = std::sqrt(2.0 / 3.0 * (1.0 + 0.25 + 2.25));
    CHECK(*b.se == doctest::Approx(jk).epsilon(1e-12));
    CHECK(b.ci95->first == doctest::Approx(3.0 - 1.96 * jk));
    CHECK(std::string(to_string(b.method)) == "jackknife");

    GapSeries one{{1, 2, 3}, Eigen::Vector3d(0.0, 0.0, -2.0), 3};
    const auto c = att(one);
    CHECK(c.att == -2.0);
    CHECK_FALSE(c.se.has_value());
    CHECK(c.method == SeMethod::Unavailable);
    GapSeries none{{1, 2}, Eigen::Vector2d(0.0, 0.0), 3};
    CHECK_THROWS_AS(att(none), std::invalid_argument);
}

TEST_CASE("ATT with placebo spread") {
    const auto sc = dgp_preset("null_small");
    auto spec = scenario_study(sc);
    spec.v_candidates = 20;
    const auto d = generate_scenario(sc, 6);
    PlaceboOptions o;
    o.filter_multiple = std::numeric_limits<double>::infinity();
    const auto dist = in_space_placebo(d, spec, o);
    const auto a = att(dist.treated.fit->gap_series(), &dist);
    std::vector<double> effects;
    for (const auto& r : dist.donors) effects.push_back(att(r.fit->gap_series()).att);
    CHECK(a.method == SeMethod::PlaceboSpread);
    CHECK(*a.se == doctest::Approx(stats::sample_sd(effects)));
}

TEST_CASE("step effect is recovered by the ATT") {
    const auto sc = dgp_preset("step_effect");
    int inside = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        const auto f = fit(generate_scenario(sc, s), scenario_study(sc));
        const double a = att(f.gap_series()).att;
        inside += a >= -1.3 && a <= -0.7;
    }
    MESSAGE("draws with ATT in [-1.3, -0.7]: " << inside);
    CHECK(inside >= 90);
}

TEST_CASE("bias correction") {
    const auto sc = dgp_preset("null_small");
    // Treated predictors inside the donor hull: the correction vanishes.
    const auto exact = fit(with_mixture(generate_scenario(sc, 1), "U00", {{"U02", 0.5}, {"U03", 0.5}}),
                           scenario_study(sc));
    REQUIRE((exact.standardized.design.x1 - exact.standardized.design.x0 * exact.weights.w).cwiseAbs().maxCoeff() < 1e-8);
    const auto bc = bias_correct(exact);
    CHECK((bc.gap - exact.gap).cwiseAbs().maxCoeff() < 1e-6);

    // When the treated unit sits outside the donor hull the correction
    // should move the average effect estimate towards the truth.
    const auto st = dgp_preset("step_effect");
    double err_classic = 0.0, err_corrected = 0.0;
    for (std::uint64_t s = 0; s < 30; ++s) {
        const auto f = fit(generate_scenario(st, s), scenario_study(st));
        const auto b = bias_correct(f);
        CHECK(b.lambdas.size() == f.periods.size());
        err_classic += std::abs(att(f.gap_series()).att + 1.0);
        err_corrected += std::abs(att(GapSeries{f.periods, b.gap, f.treatment_period}).att + 1.0);
    }
    MESSAGE("mean |ATT + 1| classic " << err_classic / 30 << ", corrected " << err_corrected / 30);
    CHECK(err_corrected < err_classic);
}
