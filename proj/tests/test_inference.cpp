#include "doctest.h"

#include "scm/dgp.hpp"
#include "scm/errors.hpp"
#include "scm/inference.hpp"
#include "scm/stats.hpp"

#include <cmath>
#include <limits>

using namespace scm;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// A fit carrying only a gap path: periods 1..pre+post, treatment at pre+1.
ScmFit gap_fit(const std::vector<double>& pre, const std::vector<double>& post) {
    ScmFit f;
    const int n = static_cast<int>(pre.size() + post.size());
    f.gap.resize(n);
    for (int i = 0; i < n; ++i) {
        f.periods.push_back(i + 1);
        f.gap[i] = i < static_cast<int>(pre.size()) ? pre[static_cast<std::size_t>(i)]
                                                   : post[static_cast<std::size_t>(i) - pre.size()];
    }
    f.treatment_period = static_cast<int>(pre.size()) + 1;
    f.pre_rmse = rmse(f.gap_series(), Window::pre());
    f.post_rmse = rmse(f.gap_series(), Window::post());
    return f;
}

PlaceboDistribution distribution(const ScmFit& treated, const std::vector<ScmFit>& donors) {
    PlaceboDistribution d;
    d.treated = make_record("T", treated);
    for (std::size_t i = 0; i < donors.size(); ++i) d.donors.push_back(make_record("D" + std::to_string(10 + i), donors[i]));
    return prefit_filter(d, kInf);
}

StudySpec quick(const DgpScenario& sc) {
    auto s = scenario_study(sc);
    s.v_candidates = 20;
    return s;
}

}  // namespace

TEST_CASE("RMSPE ratio arithmetic") {
    CHECK(rmspe_ratio(gap_fit({1, 1}, {2, 2})) == doctest::Approx(2.0));
    CHECK(rmspe_ratio(gap_fit({1, -1}, {0, 0})) == 0.0);
    const auto r = make_record("x", gap_fit({0, 0}, {1, 1}));
    CHECK(r.infinite_ratio);
    CHECK(std::isinf(r.ratio));
    const auto f = gap_fit({0.3, -0.2, 0.5}, {1.0, 2.0});
    const auto rec = make_record("y", f);
    CHECK(std::abs(rec.ratio - f.post_rmse / f.pre_rmse) < 1e-10);
}

TEST_CASE("overall p-value counts the treated unit") {
    std::vector<ScmFit> donors;
    for (int i = 0; i < 15; ++i) donors.push_back(gap_fit({1, 1}, {1.0 + 0.1 * i, 1.0}));
    const auto strict = distribution(gap_fit({1, 1}, {10, 10}), donors);
    CHECK(strict.overall_pvalue == doctest::Approx(1.0 / 16.0));
    CHECK(treated_ratio_rank(strict) == 1);
    const auto weak = distribution(gap_fit({1, 1}, {0.5, 0.5}), donors);
    CHECK(weak.overall_pvalue == 1.0);
    CHECK(treated_ratio_rank(weak) == 16);
    for (const auto* d : {&strict, &weak}) {
        const double count = d->overall_pvalue * static_cast<double>(d->retained_count());
        CHECK(std::abs(count - std::round(count)) < 1e-12);
        CHECK(d->overall_pvalue >= 1.0 / static_cast<double>(d->retained_count()));
    }
}

TEST_CASE("per-period p-values") {
    std::vector<ScmFit> donors;
    for (int i = 0; i < 15; ++i) donors.push_back(gap_fit({1, 1}, {0.5, -0.5 - 0.01 * i}));
    const auto big = distribution(gap_fit({1, 1}, {3, -3}), donors);
    CHECK(big.per_period_pvalues.at(3) == doctest::Approx(1.0 / 16.0));
    CHECK(big.per_period_pvalues.at(4) == doctest::Approx(1.0 / 16.0));
    const auto zero = distribution(gap_fit({1, 1}, {0, 0}), donors);
    CHECK(zero.per_period_pvalues.at(3) == 1.0);
    CHECK(zero.per_period_pvalues.size() == 2);
}

TEST_CASE("pre-fit filter") {
    const auto d = distribution(gap_fit({2, 2}, {4, 4}),
                                {gap_fit({1, 1}, {1, 1}), gap_fit({3, 3}, {1, 1}), gap_fit({9, 9}, {1, 1})});
    const auto f = prefit_filter(d, 4.0);
    CHECK_FALSE(f.donors[0].excluded);
    CHECK_FALSE(f.donors[1].excluded);
    CHECK(f.donors[2].excluded);
    CHECK(f.donors.size() == 3);
    CHECK(f.retained_count() == 3);

    const auto none = prefit_filter(d, kInf);
    CHECK(none.overall_pvalue == d.overall_pvalue);
    CHECK(none.retained_count() == 4);

    std::size_t last = none.retained_count();
    for (double m : {100.0, 4.0, 1.4, 0.9}) {
        const auto r = prefit_filter(d, m).retained_count();
        CHECK(r <= last);
        last = r;
    }
    CHECK_THROWS_AS(prefit_filter(d, 0.1), InferenceError);
    CHECK_THROWS_AS(prefit_filter(d, 0.0), std::invalid_argument);
}

TEST_CASE("in-space placebo: structure, determinism and threads") {
    const auto sc = dgp_preset("null_small");
    const auto d = generate_scenario(sc, 21);
    const auto spec = quick(sc);
    PlaceboOptions serial;
    const auto a = in_space_placebo(d, spec, serial);
    PlaceboOptions threaded;
    threaded.threads = 3;
    const auto b = in_space_placebo(d, spec, threaded);
    REQUIRE(a.donors.size() == 8);
    CHECK(a.treated.unit_id == "U00");
    for (std::size_t i = 0; i < a.donors.size(); ++i) {
        CHECK(a.donors[i].unit_id == b.donors[i].unit_id);
        CHECK(a.donors[i].ratio == b.donors[i].ratio);
        if (i) CHECK(a.donors[i - 1].unit_id < a.donors[i].unit_id);
        const auto& f = *a.donors[i].fit;
        // The true treated unit joins each placebo donor pool.
        CHECK(std::find(f.donor_ids.begin(), f.donor_ids.end(), "U00") != f.donor_ids.end());
    }
    CHECK(a.overall_pvalue == b.overall_pvalue);
    CHECK(a.per_period_pvalues == b.per_period_pvalues);
}

TEST_CASE("in-space placebo honours donor exclusions") {
    const auto sc = dgp_preset("null_small");
    const auto d = generate_scenario(sc, 2);
    auto spec = quick(sc);
    // Each placebo pool loses its pseudo-treated unit and gains U00.
    spec.donor_exclusions = {"U03", "U04", "U05", "U06", "U07", "U08"};
    const auto dist = in_space_placebo(d, spec);
    CHECK(dist.donors.size() == 2);
    for (const auto& r : dist.donors) CHECK_FALSE(r.failed);
}

TEST_CASE("in-time placebo") {
    const auto sc = dgp_preset("null_paperlike");
    const auto d = generate_scenario(sc, 5);
    const auto spec = quick(sc);
    CHECK_THROWS_AS(in_time_placebo(d, spec, 2011, 2015), SpecError);
    CHECK_THROWS_AS(in_time_placebo(d, spec, 1988, 1995), SpecError);
    CHECK_THROWS_AS(in_time_placebo(d, spec, 2002, 2012), SpecError);

    const auto back = in_time_placebo(d, spec, 2002, 2010);
    CHECK(back.treatment_period == 2002);
    CHECK(back.periods.back() == 2010);
    const auto& years = std::get<BenchmarkYears>(back.spec.predictors).years;
    for (int y : years) CHECK(y < 2002);

    // Data at or after the true treatment year must not matter.
    std::vector<double> v = d.raw_values();
    for (std::size_t u = 0; u < d.unit_count(); ++u)
        for (std::size_t t = 0; t < d.period_count(); ++t)
            if (d.periods()[t] >= 2011) v[u * d.period_count() + t] += 100.0 * static_cast<double>(u);
    const PanelDataset altered(d.units(), d.periods(), d.variables(), v);
    CHECK(in_time_placebo(altered, spec, 2002, 2010).weights.w == back.weights.w);

    const auto fwd = in_time_placebo(d, spec, 2017, 2023);
    CHECK(fwd.treatment_period == 2017);
    CHECK(fwd.design.pre_periods.back() == 2010);
    const auto ext = extend_paths(back, d);
    CHECK(ext.periods.size() == d.period_count());
    CHECK((ext.counterfactual.head(back.counterfactual.size()) - back.counterfactual).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("backdated placebo on null data shows no effect on average") {
    const auto sc = dgp_preset("null_paperlike");
    std::vector<double> means;
    for (std::uint64_t s = 0; s < 40; ++s) {
        const auto f = in_time_placebo(generate_scenario(sc, s), quick(sc), 2002, 2010);
        double m = 0.0;
        int n = 0;
        for (std::size_t i = 0; i < f.periods.size(); ++i)
            if (f.periods[i] >= 2002) m += f.gap[static_cast<Eigen::Index>(i)], ++n;
        means.push_back(m / n);
    }
    const double se = stats::sample_sd(means) / std::sqrt(static_cast<double>(means.size()));
    CHECK(std::abs(stats::mean(means)) <= 2.0 * se + 1e-12);
}

TEST_CASE("growing effect gives non-increasing per-period p-values on average") {
    const auto sc = dgp_preset("ramp_effect");
    std::map<int, double> avg;
    const int draws = 100;
    for (std::uint64_t s = 0; s < draws; ++s) {
        PlaceboOptions o;
        o.filter_multiple = kInf;
        const auto dist = in_space_placebo(generate_scenario(sc, s), quick(sc), o);
        for (const auto& [p, v] : dist.per_period_pvalues) avg[p] += v / draws;
    }
    double prev = 1.0 + 1e-12;
    int violations = 0;
    for (const auto& [p, v] : avg) {
        if (v > prev + 0.02) ++violations;
        prev = v;
    }
    MESSAGE("first/last average p: " << avg.begin()->second << " / " << avg.rbegin()->second);
    CHECK(violations == 0);
    CHECK(avg.rbegin()->second < avg.begin()->second);
}

TEST_CASE("pre-fit filtering keeps the p-value spread stable") {
    const auto sc = dgp_preset("null_small");
    std::vector<double> raw, filtered;
    for (std::uint64_t s = 0; s < 60; ++s) {
        PlaceboOptions o;
        o.filter_multiple = kInf;
        const auto dist = in_space_placebo(generate_scenario(sc, s), quick(sc), o);
        raw.push_back(dist.overall_pvalue);
        try {
            filtered.push_back(prefit_filter(dist, 4.0).overall_pvalue);
        } catch (const InferenceError&) {
        }
    }
    const double vr = stats::sample_sd(raw), vf = stats::sample_sd(filtered);
    CHECK(vf * vf <= 2.0 * vr * vr);
}
