#include "doctest.h"
#include "oracles.hpp"

#include "scm/break_tests.hpp"
#include "scm/errors.hpp"
#include "scm/rng.hpp"

#include <cmath>

using namespace scm;

namespace {

std::vector<int> years(int first, int n) {
    std::vector<int> p(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = first + i;
    return p;
}

double rss(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    return (y - x * oracle::normal_equations(x, y)).squaredNorm();
}

/// Chow F from three separate OLS fits, with the closed-form F(2, m) tail.
std::pair<double, double> chow_oracle(const std::vector<int>& p, const Eigen::VectorXd& y, int brk) {
    std::vector<int> a, b;
    for (std::size_t i = 0; i < p.size(); ++i) (p[i] < brk ? a : b).push_back(static_cast<int>(i));
    auto design = [&](const std::vector<int>& rows) {
        Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), 2);
        Eigen::VectorXd v(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            x(static_cast<Eigen::Index>(i), 0) = 1.0;
            x(static_cast<Eigen::Index>(i), 1) = p[static_cast<std::size_t>(rows[i])];
            v[static_cast<Eigen::Index>(i)] = y[rows[i]];
        }
        return std::pair{x, v};
    };
    std::vector<int> all(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) all[i] = static_cast<int>(i);
    const auto [xp, yp] = design(all);
    const auto [x1, y1] = design(a);
    const auto [x2, y2] = design(b);
    const double r1 = rss(x1, y1) + rss(x2, y2);
    const double m = static_cast<double>(p.size()) - 4.0;
    const double f = ((rss(xp, yp) - r1) / 2.0) / (r1 / m);
    return {f, std::pow(1.0 + 2.0 * f / m, -m / 2.0)};
}

Eigen::VectorXd noise(KeyedRng& rng, int n, double sd) {
    Eigen::VectorXd e(n);
    for (int i = 0; i < n; ++i) e[i] = rng.normal(0.0, sd);
    return e;
}

}  // namespace

TEST_CASE("Chow and Wald agree with an independent F computation") {
    const auto p = years(1987, 35);
    for (std::uint64_t s = 0; s < 20; ++s) {
        KeyedRng rng(s, {1});
        Eigen::VectorXd y = noise(rng, 35, 0.3);
        for (int i = 0; i < 35; ++i) y[i] += 0.05 * i + (i >= 24 ? 0.2 * (s % 3) : 0.0);
        const auto [f, pv] = chow_oracle(p, y, 2011);
        const auto chow = chow_test(p, y, 2011);
        const auto wald = wald_known_break(p, y, 2011);
        CHECK(chow.statistic == doctest::Approx(f).epsilon(1e-9));
        CHECK(chow.p_value == doctest::Approx(pv).epsilon(1e-9));
        CHECK(wald.statistic == doctest::Approx(f).epsilon(1e-9));
        CHECK(chow.df1 == 2);
        CHECK(chow.df2 == 31);
        CHECK(chow.break_period == 2011);
        CHECK(wald.test == BreakTest::WaldKnown);
        const auto hc = wald_known_break(p, y, 2011, Covariance::HC1);
        CHECK(hc.statistic >= 0.0);
        CHECK(hc.p_value <= 1.0);
    }
}

TEST_CASE("known-break tests: degenerate and extreme cases") {
    const auto p = years(1, 30);
    Eigen::VectorXd line(30);
    for (int i = 0; i < 30; ++i) line[i] = 2.0 - 0.3 * i;
    const auto flat = chow_test(p, line, 15);
    CHECK(flat.degenerate);
    CHECK(flat.statistic == 0.0);
    CHECK(flat.p_value == 1.0);
    CHECK(wald_known_break(p, line, 15).p_value == doctest::Approx(1.0));

    KeyedRng rng(5, {2});
    Eigen::VectorXd jump = line + noise(rng, 30, 0.1);
    for (int i = 14; i < 30; ++i) jump[i] += 1.0;
    CHECK(chow_test(p, jump, 15).p_value < 0.001);
    CHECK(wald_known_break(p, jump, 15).p_value < 0.001);

    Eigen::VectorXd steps = Eigen::VectorXd::Zero(30);
    for (int i = 14; i < 30; ++i) steps[i] = 1.0;
    const auto inf = chow_test(p, steps, 15);
    CHECK(inf.degenerate);
    CHECK(std::isinf(inf.statistic));
    CHECK(inf.p_value == 0.0);

    CHECK_THROWS_AS(chow_test(p, line, 3), BreakTestError);
    CHECK_THROWS_AS(wald_known_break(p, line, 29), BreakTestError);
    CHECK_THROWS_AS(chow_test(p, Eigen::VectorXd::Zero(5), 3), std::invalid_argument);
}

TEST_CASE("F statistics are invariant to level and scale") {
    const auto p = years(2000, 25);
    KeyedRng rng(11, {3});
    const Eigen::VectorXd y = noise(rng, 25, 1.0);
    const double base = chow_test(p, y, 2012).statistic;
    const Eigen::VectorXd moved = (3.0 * y).array() + 17.0;
    CHECK(chow_test(p, moved, 2012).statistic == doctest::Approx(base).epsilon(1e-9));
    CHECK(wald_known_break(p, moved, 2012, Covariance::HC1).statistic ==
          doctest::Approx(wald_known_break(p, y, 2012, Covariance::HC1).statistic).epsilon(1e-9));
}

TEST_CASE("Chow size and power") {
    const auto p = years(1, 35);
    int size_rej = 0, power_rej = 0;
    for (std::uint64_t s = 0; s < 500; ++s) {
        KeyedRng rng(s, {4});
        const Eigen::VectorXd e = noise(rng, 35, 0.2);
        Eigen::VectorXd y = e;
        for (int i = 0; i < 35; ++i) y[i] += 0.1 * i;
        size_rej += chow_test(p, y, 18).p_value < 0.05;
        for (int i = 17; i < 35; ++i) y[i] += 0.5 * (i - 17);
        power_rej += chow_test(p, y, 18).p_value < 0.05;
    }
    MESSAGE("size " << size_rej / 500.0 << " power " << power_rej / 500.0);
    CHECK(size_rej >= 10);
    CHECK(size_rej <= 40);
    CHECK(power_rej > 400);
}

TEST_CASE("Gregory-Hansen p-value table") {
    for (auto m : {GhModel::Level, GhModel::TrendShift, GhModel::RegimeShift}) {
        const auto cv = gh_critical_values(m);
        REQUIRE(cv.size() == 5);
        for (const auto& [level, value] : cv) CHECK(gh_pvalue(m, value) == doctest::Approx(level));
        std::string bound;
        CHECK(gh_pvalue(m, cv.front().second - 1.0, &bound) == doctest::Approx(0.01));
        CHECK(bound == "< 0.01");
        CHECK(gh_pvalue(m, 0.0, &bound) == doctest::Approx(0.975));
        CHECK(bound == "> 0.975");
        const double mid = 0.5 * (cv[1].second + cv[2].second);
        CHECK(gh_pvalue(m, mid, &bound) == doctest::Approx(0.5 * (cv[1].first + cv[2].first)));
        CHECK(bound.empty());
    }
    CHECK(gh_critical_values(GhModel::RegimeShift)[2].second == doctest::Approx(-4.95));
}

TEST_CASE("Phillips Z_t") {
    KeyedRng rng(3, {5});
    const Eigen::VectorXd white = noise(rng, 200, 1.0);
    Eigen::VectorXd walk(200);
    double acc = 0.0;
    for (int i = 0; i < 200; ++i) walk[i] = acc += rng.normal();
    CHECK(phillips_zt(white, 4) < -8.0);
    CHECK(phillips_zt(walk, 4) > -3.5);
    CHECK(phillips_zt(2.0 * white, 4) == doctest::Approx(phillips_zt(white, 4)));
}

TEST_CASE("Gregory-Hansen locates an engineered regime shift") {
    const int n = 100, shift = 60;
    const auto p = years(1901, n);
    int near = 0, rejected = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        KeyedRng rng(s, {6});
        Eigen::VectorXd x(n), y(n);
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            x[i] = acc += rng.normal();
            y[i] = 1.0 + 0.5 * x[i] + (i >= shift ? 4.0 + 1.0 * x[i] : 0.0) + rng.normal(0.0, 0.5);
        }
        const auto r = gregory_hansen(p, y, x, GhModel::RegimeShift);
        REQUIRE(r.break_period);
        near += std::abs(*r.break_period - p[shift]) <= 2;
        rejected += r.p_value <= 0.05;
        CHECK(*r.break_period >= p[15]);
        CHECK(*r.break_period <= p[85]);
        CHECK(r.trim_fraction == 0.15);
    }
    MESSAGE("break within 2 periods: " << near << "/100, rejected: " << rejected);
    CHECK(near >= 90);
    CHECK(rejected >= 90);
}

TEST_CASE("Gregory-Hansen size on independent random walks") {
    const int n = 100;
    const auto p = years(1, n);
    int rejected = 0;
    for (std::uint64_t s = 0; s < 200; ++s) {
        KeyedRng rng(s, {7});
        Eigen::VectorXd x(n), y(n);
        double ax = 0.0, ay = 0.0;
        for (int i = 0; i < n; ++i) {
            x[i] = ax += rng.normal();
            y[i] = ay += rng.normal();
        }
        rejected += gregory_hansen(p, y, x, GhModel::RegimeShift).p_value <= 0.05;
    }
    MESSAGE("rejection rate " << rejected / 200.0);
    CHECK(rejected <= 20);
    CHECK_THROWS_AS(gregory_hansen(years(1, 10), Eigen::VectorXd::Zero(10), Eigen::VectorXd::Zero(10),
                                   GhModel::Level),
                    BreakTestError);
}

TEST_CASE("differential trend") {
    const auto p = years(1987, 37);
    const auto zero = differential_trend(p, Eigen::VectorXd::Zero(37), 2011);
    CHECK(zero.pre_slope == 0.0);
    CHECK(zero.post_slope == 0.0);
    CHECK(zero.tau_statistic == 0.0);
    CHECK(zero.tau_pvalue == doctest::Approx(1.0));

    KeyedRng rng(9, {8});
    Eigen::VectorXd g = noise(rng, 37, 0.01);
    for (int i = 24; i < 37; ++i) g[i] += -0.1 * (i - 24);
    const auto t = differential_trend(p, g, 2011, true);
    CHECK(t.tau_pvalue < 0.01);
    CHECK(t.post_slope == doctest::Approx(-0.1).epsilon(0.05));
    CHECK(t.pre_ci95.first <= t.pre_slope);
    CHECK(t.pre_ci95.second >= t.pre_slope);
    REQUIRE(t.sup_tau);
    CHECK(std::abs(*t.sup_tau) >= std::abs(t.tau_statistic) - 1e-12);
    CHECK(*t.sup_pvalue <= 1.0);
    CHECK(*t.sup_pvalue >= t.tau_pvalue);

    // HC1 slope standard error from the sandwich formula.
    Eigen::MatrixXd x(24, 2);
    Eigen::VectorXd y(24);
    for (int i = 0; i < 24; ++i) x(i, 0) = 1.0, x(i, 1) = p[static_cast<std::size_t>(i)], y[i] = g[i];
    const Eigen::VectorXd b = oracle::normal_equations(x, y);
    const Eigen::VectorXd e = y - x * b;
    const Eigen::MatrixXd bread = (x.transpose() * x).inverse();
    Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(2, 2);
    for (int i = 0; i < 24; ++i) meat += e[i] * e[i] * x.row(i).transpose() * x.row(i);
    const double se = std::sqrt((bread * meat * bread)(1, 1) * 24.0 / 22.0);
    CHECK(t.pre_slope == doctest::Approx(b[1]).epsilon(1e-9));
    CHECK(t.pre_se == doctest::Approx(se).epsilon(1e-9));
}
