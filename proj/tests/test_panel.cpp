#include "doctest.h"

#include "scm/dgp.hpp"
#include "scm/errors.hpp"
#include "scm/panel.hpp"

#include <sstream>

using namespace scm;

namespace {

LoadResult parse(const std::string& text, PanelSchema schema = {}) {
    std::istringstream in(text);
    return load_panel(in, schema);
}

PanelDataset small_panel() {
    std::string csv = "unit,year,y,x\n";
    for (const char* u : {"A", "B", "C", "D"})
        for (int y = 2000; y < 2006; ++y) {
            const int k = u[0] - 'A';
            csv += std::string(u) + "," + std::to_string(y) + "," + std::to_string(k * 10 + (y - 2000)) + "," +
                   std::to_string(k + 0.5) + "\n";
        }
    PanelSchema s;
    s.outcome_columns = {"y"};
    return parse(csv, s).dataset;
}

StudySpec small_spec() {
    StudySpec s;
    s.treated_unit = "A";
    s.treatment_period = 2004;
    s.outcome = "y";
    return s;
}

}  // namespace

TEST_CASE("parses a balanced panel in first-seen unit order") {
    PanelSchema s;
    s.outcome_columns = {"y"};
    const auto r = parse("unit,year,y\nB,2001,1\nA,2001,2\nB,2000,3\nA,2000,4\n", s);
    const auto& d = r.dataset;
    REQUIRE(d.unit_count() == 2);
    CHECK(d.units()[0].id == "B");
    CHECK(d.periods() == std::vector<int>{2000, 2001});
    CHECK(d.value(0, 0, 0) == 3.0);
    CHECK(d.value(1, 1, 0) == 2.0);
    CHECK(d.variables()[0].role == VariableRole::Outcome);
    CHECK(r.report.warnings.empty());
}

TEST_CASE("quoted fields and name column") {
    PanelSchema s;
    s.name_column = "name";
    const auto r = parse("unit,name,year,\"gdp, real\"\nTR,\"Turkey, Rep.\",2000,1.5\nTR,\"Turkey, Rep.\",2001,2\n"
                         "GR,Greece,2000,3\nGR,Greece,2001,4\n",
                         s);
    CHECK(r.dataset.units()[0].name == "Turkey, Rep.");
    CHECK(r.dataset.variables()[0].name == "gdp, real");
}

TEST_CASE("parse errors carry line numbers") {
    SUBCASE("empty input") { CHECK_THROWS_AS(parse(""), ParseError); }
    SUBCASE("bad field count") {
        try {
            parse("unit,year,y\nA,2000,1\nA,2001\n");
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line() == 3);
        }
    }
    SUBCASE("bad year") {
        try {
            parse("unit,year,y\nA,20x0,1\n");
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line() == 2);
        }
    }
    SUBCASE("bad value") { CHECK_THROWS_AS(parse("unit,year,y\nA,2000,abc\n"), ParseError); }
    SUBCASE("duplicate row") { CHECK_THROWS_AS(parse("unit,year,y\nA,2000,1\nA,2000,2\n"), ParseError); }
    SUBCASE("missing unit column") { CHECK_THROWS_AS(parse("id,year,y\nA,2000,1\n"), ParseError); }
}

TEST_CASE("unbalanced unit is dropped with a warning or rejected in strict mode") {
    const std::string csv = "unit,year,y\nA,2000,1\nA,2001,2\nB,2000,1\nB,2001,\nC,2000,5\nC,2001,6\n";
    const auto r = parse(csv);
    CHECK(r.dataset.unit_count() == 2);
    CHECK(r.report.dropped_units == std::vector<std::string>{"B"});
    CHECK(r.report.warnings.size() == 1);
    CHECK(r.report.warnings[0].find("y@2001") != std::string::npos);
    PanelSchema strict;
    strict.strict = true;
    CHECK_THROWS_AS(parse(csv, strict), ValidationError);
}

TEST_CASE("sparse period is dropped before units") {
    const std::string csv = "unit,year,y\nA,2000,1\nA,2001,2\nA,2002,9\nB,2000,1\nB,2001,2\nC,2000,5\nC,2001,6\n";
    const auto r = parse(csv);
    CHECK(r.dataset.unit_count() == 3);
    CHECK(r.report.dropped_periods == std::vector<int>{2002});
    CHECK(r.dataset.periods() == std::vector<int>{2000, 2001});
}

TEST_CASE("write/load round trip is exact") {
    const auto dgp = dgp_preset("null_small");
    const auto d = generate_scenario(dgp, 3);
    std::ostringstream out;
    write_panel(out, d);
    PanelSchema s;
    s.outcome_columns = {"y"};
    std::istringstream in(out.str());
    const auto back = load_panel(in, s).dataset;
    CHECK(back == d);
}

TEST_CASE("constructor invariants") {
    CHECK_THROWS_AS(PanelDataset({{"A", "A"}}, {2000, 2000}, {{"y", VariableRole::Outcome}}, {1, 2}), ValidationError);
    CHECK_THROWS_AS(PanelDataset({{"A", "A"}, {"A", "A"}}, {2000}, {{"y", VariableRole::Outcome}}, {1, 2}),
                    ValidationError);
    CHECK_THROWS_AS(PanelDataset({{"A", "A"}}, {2000}, {{"y", VariableRole::Outcome}}, {1, 2}), ValidationError);
    CHECK_THROWS_AS(PanelDataset({{"A", "A"}}, {2000}, {{"y", VariableRole::Outcome}}, {std::nan("")}),
                    ValidationError);
}

TEST_CASE("truncation and unit restriction") {
    const auto d = small_panel();
    const auto t = d.truncated(2002);
    CHECK(t.periods() == std::vector<int>{2000, 2001, 2002});
    CHECK(t.value(1, 2, 0) == d.value(1, 2, 0));
    const auto u = d.with_units({"C", "A"});
    CHECK(u.unit_count() == 2);
    CHECK(u.units()[0].id == "A");
}

TEST_CASE("spec validation") {
    const auto d = small_panel();
    auto s = small_spec();
    CHECK_NOTHROW(validate_spec(d, s));
    SUBCASE("unknown treated") {
        s.treated_unit = "Z";
        CHECK_THROWS_AS(validate_spec(d, s), SpecError);
    }
    SUBCASE("too early treatment") {
        s.treatment_period = 2001;
        CHECK_THROWS_AS(validate_spec(d, s), SpecError);
    }
    SUBCASE("no post period") {
        s.treatment_period = 2006;
        CHECK_THROWS_AS(validate_spec(d, s), SpecError);
    }
    SUBCASE("benchmark year in post period") {
        s.predictors = BenchmarkYears{{2000, 2004}};
        CHECK_THROWS_AS(validate_spec(d, s), SpecError);
    }
    SUBCASE("donor pool too small") {
        s.donor_exclusions = {"B", "C"};
        CHECK_THROWS_AS(validate_spec(d, s), DonorPoolError);
    }
    SUBCASE("treated unit excluded") {
        s.donor_exclusions = {"A"};
        CHECK_THROWS_AS(validate_spec(d, s), SpecError);
    }
    SUBCASE("covariate window reaching the treatment period") {
        s.covariates = {{"x", YearWindow{2000, 2004}}};
        CHECK_THROWS_AS(validate_spec(d, s), SpecError);
    }
}

TEST_CASE("design matrices follow the scheme") {
    const auto d = small_panel();
    auto s = small_spec();
    s.predictors = BenchmarkYears{{2001, 2003}};
    s.covariates = {{"x", std::nullopt}, {"x", YearWindow{2000, 2001}}};
    s.donor_exclusions = {"C"};
    const auto m = build_design(d, s);
    CHECK(m.donor_ids == std::vector<std::string>{"B", "D"});
    REQUIRE(m.predictors() == 4);
    CHECK(m.scheme_rows == 2);
    CHECK(m.x1[0] == 1.0);
    CHECK(m.x1[1] == 3.0);
    CHECK(m.x0(0, 0) == 11.0);
    CHECK(m.x0(1, 1) == 33.0);
    CHECK(m.x1[2] == 0.5);
    CHECK(m.x0(3, 1) == 3.5);
    CHECK(m.pre_periods == std::vector<int>{2000, 2001, 2002, 2003});
    CHECK(m.q0.rows() == 4);
    CHECK(m.paths.rows() == 6);
    CHECK(m.paths(5, 2) == 35.0);

    s.predictors = LaggedOutcomes{2};
    s.covariates.clear();
    const auto lag = build_design(d, s);
    CHECK(lag.x1[0] == 3.0);
    CHECK(lag.x1[1] == 2.0);

    s.predictors = FullPrePath{};
    const auto full = build_design(d, s);
    CHECK(full.predictors() == 4);
    CHECK(full.x1 == full.q1);
}

TEST_CASE("shifted design moves predictor years back") {
    const auto d = small_panel();
    auto s = small_spec();
    s.predictors = BenchmarkYears{{2003}};
    const auto m = build_shifted_design(d, s, 2002, 2);
    CHECK(m.x1[0] == 1.0);
    CHECK(m.pre_periods == std::vector<int>{2000, 2001});
    CHECK_THROWS_AS(build_shifted_design(d, s, 2005, 0), SpecError);
}

TEST_CASE("standardization uses the population sd and flags constant rows") {
    DesignMatrices m;
    m.x1 = Eigen::Vector2d(1.0, 5.0);
    m.x0.resize(2, 3);
    m.x0 << 2, 3, 6, 5, 5, 5;
    m.predictor_labels = {"a", "b"};
    const auto s = standardize_predictors(m);
    const double mean = 3.0, sd = std::sqrt((4.0 + 1.0 + 0.0 + 9.0) / 4.0);
    CHECK(s.design.x1[0] == doctest::Approx((1.0 - mean) / sd));
    CHECK(s.design.x0(0, 2) == doctest::Approx((6.0 - mean) / sd));
    CHECK(s.scaling.constant[1]);
    CHECK(s.design.x0.row(1).isZero());
    CHECK(s.warnings.size() == 1);
    const Eigen::VectorXd back = unstandardize(s.scaling, s.design.x1);
    CHECK(back[0] == doctest::Approx(1.0));
    CHECK(back[1] == doctest::Approx(5.0));
}
