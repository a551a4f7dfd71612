#include "doctest.h"
#include "oracles.hpp"

#include "scm/qp.hpp"

#include <stdexcept>

using scm::SimplexQp;

namespace {

SimplexQp make(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
    SimplexQp p;
    p.a = a;
    p.b = b;
    return p;
}

}  // namespace

TEST_CASE("solver matches exact support enumeration on random instances") {
    for (int i = 0; i < 60; ++i) {
        const auto inst = oracle::random_instance(77, i);
        const auto res = scm::solve_simplex_qp(make(inst.a, inst.b));
        const auto ref = oracle::support_enumeration(inst.a, inst.b);
        CHECK(res.converged);
        CHECK(res.objective <= oracle::objective(inst.a, inst.b, ref) + 1e-9);
        CHECK(res.w.minCoeff() >= 0.0);
        CHECK(res.w.sum() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(scm::kkt_residual(make(inst.a, inst.b), res) < 1e-8);
    }
}

TEST_CASE("solver never loses to the 0.05 simplex grid") {
    for (int i = 0; i < 20; ++i) {
        const auto inst = oracle::random_instance(5, i);
        const auto res = scm::solve_simplex_qp(make(inst.a, inst.b));
        CHECK(res.objective <= oracle::grid_minimum(inst.a, inst.b, 20) + 1e-12);
    }
}

TEST_CASE("linear term is honoured") {
    for (int i = 0; i < 30; ++i) {
        const auto inst = oracle::random_instance(11, i);
        scm::KeyedRng rng(3, {static_cast<std::uint64_t>(i)});
        Eigen::VectorXd lin(inst.a.cols());
        for (auto& v : lin) v = rng.uniform() * 2.0;
        auto p = make(inst.a, inst.b);
        p.linear = lin;
        const auto res = scm::solve_simplex_qp(p);
        const auto ref = oracle::support_enumeration(inst.a, inst.b, lin);
        CHECK(res.objective <= oracle::objective(inst.a, inst.b, ref) + lin.dot(ref) + 1e-9);
    }
}

TEST_CASE("target inside the hull is reproduced exactly") {
    Eigen::MatrixXd a(2, 3);
    a << 0, 1, 0, 0, 0, 1;
    Eigen::VectorXd b(2);
    b << 0.2, 0.3;
    const auto res = scm::solve_simplex_qp(make(a, b));
    CHECK(res.w[0] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(res.w[1] == doctest::Approx(0.2).epsilon(1e-9));
    CHECK(res.w[2] == doctest::Approx(0.3).epsilon(1e-9));
    CHECK(res.objective < 1e-16);
}

TEST_CASE("single predictor: lowest-index optimal vertex") {
    Eigen::MatrixXd a(1, 4);
    a << 3, 5, 5, 7;
    Eigen::VectorXd b(1);
    b << 9;
    auto res = scm::solve_simplex_qp(make(a, b));
    CHECK(res.w[3] == 1.0);
    b << 5;
    res = scm::solve_simplex_qp(make(a, b));
    CHECK(res.w[1] == 1.0);
    CHECK(res.w.sum() == 1.0);
    b << 4;
    res = scm::solve_simplex_qp(make(a, b));
    CHECK(res.w[0] == doctest::Approx(0.5));
    CHECK(res.w[1] == doctest::Approx(0.5));
    CHECK(res.objective == doctest::Approx(0.0));
}

TEST_CASE("identical donors give a valid tie") {
    Eigen::MatrixXd a(2, 3);
    a << 1, 1, 4, 2, 2, 0;
    Eigen::VectorXd b(2);
    b << 1, 2;
    const auto res = scm::solve_simplex_qp(make(a, b));
    CHECK(res.w[0] + res.w[1] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(res.objective < 1e-14);
}

TEST_CASE("trace records one residual per interior iterate") {
    const auto inst = oracle::random_instance(8, 3);
    const auto res = scm::solve_simplex_qp(make(inst.a, inst.b));
    if (inst.a.rows() > 1) {
        CHECK(static_cast<int>(res.residual_trace.size()) == res.iterations);
        CHECK(res.residual_trace.back() <= res.residual_trace.front() + 1e-12);
    }
}

TEST_CASE("shape and value errors") {
    Eigen::MatrixXd a(2, 3);
    a.setOnes();
    Eigen::VectorXd b(3);
    b.setZero();
    CHECK_THROWS_AS(scm::solve_simplex_qp(make(a, b)), std::invalid_argument);
    Eigen::VectorXd b2(2);
    b2 << 0, std::nan("");
    CHECK_THROWS_AS(scm::solve_simplex_qp(make(a, b2)), std::invalid_argument);
    Eigen::MatrixXd one(2, 1);
    one.setOnes();
    CHECK_THROWS_AS(scm::solve_simplex_qp(make(one, Eigen::VectorXd::Zero(2))), std::invalid_argument);
    Eigen::VectorXd off(3);
    off << 0.5, 0.6, 0.0;
    CHECK_THROWS_AS(scm::kkt_residual(make(a, Eigen::VectorXd::Zero(2)), off), std::invalid_argument);
}

TEST_CASE("deterministic") {
    const auto inst = oracle::random_instance(1, 4);
    const auto r1 = scm::solve_simplex_qp(make(inst.a, inst.b));
    const auto r2 = scm::solve_simplex_qp(make(inst.a, inst.b));
    CHECK(r1.w == r2.w);
    CHECK(r1.objective == r2.objective);
}
