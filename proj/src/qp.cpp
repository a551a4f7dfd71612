#include "scm/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace scm {

namespace {

void check_problem(const SimplexQp& p) {
    if (p.a.rows() < 1 || p.a.cols() < 2) throw std::invalid_argument("simplex qp: need K >= 1 and J >= 2");
    if (p.b.size() != p.a.rows()) throw std::invalid_argument("simplex qp: b has wrong length");
    if (p.linear.size() != 0 && p.linear.size() != p.a.cols())
        throw std::invalid_argument("simplex qp: linear term has wrong length");
    if (!p.a.allFinite() || !p.b.allFinite() || !p.linear.allFinite())
        throw std::invalid_argument("simplex qp: non-finite input");
    if (p.settings.max_iterations < 1) throw std::invalid_argument("simplex qp: max_iterations must be >= 1");
}

/// Largest step in (0, 1] keeping v + alpha * dv >= 0 (and <= upper when given).
double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv, double upper = 0.0) {
    double alpha = 1.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (dv[i] < 0.0) alpha = std::min(alpha, -v[i] / dv[i]);
        else if (upper > 0.0 && dv[i] > 0.0) alpha = std::min(alpha, (upper - v[i]) / dv[i]);
    }
    return alpha;
}

WeightVector solve_single_predictor(const SimplexQp& p) {
    const Eigen::RowVectorXd a = p.a.row(0);
    const double b = p.b[0];
    const auto j = a.size();
    WeightVector out;
    out.w = Eigen::VectorXd::Zero(j);
    out.converged = true;

    double best_vertex = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < j; ++i) best_vertex = std::min(best_vertex, (a[i] - b) * (a[i] - b));
    const bool bracketed = a.minCoeff() <= b && b <= a.maxCoeff();
    if (!bracketed || best_vertex == 0.0) {
        for (Eigen::Index i = 0; i < j; ++i) {
            if ((a[i] - b) * (a[i] - b) == best_vertex) {
                out.w[i] = 1.0;
                break;
            }
        }
    } else {
        // b lies strictly between two donor values: the optimal face's
        // extreme points are two-donor mixtures; take the first pair.
        bool done = false;
        for (Eigen::Index i = 0; i < j && !done; ++i) {
            for (Eigen::Index k = i + 1; k < j && !done; ++k) {
                if ((a[i] - b) * (a[k] - b) < 0.0) {
                    out.w[i] = (a[k] - b) / (a[k] - a[i]);
                    out.w[k] = 1.0 - out.w[i];
                    done = true;
                }
            }
        }
    }
    out.objective = qp_objective(p, out.w);
    return out;
}

struct Polished {
    Eigen::VectorXd w;
    bool ok = false;
};

/// Equality-constrained re-solve on a guessed support with a short
/// primal-dual active-set correction. Returns ok = false whenever the
/// reduced KKT system is inconsistent or the result fails the optimality checks.
Polished polish(const Eigen::MatrixXd& h, const Eigen::VectorXd& q, std::vector<bool> support) {
    const auto n = h.rows();
    for (int round = 0; round < static_cast<int>(n) + 2; ++round) {
        std::vector<Eigen::Index> idx;
        for (Eigen::Index i = 0; i < n; ++i)
            if (support[static_cast<std::size_t>(i)]) idx.push_back(i);
        const auto s = static_cast<Eigen::Index>(idx.size());
        if (s == 0) return {};
        Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(s + 1, s + 1);
        Eigen::VectorXd rhs(s + 1);
        for (Eigen::Index r = 0; r < s; ++r) {
            for (Eigen::Index c = 0; c < s; ++c) kkt(r, c) = h(idx[static_cast<std::size_t>(r)], idx[static_cast<std::size_t>(c)]);
            kkt(r, s) = -1.0;
            kkt(s, r) = 1.0;
            rhs[r] = -q[idx[static_cast<std::size_t>(r)]];
        }
        rhs[s] = 1.0;
        // Duplicate donors make the reduced system singular; the minimum-norm
        // solution is still a valid optimum whenever the system is consistent.
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(kkt);
        cod.setThreshold(1e-11);
        const Eigen::VectorXd sol = cod.solve(rhs);
        if (!sol.allFinite() || (kkt * sol - rhs).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + rhs.cwiseAbs().maxCoeff()))
            return {};
        Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
        for (Eigen::Index r = 0; r < s; ++r) w[idx[static_cast<std::size_t>(r)]] = sol[r];
        const double y = sol[s];

        Eigen::Index worst_neg = -1;
        double worst_w = -1e-13;
        for (Eigen::Index r = 0; r < s; ++r) {
            const auto i = idx[static_cast<std::size_t>(r)];
            if (w[i] < worst_w) {
                worst_w = w[i];
                worst_neg = i;
            }
        }
        if (worst_neg >= 0) {
            support[static_cast<std::size_t>(worst_neg)] = false;
            continue;
        }
        const Eigen::VectorXd grad = h * w + q;
        Eigen::Index worst_rc = -1;
        double worst_r = -1e-10;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (support[static_cast<std::size_t>(i)]) continue;
            const double rc = grad[i] - y;
            if (rc < worst_r) {
                worst_r = rc;
                worst_rc = i;
            }
        }
        if (worst_rc >= 0) {
            support[static_cast<std::size_t>(worst_rc)] = true;
            continue;
        }
        w = w.cwiseMax(0.0);
        return {w, true};
    }
    return {};
}

}  // namespace

double qp_objective(const SimplexQp& problem, const Eigen::VectorXd& w) {
    double obj = (problem.a * w - problem.b).squaredNorm();
    if (problem.linear.size() != 0) obj += problem.linear.dot(w);
    return obj;
}

WeightVector solve_simplex_qp(const SimplexQp& problem) {
    check_problem(problem);
    if (problem.a.rows() == 1 && problem.linear.size() == 0) return solve_single_predictor(problem);

    const auto n = problem.a.cols();
    const auto& st = problem.settings;
    Eigen::MatrixXd h = 2.0 * problem.a.transpose() * problem.a;
    Eigen::VectorXd q = -2.0 * problem.a.transpose() * problem.b;
    if (problem.linear.size() != 0) q += problem.linear;
    double scale = std::max(h.cwiseAbs().maxCoeff(), q.cwiseAbs().maxCoeff());
    if (!(scale > 0.0)) scale = 1.0;
    h /= scale;
    q /= scale;

    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
    Eigen::VectorXd w = ones / static_cast<double>(n);
    Eigen::VectorXd grad = h * w + q;
    double y = grad.minCoeff() - 1.0;
    Eigen::VectorXd z = grad - y * ones;

    WeightVector out;
    bool ipm_converged = false;
    Eigen::LLT<Eigen::MatrixXd> llt;
    for (int it = 0; it < st.max_iterations; ++it) {
        const Eigen::VectorXd rd = h * w + q - y * ones - z;
        const double rp = w.sum() - 1.0;
        const double mu = w.dot(z) / static_cast<double>(n);
        if (mu < st.kkt_tolerance && rd.cwiseAbs().maxCoeff() < st.kkt_tolerance && std::abs(rp) < st.kkt_tolerance) {
            ipm_converged = true;
            break;
        }
        out.iterations = it + 1;

        Eigen::MatrixXd m = h;
        m.diagonal() += z.cwiseQuotient(w);
        llt.compute(m);
        if (llt.info() != Eigen::Success) {
            m.diagonal().array() += 1e-14 * (1.0 + m.diagonal().cwiseAbs().maxCoeff());
            llt.compute(m);
            if (llt.info() != Eigen::Success) break;
        }
        const Eigen::VectorXd m_ones = llt.solve(ones);
        const double schur = ones.dot(m_ones);

        auto newton = [&](const Eigen::VectorXd& rc, Eigen::VectorXd& dw, double& dy, Eigen::VectorXd& dz) {
            const Eigen::VectorXd rhs = -rd - rc.cwiseQuotient(w);
            const Eigen::VectorXd m_rhs = llt.solve(rhs);
            dy = (-rp - ones.dot(m_rhs)) / schur;
            dw = m_rhs + dy * m_ones;
            dz = (-rc - z.cwiseProduct(dw)).cwiseQuotient(w);
        };

        Eigen::VectorXd dw_aff, dz_aff;
        double dy_aff = 0.0;
        newton(w.cwiseProduct(z), dw_aff, dy_aff, dz_aff);
        const double a_aff = std::min(max_step(w, dw_aff), max_step(z, dz_aff));
        const double mu_aff = (w + a_aff * dw_aff).dot(z + a_aff * dz_aff) / static_cast<double>(n);
        const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);

        Eigen::VectorXd rc = w.cwiseProduct(z) + dw_aff.cwiseProduct(dz_aff);
        rc.array() -= sigma * mu;
        Eigen::VectorXd dw, dz;
        double dy = 0.0;
        newton(rc, dw, dy, dz);
        const double alpha =
            std::min(1.0, 0.995 * std::min(max_step(w, dw, st.variable_clip_bound), max_step(z, dz)));
        w += alpha * dw;
        y += alpha * dy;
        z += alpha * dz;
        w = w.cwiseMax(std::numeric_limits<double>::min());
        z = z.cwiseMax(std::numeric_limits<double>::min());

        const Eigen::VectorXd iterate = w / w.sum();
        out.residual_trace.push_back(kkt_residual(problem, iterate));
    }

    std::vector<bool> support(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) support[static_cast<std::size_t>(i)] = w[i] > z[i];
    const double violation = std::max(std::abs(w.sum() - 1.0), std::max(0.0, -w.minCoeff()));

    Eigen::VectorXd candidate = w;
    const Polished pol = polish(h, q, support);
    bool polished = false;
    if (pol.ok) {
        const Eigen::VectorXd pw = pol.w / pol.w.sum();
        const Eigen::VectorXd iw = w.cwiseMax(0.0) / w.cwiseMax(0.0).sum();
        if (qp_objective(problem, pw) <= qp_objective(problem, iw) + 1e-12 * (1.0 + std::abs(qp_objective(problem, iw)))) {
            candidate = pol.w;
            polished = true;
        }
    }
    candidate = candidate.cwiseMax(0.0);
    const double total = candidate.sum();
    out.w = total > 0.0 ? Eigen::VectorXd(candidate / total) : Eigen::VectorXd(ones / static_cast<double>(n));
    out.objective = qp_objective(problem, out.w);
    out.converged = (ipm_converged || polished) && violation <= st.violation_tolerance;
    return out;
}

double kkt_residual(const SimplexQp& problem, const Eigen::VectorXd& w) {
    if (w.size() != problem.a.cols()) throw std::invalid_argument("kkt_residual: weight length mismatch");
    if (w.minCoeff() < -1e-8 || std::abs(w.sum() - 1.0) > 1e-8)
        throw std::invalid_argument("kkt_residual: weights are not on the simplex");
    Eigen::VectorXd g = 2.0 * problem.a.transpose() * (problem.a * w - problem.b);
    if (problem.linear.size() != 0) g += problem.linear;
    const double gmin = g.minCoeff();
    double res = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i) res = std::max(res, std::max(w[i], 0.0) * (g[i] - gmin));
    return res;
}

}  // namespace scm
