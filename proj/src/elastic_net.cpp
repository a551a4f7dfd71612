#include "scm/elastic_net.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace scm {

namespace {

double soft_threshold(double z, double g) {
    if (z > g) return z - g;
    if (z < -g) return z + g;
    return 0.0;
}

}  // namespace

ElasticNetFit elastic_net(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda, double alpha,
                          const Eigen::VectorXd* warm, const ElasticNetSettings& settings) {
    const auto n = x.rows();
    const auto p = x.cols();
    if (n < 1 || y.size() != n) throw std::invalid_argument("elastic_net: dimension mismatch");
    if (!(lambda >= 0.0) || !(alpha >= 0.0 && alpha <= 1.0))
        throw std::invalid_argument("elastic_net: need lambda >= 0 and alpha in [0, 1]");
    if (warm && warm->size() != p) throw std::invalid_argument("elastic_net: warm start has wrong length");

    const Eigen::RowVectorXd xm = x.colwise().mean();
    const double ym = y.mean();
    const Eigen::MatrixXd xc = x.rowwise() - xm;
    const Eigen::VectorXd yc = y.array() - ym;
    const double dn = static_cast<double>(n);
    const Eigen::MatrixXd gram = xc.transpose() * xc / dn;
    const Eigen::VectorXd xty = xc.transpose() * yc / dn;

    ElasticNetFit out;
    out.beta = warm ? *warm : Eigen::VectorXd::Zero(p);
    // grad_j = (X'y - X'X beta)_j / n, kept current as coordinates move.
    Eigen::VectorXd grad = xty - gram * out.beta;
    const double l1 = lambda * alpha;
    const double l2 = lambda * (1.0 - alpha);
    const double scale = std::max(1.0, yc.cwiseAbs().maxCoeff());

    for (out.sweeps = 1; out.sweeps <= settings.max_sweeps; ++out.sweeps) {
        double max_change = 0.0;
        for (Eigen::Index j = 0; j < p; ++j) {
            const double a = gram(j, j);
            const double old = out.beta[j];
            const double updated = a + l2 > 0.0 ? soft_threshold(grad[j] + a * old, l1) / (a + l2) : 0.0;
            const double delta = updated - old;
            if (delta != 0.0) {
                out.beta[j] = updated;
                grad -= gram.col(j) * delta;
                max_change = std::max(max_change, std::abs(delta) * std::sqrt(a));
            }
        }
        if (max_change <= settings.tolerance * scale) {
            out.converged = true;
            break;
        }
    }
    out.sweeps = std::min(out.sweeps, settings.max_sweeps);
    out.intercept = ym - xm.dot(out.beta);
    return out;
}

double elastic_net_lambda_max(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double alpha) {
    const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
    const Eigen::VectorXd yc = y.array() - y.mean();
    const double m = (xc.transpose() * yc).cwiseAbs().maxCoeff() / static_cast<double>(x.rows());
    return m / std::max(alpha, 1e-3);
}

std::vector<double> log_lambda_grid(double lambda_max, double ratio, int count) {
    if (count < 1 || !(lambda_max > 0.0) || !(ratio > 0.0 && ratio < 1.0))
        throw std::invalid_argument("log_lambda_grid: invalid arguments");
    std::vector<double> grid;
    for (int i = 0; i < count; ++i) {
        const double f = count == 1 ? 0.0 : static_cast<double>(i) / (count - 1);
        grid.push_back(lambda_max * std::pow(ratio, f));
    }
    return grid;
}

}  // namespace scm
