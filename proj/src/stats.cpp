#include "scm/stats.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <limits>
#include <stdexcept>

namespace scm::stats {

OlsFit ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    if (x.rows() != y.size()) throw std::invalid_argument("ols: row mismatch");
    OlsFit out;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    qr.setThreshold(1e-10);
    out.rank = qr.rank();
    out.full_rank = out.rank == x.cols() && x.rows() >= x.cols();
    out.coef = qr.solve(y);
    out.residuals = y - x * out.coef;
    out.rss = out.residuals.squaredNorm();
    if (out.full_rank) {
        // R^{-1} R^{-T} permuted back gives (X'X)^{-1} without forming X'X.
        const auto n = x.cols();
        Eigen::MatrixXd r = qr.matrixR().topLeftCorner(n, n).triangularView<Eigen::Upper>();
        Eigen::MatrixXd rinv = r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(n, n));
        Eigen::MatrixXd inv_perm = rinv * rinv.transpose();
        const auto& perm = qr.colsPermutation();
        out.xtx_inv = perm * inv_perm * perm.transpose();
    }
    return out;
}

Eigen::MatrixXd hc1_covariance(const Eigen::MatrixXd& x, const OlsFit& fit) {
    if (!fit.full_rank) throw std::invalid_argument("hc1_covariance: rank-deficient fit");
    const double n = static_cast<double>(x.rows());
    const double k = static_cast<double>(x.cols());
    Eigen::MatrixXd meat = x.transpose() * fit.residuals.array().square().matrix().asDiagonal() * x;
    return (n / (n - k)) * fit.xtx_inv * meat * fit.xtx_inv;
}

double mean(std::span<const double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sample_sd(std::span<const double> v) {
    if (v.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    const double m = mean(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    const double ma = mean(a), mb = mean(b);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0.0 || sbb <= 0.0) return std::numeric_limits<double>::quiet_NaN();
    return sab / std::sqrt(saa * sbb);
}

double f_sf(double f, double d1, double d2) {
    if (std::isnan(f)) return std::numeric_limits<double>::quiet_NaN();
    if (f <= 0.0) return 1.0;
    if (std::isinf(f)) return 0.0;
    boost::math::fisher_f dist(d1, d2);
    return boost::math::cdf(boost::math::complement(dist, f));
}

double t_two_sided(double t, double dof) {
    if (std::isnan(t)) return std::numeric_limits<double>::quiet_NaN();
    if (std::isinf(t)) return 0.0;
    boost::math::students_t dist(dof);
    return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

double t_quantile(double p, double dof) {
    boost::math::students_t dist(dof);
    return boost::math::quantile(dist, p);
}

double normal_two_sided(double z) {
    if (std::isnan(z)) return std::numeric_limits<double>::quiet_NaN();
    if (std::isinf(z)) return 0.0;
    boost::math::normal dist;
    return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(z)));
}

double chi2_sf(double x, double dof) {
    if (x <= 0.0) return 1.0;
    boost::math::chi_squared dist(dof);
    return boost::math::cdf(boost::math::complement(dist, x));
}

}  // namespace scm::stats
