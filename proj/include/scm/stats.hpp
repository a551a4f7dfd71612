#pragma once

#include <Eigen/Dense>

#include <span>

namespace scm::stats {

/// Ordinary least squares via column-pivoted QR.
struct OlsFit {
    Eigen::VectorXd coef;
    Eigen::VectorXd residuals;
    double rss = 0.0;
    Eigen::Index rank = 0;
    /// (X'X)^{-1}; only filled for full-rank designs.
    Eigen::MatrixXd xtx_inv;
    bool full_rank = false;
};

/// Fits y on X (no implicit intercept). Rank-deficient designs return
/// full_rank = false with a minimum-effort basic solution; callers decide
/// whether that is an error.
OlsFit ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

/// Heteroskedasticity-robust (HC1) covariance of an OLS fit.
Eigen::MatrixXd hc1_covariance(const Eigen::MatrixXd& x, const OlsFit& fit);

double mean(std::span<const double> v);
/// Sample standard deviation (n - 1 denominator); NaN when n < 2.
double sample_sd(std::span<const double> v);
/// Pearson correlation; NaN if either side has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

/// Upper tail P(F > f) for F(d1, d2).
double f_sf(double f, double d1, double d2);
/// Two-sided P(|T| > |t|) for Student t with dof degrees of freedom.
double t_two_sided(double t, double dof);
double t_quantile(double p, double dof);
/// Two-sided P(|Z| > |z|).
double normal_two_sided(double z);
/// Upper tail P(X > x) for chi-square with dof degrees of freedom.
double chi2_sf(double x, double dof);

}  // namespace scm::stats
