#pragma once

#include <Eigen/Dense>

#include <vector>

namespace scm {

struct ElasticNetFit {
    Eigen::VectorXd beta;
    double intercept = 0.0;
    int sweeps = 0;
    bool converged = false;
};

struct ElasticNetSettings {
    double tolerance = 1e-13;  ///< max coefficient change per sweep, relative to the response scale
    int max_sweeps = 1000000;
};

/// Minimizes (1/2n)||y - b0 - X beta||^2 + lambda (alpha ||beta||_1 + (1 - alpha)/2 ||beta||^2)
/// by cyclic coordinate descent on the centered Gram matrix. The intercept
/// is unpenalized and columns are not rescaled. `warm` seeds beta.
ElasticNetFit elastic_net(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda, double alpha,
                          const Eigen::VectorXd* warm = nullptr, const ElasticNetSettings& settings = {});

/// Smallest lambda at which every coefficient is zero.
double elastic_net_lambda_max(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double alpha);

/// `count` log-spaced values from lambda_max down to lambda_max * ratio.
std::vector<double> log_lambda_grid(double lambda_max, double ratio, int count);

}  // namespace scm
