#include "scm/robustness.hpp"

#include "scm/elastic_net.hpp"
#include "scm/errors.hpp"
#include "scm/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace scm {

namespace {

std::vector<int> pre_periods(const PanelDataset& dataset, int cutoff) {
    std::vector<int> out;
    for (int p : dataset.periods())
        if (p < cutoff) out.push_back(p);
    return out;
}

double post_correlation(const ScmFit& a, const ScmFit& b) {
    std::vector<double> x, y;
    for (std::size_t i = 0; i < a.periods.size(); ++i) {
        if (a.periods[i] < a.treatment_period) continue;
        x.push_back(a.gap[static_cast<Eigen::Index>(i)]);
        y.push_back(b.gap[static_cast<Eigen::Index>(i)]);
    }
    return stats::pearson(x, y);
}

}  // namespace

LooOutcome leave_one_out(const PanelDataset& dataset, const StudySpec& spec, LooMode mode) {
    LooOutcome out;
    out.baseline = fit(dataset, spec);
    const auto& w = out.baseline.weights.w;
    std::vector<Eigen::Index> targets;
    if (mode == LooMode::LargestWeight) {
        Eigen::Index best = 0;
        w.maxCoeff(&best);
        if (w[best] > kNonzeroWeight) targets.push_back(best);
    } else {
        for (Eigen::Index j = 0; j < w.size(); ++j)
            if (w[j] > kNonzeroWeight) targets.push_back(j);
    }
    if (targets.empty()) throw SpecError("baseline fit has no nonzero-weight donor");

    for (auto j : targets) {
        const auto& id = out.baseline.donor_ids[static_cast<std::size_t>(j)];
        StudySpec s = spec;
        s.donor_exclusions.push_back(id);
        if (donor_pool(dataset, s).size() < 2) {
            out.warnings.push_back("excluding '" + id + "' leaves fewer than 2 donors; skipped");
            continue;
        }
        LooResult r;
        r.excluded_unit = id;
        r.refit = fit(dataset, s);
        r.baseline_gap_end = out.baseline.gap[out.baseline.gap.size() - 1];
        r.loo_gap_end = r.refit.gap[r.refit.gap.size() - 1];
        r.gap_correlation = post_correlation(out.baseline, r.refit);
        out.results.push_back(std::move(r));
    }
    return out;
}

Eigen::VectorXd pairwise_discrepancies(const ScmFit& fit) {
    const auto& d = fit.standardized.design;
    const Eigen::MatrixXd diff = d.x0.colwise() - d.x1;
    return (fit.vweights.v.asDiagonal() * diff.cwiseAbs2()).colwise().sum().transpose();
}

PenalizedFit penalized_fit(const ScmFit& plain, double lambda) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("penalized_fit: lambda must be >= 0");
    PenalizedFit out;
    out.lambda = lambda;
    out.discrepancies = pairwise_discrepancies(plain);
    auto qp = weight_problem(plain.standardized.design, plain.vweights);
    qp.linear = lambda * out.discrepancies;
    auto w = solve_simplex_qp(qp);
    out.objective = w.objective;
    out.pairwise_penalty_value = out.discrepancies.dot(w.w);
    out.base = make_fit(plain.design, plain.standardized, plain.vweights, std::move(w));
    out.base.spec = plain.spec;
    return out;
}

PenalizedFit penalized_fit(const PanelDataset& dataset, const StudySpec& spec, double lambda) {
    return penalized_fit(fit(dataset, spec), lambda);
}

std::vector<double> default_penalty_grid() {
    std::vector<double> g;
    for (int e = -4; e <= 2; ++e) g.push_back(std::pow(10.0, e));
    return g;
}

PenaltyChoice choose_penalty(const PanelDataset& dataset, const StudySpec& spec, std::vector<double> grid) {
    if (grid.empty()) throw std::invalid_argument("choose_penalty: empty lambda grid");
    std::sort(grid.begin(), grid.end());
    const auto pre = pre_periods(dataset, effective_cutoff(spec));
    const auto n_hold = std::max<std::size_t>(2, pre.size() / 3);
    if (pre.size() < n_hold + 2) throw SpecError("pre-period too short for a penalty holdout");
    const int hold_first = pre[pre.size() - n_hold];
    const int hold_last = pre.back();

    const auto plain = fit(dataset, restrict_spec_before(spec, hold_first));
    PenaltyChoice out;
    out.grid = grid;
    double best = std::numeric_limits<double>::infinity();
    for (double lambda : grid) {
        const auto p = penalized_fit(plain, lambda);
        const double r = rmse(p.base.gap_series(), Window::range(hold_first, hold_last));
        out.holdout_mse.push_back(r * r);
        if (r * r < best) {
            best = r * r;
            out.lambda = lambda;
        }
    }
    return out;
}

BiasCorrection bias_correct(const ScmFit& fit, double alpha) {
    const auto& sd = fit.standardized.design;
    const Eigen::MatrixXd x = sd.x0.transpose();  // J x K
    const Eigen::VectorXd x1 = sd.x1;
    const auto j = x.rows();
    const auto paths = fit.donor_paths();
    const ElasticNetSettings settings{1e-10, 20000};

    BiasCorrection out;
    out.counterfactual.resize(paths.rows());
    for (Eigen::Index t = 0; t < paths.rows(); ++t) {
        const Eigen::VectorXd y = paths.row(t).transpose();
        double chosen = 0.0;
        const double lmax = elastic_net_lambda_max(x, y, alpha);
        if (lmax > 0.0 && j >= 3) {
            const auto grid = log_lambda_grid(lmax, 1e-3, 20);
            std::vector<double> err(grid.size(), 0.0);
            for (Eigen::Index out_j = 0; out_j < j; ++out_j) {
                Eigen::MatrixXd xt(j - 1, x.cols());
                Eigen::VectorXd yt(j - 1);
                for (Eigen::Index r = 0, k = 0; r < j; ++r) {
                    if (r == out_j) continue;
                    xt.row(k) = x.row(r);
                    yt[k++] = y[r];
                }
                Eigen::VectorXd warm = Eigen::VectorXd::Zero(x.cols());
                for (std::size_t g = 0; g < grid.size(); ++g) {
                    const auto en = elastic_net(xt, yt, grid[g], alpha, &warm, settings);
                    warm = en.beta;
                    const double e = y[out_j] - en.intercept - x.row(out_j).dot(en.beta);
                    err[g] += e * e;
                }
            }
            const auto best = std::min_element(err.begin(), err.end()) - err.begin();
            chosen = grid[static_cast<std::size_t>(best)];
        }
        out.lambdas.push_back(chosen);
        const auto en = elastic_net(x, y, chosen, alpha, nullptr, settings);
        const Eigen::VectorXd mu0 = (x * en.beta).array() + en.intercept;
        const double mu1 = en.intercept + x1.dot(en.beta);
        out.counterfactual[t] = fit.weights.w.dot(y - mu0) + mu1;
    }
    out.gap = fit.observed - out.counterfactual;
    out.correlation_with_classic = stats::pearson(std::span<const double>(out.gap.data(), out.gap.size()),
                                                  std::span<const double>(fit.gap.data(), fit.gap.size()));
    return out;
}

LassoFit lasso_fit(const PanelDataset& dataset, const StudySpec& spec, const LassoOptions& options) {
    if (options.lambda_grid.empty()) throw std::invalid_argument("lasso_fit: empty lambda grid");
    for (double l : options.lambda_grid)
        if (!(l >= 0.0) || !std::isfinite(l)) throw std::invalid_argument("lasso_fit: lambdas must be finite and >= 0");
    const auto design = build_design(dataset, spec);
    const auto& pre = design.pre_periods;

    YearWindow hold;
    if (options.holdout) {
        hold = *options.holdout;
    } else {
        const auto n_hold = std::max<std::size_t>(2, pre.size() / 3);
        if (pre.size() < n_hold) throw SpecError("pre-period too short for a LASSO holdout");
        hold = {pre[pre.size() - n_hold], pre.back()};
    }
    std::vector<Eigen::Index> train_rows, hold_rows;
    for (std::size_t i = 0; i < pre.size(); ++i)
        (pre[i] >= hold.first && pre[i] <= hold.last ? hold_rows : train_rows).push_back(static_cast<Eigen::Index>(i));
    if (hold_rows.size() < 2) throw SpecError("LASSO holdout window has fewer than 2 pre-period periods");
    if (train_rows.size() < 2) throw SpecError("LASSO training window has fewer than 2 periods");

    const Eigen::MatrixXd& x = design.q0;
    const Eigen::VectorXd& y = design.q1;
    const Eigen::MatrixXd xt = x(train_rows, Eigen::all);
    const Eigen::VectorXd yt = y(train_rows);
    const Eigen::MatrixXd xh = x(hold_rows, Eigen::all);
    const Eigen::VectorXd yh = y(hold_rows);

    std::vector<double> grid = options.lambda_grid;
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

    LassoFit out;
    out.lambda_path = grid;
    out.holdout_mse.assign(grid.size(), 0.0);
    out.nonzero_counts.assign(grid.size(), 0);
    std::vector<ElasticNetFit> full(grid.size());
    Eigen::VectorXd warm_t = Eigen::VectorXd::Zero(x.cols());
    Eigen::VectorXd warm_f = warm_t;
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_i = grid.size() - 1;
    for (std::size_t k = grid.size(); k-- > 0;) {
        const auto tr = elastic_net(xt, yt, grid[k], options.alpha, &warm_t);
        warm_t = tr.beta;
        const double mse = (yh - xh * tr.beta - Eigen::VectorXd::Constant(yh.size(), tr.intercept)).squaredNorm() /
                           static_cast<double>(yh.size());
        out.holdout_mse[k] = mse;
        if (mse < best) {
            best = mse;
            best_i = k;
        }
        full[k] = elastic_net(x, y, grid[k], options.alpha, &warm_f);
        warm_f = full[k].beta;
        out.nonzero_counts[k] = static_cast<int>((full[k].beta.array() != 0.0).count());
    }
    out.chosen_lambda = grid[best_i];
    out.weights = full[best_i].beta;
    out.intercept = full[best_i].intercept;
    out.donor_ids = design.donor_ids;
    out.periods = design.periods;
    out.treatment_period = design.treatment_period;
    out.holdout = hold;
    out.observed = design.paths.col(0);
    out.counterfactual = (design.paths.rightCols(design.donors()) * out.weights).array() + out.intercept;
    out.gap = out.observed - out.counterfactual;
    out.pre_rmse = rmse(out.gap_series(), Window::pre());
    out.post_rmse = rmse(out.gap_series(), Window::post());
    return out;
}

const char* to_string(SeMethod m) {
    switch (m) {
        case SeMethod::PlaceboSpread: return "placebo-spread";
        case SeMethod::Jackknife: return "jackknife";
        case SeMethod::Unavailable: return "unavailable";
    }
    return "unknown";
}

AttResult att(const GapSeries& series, const PlaceboDistribution* placebos) {
    std::vector<double> post;
    for (std::size_t i = 0; i < series.periods.size(); ++i)
        if (series.periods[i] >= series.treatment_period) post.push_back(series.gap[static_cast<Eigen::Index>(i)]);
    if (post.empty()) throw std::invalid_argument("att: empty post-period");
    AttResult out;
    out.att = stats::mean(post);
    out.post_periods = static_cast<int>(post.size());
    if (post.size() < 2) return out;
    if (placebos) {
        std::vector<double> effects;
        for (const auto& d : placebos->donors) {
            if (!d.retained()) continue;
            effects.push_back(att(d.fit->gap_series()).att);
        }
        if (effects.size() >= 2) {
            out.se = stats::sample_sd(effects);
            out.method = SeMethod::PlaceboSpread;
        }
    }
    if (!out.se) {
        out.se = stats::sample_sd(post) / std::sqrt(static_cast<double>(post.size()));
        out.method = SeMethod::Jackknife;
    }
    if (out.se) out.ci95 = std::pair{out.att - 1.96 * *out.se, out.att + 1.96 * *out.se};
    return out;
}

}  // namespace scm
