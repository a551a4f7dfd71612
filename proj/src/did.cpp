#include "scm/did.hpp"

#include "scm/errors.hpp"
#include "scm/rng.hpp"
#include "scm/stats.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace scm {

namespace {

constexpr std::uint64_t kDidStream = 0x646964ULL;  // "did"

struct Layout {
    std::vector<int> periods;
    std::vector<std::size_t> time_index;  ///< per row
    std::size_t units = 0;
};

Layout layout(const GapPanel& p) {
    Layout l;
    l.periods = p.period;
    std::sort(l.periods.begin(), l.periods.end());
    l.periods.erase(std::unique(l.periods.begin(), l.periods.end()), l.periods.end());
    for (int t : p.period)
        l.time_index.push_back(static_cast<std::size_t>(std::lower_bound(l.periods.begin(), l.periods.end(), t) - l.periods.begin()));
    l.units = p.units.size();
    return l;
}

Eigen::VectorXd interaction(const GapPanel& p) {
    Eigen::VectorXd d(p.rows());
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
        const auto i = static_cast<std::size_t>(r);
        d[r] = p.unit_treated[p.unit[i]] && p.post[i] ? 1.0 : 0.0;
    }
    return d;
}

Eigen::Index rank_of(const Eigen::MatrixXd& x) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    qr.setThreshold(1e-10);
    return qr.rank();
}

}  // namespace

GapPanel build_gap_panel(const std::vector<UnitGaps>& series, int lags) {
    if (lags < 0) throw std::invalid_argument("build_gap_panel: lags must be >= 0");
    GapPanel p;
    p.lags = lags;
    std::vector<double> gap;
    std::vector<std::vector<double>> lag_rows;
    for (const auto& s : series) {
        const auto n = static_cast<int>(s.periods.size());
        if (s.gap.size() != n) throw std::invalid_argument("build_gap_panel: gap length mismatch for '" + s.unit_id + "'");
        if (n < lags + 2) {
            p.warnings.push_back("unit '" + s.unit_id + "' has " + std::to_string(n) + " periods, fewer than lags + 2; dropped");
            continue;
        }
        const auto u = p.units.size();
        p.units.push_back(s.unit_id);
        p.unit_treated.push_back(s.treated);
        for (int t = lags; t < n; ++t) {
            p.unit.push_back(u);
            p.period.push_back(s.periods[static_cast<std::size_t>(t)]);
            p.post.push_back(s.periods[static_cast<std::size_t>(t)] >= s.treatment_period);
            gap.push_back(s.gap[t]);
            std::vector<double> row;
            for (int l = 1; l <= lags; ++l) row.push_back(s.gap[t - l]);
            lag_rows.push_back(std::move(row));
        }
    }
    p.gap = Eigen::Map<Eigen::VectorXd>(gap.data(), static_cast<Eigen::Index>(gap.size()));
    p.lag_values.resize(static_cast<Eigen::Index>(lag_rows.size()), lags);
    for (std::size_t r = 0; r < lag_rows.size(); ++r)
        for (int l = 0; l < lags; ++l) p.lag_values(static_cast<Eigen::Index>(r), l) = lag_rows[r][static_cast<std::size_t>(l)];
    return p;
}

GapPanel build_gap_panel(const PlaceboDistribution& dist, int lags) {
    if (!dist.treated.fit) throw InferenceError("treated fit missing");
    std::vector<UnitGaps> series;
    const auto& tf = *dist.treated.fit;
    series.push_back({dist.treated.unit_id, tf.periods, tf.gap, true, tf.treatment_period});
    for (const auto& d : dist.donors)
        if (d.retained()) series.push_back({d.unit_id, d.fit->periods, d.fit->gap, false, d.fit->treatment_period});
    if (series.size() < 2) throw InferenceError("gap panel needs at least 2 units");
    return build_gap_panel(series, lags);
}

DidResult did_regress(const GapPanel& panel) {
    const auto l = layout(panel);
    const auto n = panel.rows();
    const auto g = static_cast<Eigen::Index>(l.units);
    const auto nt = static_cast<Eigen::Index>(l.periods.size());
    if (g < 2 || nt < 3) throw RegressionError("DiD panel needs at least 2 units and 3 periods");
    const auto nl = static_cast<Eigen::Index>(panel.lags);

    Eigen::MatrixXd unit_fe = Eigen::MatrixXd::Zero(n, g);
    Eigen::MatrixXd time_fe = Eigen::MatrixXd::Zero(n, nt - 1);
    for (Eigen::Index r = 0; r < n; ++r) {
        const auto i = static_cast<std::size_t>(r);
        unit_fe(r, static_cast<Eigen::Index>(panel.unit[i])) = 1.0;
        if (l.time_index[i] > 0) time_fe(r, static_cast<Eigen::Index>(l.time_index[i]) - 1) = 1.0;
    }
    const Eigen::VectorXd d = interaction(panel);

    // Add blocks one at a time so a rank drop can be attributed.
    const std::vector<std::pair<const char*, Eigen::MatrixXd>> blocks{
        {"unit fixed effects", unit_fe}, {"time fixed effects", time_fe}, {"treatment interaction", d}, {"lagged gaps", panel.lag_values}};
    Eigen::MatrixXd cumulative(n, 0);
    for (const auto& [name, block] : blocks) {
        if (block.cols() == 0) continue;
        Eigen::MatrixXd next(n, cumulative.cols() + block.cols());
        next << cumulative, block;
        if (rank_of(next) < next.cols()) throw RegressionError(std::string("collinear DiD design: ") + name + " block");
        cumulative = std::move(next);
    }

    const auto k = 1 + nl + g + nt - 1;
    if (n <= k) throw RegressionError("DiD design has no residual degrees of freedom");
    Eigen::MatrixXd x(n, k);
    x << d, panel.lag_values, unit_fe, time_fe;
    const auto fit = stats::ols(x, panel.gap);
    if (!fit.full_rank) throw RegressionError("collinear DiD design");

    Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k, k);
    std::vector<Eigen::VectorXd> score(l.units, Eigen::VectorXd::Zero(k));
    for (Eigen::Index r = 0; r < n; ++r)
        score[panel.unit[static_cast<std::size_t>(r)]] += x.row(r).transpose() * fit.residuals[r];
    for (const auto& s : score) meat += s * s.transpose();
    const double dn = static_cast<double>(n), dg = static_cast<double>(g), dk = static_cast<double>(k);
    const double c = dg / (dg - 1.0) * (dn - 1.0) / (dn - dk);
    const Eigen::MatrixXd v = c * fit.xtx_inv * meat * fit.xtx_inv;

    DidResult out;
    out.effect = fit.coef[0];
    out.clustered_se = std::sqrt(v(0, 0));
    out.ci95 = {out.effect - 1.96 * out.clustered_se, out.effect + 1.96 * out.clustered_se};
    out.lag_coef = fit.coef.segment(1, nl);
    out.clusters = l.units;
    out.observations = n;
    out.parameters = k;

    const double dof = dn - dk;
    {
        Eigen::MatrixXd xr(n, 1 + nl + 1 + nt - 1);
        xr << d, panel.lag_values, Eigen::VectorXd::Ones(n), time_fe;
        const double rss_r = stats::ols(xr, panel.gap).rss;
        out.fe_unit_pvalue = stats::f_sf(((rss_r - fit.rss) / (dg - 1.0)) / (fit.rss / dof), dg - 1.0, dof);
    }
    {
        Eigen::MatrixXd xr(n, 1 + nl + g);
        xr << d, panel.lag_values, unit_fe;
        const double rss_r = stats::ols(xr, panel.gap).rss;
        const double q = static_cast<double>(nt - 1);
        out.fe_time_pvalue = stats::f_sf(((rss_r - fit.rss) / q) / (fit.rss / dof), q, dof);
    }

    // Stata-style R^2 family; xb excludes the unit effects.
    Eigen::VectorXd xb = x.leftCols(1 + nl) * fit.coef.head(1 + nl) + time_fe * fit.coef.tail(nt - 1);
    Eigen::VectorXd ybar = Eigen::VectorXd::Zero(g), xbar = Eigen::VectorXd::Zero(g), cnt = Eigen::VectorXd::Zero(g);
    for (Eigen::Index r = 0; r < n; ++r) {
        const auto u = static_cast<Eigen::Index>(panel.unit[static_cast<std::size_t>(r)]);
        ybar[u] += panel.gap[r];
        xbar[u] += xb[r];
        cnt[u] += 1.0;
    }
    ybar = ybar.cwiseQuotient(cnt);
    xbar = xbar.cwiseQuotient(cnt);
    double tss_within = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) {
        const double dev = panel.gap[r] - ybar[static_cast<Eigen::Index>(panel.unit[static_cast<std::size_t>(r)])];
        tss_within += dev * dev;
    }
    out.r2_within = tss_within > 0.0 ? 1.0 - fit.rss / tss_within : 0.0;
    const double rb = stats::pearson(std::span<const double>(ybar.data(), ybar.size()), std::span<const double>(xbar.data(), xbar.size()));
    const double ro = stats::pearson(std::span<const double>(panel.gap.data(), n), std::span<const double>(xb.data(), n));
    out.r2_between = rb * rb;
    out.r2_overall = ro * ro;
    return out;
}

Eigen::VectorXd did_within_coefficients(const GapPanel& panel) {
    const auto l = layout(panel);
    const auto n = panel.rows();
    const auto nl = static_cast<Eigen::Index>(panel.lags);
    Eigen::MatrixXd m(n, 2 + nl);
    m << panel.gap, interaction(panel), panel.lag_values;

    auto demean = [&](const auto& group, std::size_t groups) {
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(groups), m.cols());
        Eigen::VectorXd counts = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(groups));
        for (Eigen::Index r = 0; r < n; ++r) {
            const auto gi = static_cast<Eigen::Index>(group[static_cast<std::size_t>(r)]);
            sums.row(gi) += m.row(r);
            counts[gi] += 1.0;
        }
        double change = 0.0;
        for (Eigen::Index r = 0; r < n; ++r) {
            const auto gi = static_cast<Eigen::Index>(group[static_cast<std::size_t>(r)]);
            const Eigen::RowVectorXd mean = sums.row(gi) / counts[gi];
            change = std::max(change, mean.cwiseAbs().maxCoeff());
            m.row(r) -= mean;
        }
        return change;
    };
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    for (int it = 0; it < 10000; ++it) {
        const double a = demean(panel.unit, l.units);
        const double b = demean(l.time_index, l.periods.size());
        if (std::max(a, b) <= 1e-15 * scale) break;
    }
    const auto fit = stats::ols(m.rightCols(1 + nl), m.col(0));
    if (!fit.full_rank) throw RegressionError("collinear within-transformed DiD design");
    return fit.coef;
}

DidSubsample did_subsample(const PlaceboDistribution& dist, int lags, int draws, int subset_size, std::uint64_t seed) {
    if (draws < 1) throw std::invalid_argument("did_subsample: draws must be >= 1");
    std::vector<const PlaceboRecord*> pool;
    for (const auto& d : dist.donors)
        if (d.retained()) pool.push_back(&d);
    if (subset_size < 1 || static_cast<std::size_t>(subset_size) > pool.size())
        throw std::invalid_argument("did_subsample: subset size must be in [1, retained donors]");
    const auto& tf = *dist.treated.fit;
    DidSubsample out;
    int rejections = 0;
    for (int k = 0; k < draws; ++k) {
        KeyedRng rng(seed, {kDidStream, static_cast<std::uint64_t>(k)});
        std::vector<std::size_t> idx(pool.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        for (std::size_t i = 0; i < static_cast<std::size_t>(subset_size); ++i) {
            const auto j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
            std::swap(idx[i], idx[j]);
        }
        std::sort(idx.begin(), idx.begin() + subset_size);
        std::vector<UnitGaps> series{{dist.treated.unit_id, tf.periods, tf.gap, true, tf.treatment_period}};
        for (int i = 0; i < subset_size; ++i) {
            const auto* d = pool[idx[static_cast<std::size_t>(i)]];
            series.push_back({d->unit_id, d->fit->periods, d->fit->gap, false, d->fit->treatment_period});
        }
        const auto r = did_regress(build_gap_panel(series, lags));
        out.effects.push_back(r.effect);
        if (r.ci95.first > 0.0 || r.ci95.second < 0.0) ++rejections;
    }
    out.mean_effect = stats::mean(out.effects);
    out.sd_effect = out.effects.size() > 1 ? stats::sample_sd(out.effects) : 0.0;
    out.rejection_share = static_cast<double>(rejections) / draws;
    return out;
}

}  // namespace scm
