#include "scm/inference.hpp"

#include "scm/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

namespace scm {

std::size_t PlaceboDistribution::retained_count() const {
    return 1 + static_cast<std::size_t>(
                   std::count_if(donors.begin(), donors.end(), [](const PlaceboRecord& r) { return r.retained(); }));
}

double rmspe_ratio(const ScmFit& fit) {
    if (fit.pre_rmse == 0.0) return std::numeric_limits<double>::infinity();
    return fit.post_rmse / fit.pre_rmse;
}

PlaceboRecord make_record(std::string unit_id, ScmFit fit) {
    PlaceboRecord r;
    r.unit_id = std::move(unit_id);
    r.pre_rmspe = fit.pre_rmse;
    r.post_rmspe = fit.post_rmse;
    r.ratio = rmspe_ratio(fit);
    r.infinite_ratio = std::isinf(r.ratio);
    r.fit = std::move(fit);
    return r;
}

double overall_pvalue(const PlaceboDistribution& dist) {
    if (!dist.treated.fit) throw InferenceError("treated fit missing");
    std::size_t at_least = 1;
    for (const auto& d : dist.donors)
        if (d.retained() && d.ratio >= dist.treated.ratio) ++at_least;
    return static_cast<double>(at_least) / static_cast<double>(dist.retained_count());
}

std::size_t treated_ratio_rank(const PlaceboDistribution& dist) {
    std::size_t above = 0;
    for (const auto& d : dist.donors)
        if (d.retained() && d.ratio > dist.treated.ratio) ++above;
    return above + 1;
}

std::map<int, double> per_period_pvalues(const PlaceboDistribution& dist) {
    if (!dist.treated.fit) throw InferenceError("treated fit missing");
    const auto& tf = *dist.treated.fit;
    std::map<int, double> out;
    const auto n = static_cast<double>(dist.retained_count());
    for (std::size_t i = 0; i < tf.periods.size(); ++i) {
        const int p = tf.periods[i];
        if (p < tf.treatment_period) continue;
        const double ref = std::abs(tf.gap[static_cast<Eigen::Index>(i)]);
        std::size_t count = 1;
        for (const auto& d : dist.donors) {
            if (!d.retained()) continue;
            if (std::abs(d.fit->gap[static_cast<Eigen::Index>(i)]) >= ref) ++count;
        }
        out[p] = static_cast<double>(count) / n;
    }
    return out;
}

PlaceboDistribution prefit_filter(PlaceboDistribution dist, double multiple) {
    if (!(multiple > 0.0)) throw std::invalid_argument("prefit_filter: multiple must be positive");
    const double limit = multiple * dist.treated.pre_rmspe;
    bool any = false;
    for (auto& d : dist.donors) {
        d.excluded = !d.failed && (std::isinf(multiple) ? false : d.pre_rmspe > limit);
        any = any || d.retained();
    }
    if (!any) throw InferenceError("every placebo donor was excluded; p-value undefined");
    dist.filter_multiple = multiple;
    dist.overall_pvalue = overall_pvalue(dist);
    dist.per_period_pvalues = per_period_pvalues(dist);
    return dist;
}

PlaceboDistribution in_space_placebo(const PanelDataset& dataset, const StudySpec& spec,
                                     const PlaceboOptions& options) {
    validate_spec(dataset, spec);
    const auto donors = donor_pool(dataset, spec);

    PlaceboDistribution dist;
    dist.treated = make_record(spec.treated_unit, fit(dataset, spec, options.qp));

    std::vector<PlaceboRecord> records(donors.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < donors.size(); i = next++) {
            StudySpec s = spec;
            s.treated_unit = donors[i];
            try {
                records[i] = make_record(donors[i], fit(dataset, s, options.qp));
            } catch (const std::exception& e) {
                records[i].unit_id = donors[i];
                records[i].failed = true;
                records[i].failure = e.what();
            }
        }
    };
    const auto n_threads = static_cast<std::size_t>(std::max(1, options.threads));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < std::min(n_threads, donors.size()); ++t) pool.emplace_back(worker);
    }
    std::sort(records.begin(), records.end(),
              [](const PlaceboRecord& a, const PlaceboRecord& b) { return a.unit_id < b.unit_id; });
    dist.donors = std::move(records);
    if (std::none_of(dist.donors.begin(), dist.donors.end(), [](const PlaceboRecord& r) { return !r.failed; }))
        throw InferenceError("every placebo fit failed");
    return prefit_filter(std::move(dist), options.filter_multiple);
}

StudySpec restrict_spec_before(const StudySpec& spec, int cutoff) {
    StudySpec s = spec;
    s.fit_cutoff = cutoff;
    s.training_end.reset();
    if (auto* b = std::get_if<BenchmarkYears>(&s.predictors))
        std::erase_if(b->years, [&](int y) { return y >= cutoff; });
    for (auto& c : s.covariates) {
        if (!c.window) continue;
        if (c.window->first >= cutoff) c.window.reset();
        else c.window->last = std::min(c.window->last, cutoff - 1);
    }
    return s;
}

ScmFit in_time_placebo(const PanelDataset& dataset, const StudySpec& spec, int false_t0, int fit_end) {
    validate_spec(dataset, spec);
    const int t0 = spec.treatment_period;
    if (false_t0 == t0) throw SpecError("false treatment period equals the true one");
    if (fit_end < false_t0) throw SpecError("fit_end precedes the false treatment period");

    StudySpec s = spec;
    s.treatment_period = false_t0;
    s.training_end.reset();
    if (false_t0 < t0) {
        if (fit_end >= t0) throw SpecError("backdated placebo window must end before the true treatment period");
        s = restrict_spec_before(s, false_t0);
        s.fit_cutoff.reset();
    } else {
        s.fit_cutoff = effective_cutoff(spec);
    }
    const auto data = dataset.truncated(fit_end);
    std::size_t pre = 0;
    for (int p : data.periods())
        if (p < effective_cutoff(s)) ++pre;
    if (pre < 2) throw SpecError("in-time placebo fitting window has fewer than 2 periods");
    return fit(data, s);
}

ExtendedPaths extend_paths(const ScmFit& fit, const PanelDataset& dataset) {
    const auto treated = dataset.find_unit(fit.design.treated_id);
    const auto outcome = dataset.find_variable(fit.spec.outcome);
    if (!treated || !outcome) throw std::invalid_argument("extend_paths: dataset does not match the fit");
    ExtendedPaths out;
    out.periods = dataset.periods();
    out.observed = dataset.series(*treated, *outcome);
    out.counterfactual = Eigen::VectorXd::Zero(out.observed.size());
    for (std::size_t j = 0; j < fit.donor_ids.size(); ++j) {
        const auto u = dataset.find_unit(fit.donor_ids[j]);
        if (!u) throw std::invalid_argument("extend_paths: donor '" + fit.donor_ids[j] + "' missing");
        out.counterfactual += fit.weights.w[static_cast<Eigen::Index>(j)] * dataset.series(*u, *outcome);
    }
    return out;
}

}  // namespace scm
