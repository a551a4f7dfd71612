#include "scm/scm.hpp"

#include "scm/errors.hpp"
#include "scm/rng.hpp"
#include "scm/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace scm {

namespace {

constexpr std::uint64_t kCandidateStream = 0x7663616e64ULL;  // "vcand"
constexpr std::uint64_t kCvStream = 0x6376ULL;               // "cv"

void check_v(const DesignMatrices& design, const PredictorWeights& v) {
    if (v.v.size() != design.predictors())
        throw std::invalid_argument("predictor weights have length " + std::to_string(v.v.size()) + ", expected " +
                                    std::to_string(design.predictors()));
    if ((v.v.array() < 0.0).any() || !v.v.allFinite())
        throw std::invalid_argument("predictor weights must be finite and non-negative");
}

WeightVector solve_weights(const DesignMatrices& design, const PredictorWeights& v, const QpSettings& settings) {
    return solve_simplex_qp(weight_problem(design, v, settings));
}

}  // namespace

const char* to_string(VMethod m) {
    switch (m) {
        case VMethod::RegressionBased: return "regression";
        case VMethod::CrossValidated: return "cross-validated";
        case VMethod::Uniform: return "uniform";
        case VMethod::NestedSearch: return "nested";
    }
    return "unknown";
}

PredictorWeights uniform_v(Eigen::Index k) {
    if (k < 1) throw std::invalid_argument("uniform_v: k must be positive");
    return {Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k)), VMethod::Uniform, {}};
}

PredictorWeights regression_v(const DesignMatrices& design) {
    const auto k = design.predictors();
    const auto j = design.donors();
    const auto n = j + 1;

    // Constant predictor rows carry no information and get zero weight.
    std::vector<Eigen::Index> active;
    for (Eigen::Index r = 0; r < k; ++r) {
        const double lo = std::min(design.x1[r], design.x0.row(r).minCoeff());
        const double hi = std::max(design.x1[r], design.x0.row(r).maxCoeff());
        if (hi > lo) active.push_back(r);
    }
    const auto p = static_cast<Eigen::Index>(active.size());
    auto fallback = [&](const std::string& why) {
        auto u = uniform_v(k);
        u.note = "regression-based V unavailable (" + why + "); using uniform weights";
        return u;
    };
    if (p == 0) return fallback("all predictors constant");
    if (n <= p + 1) return fallback("too few units for " + std::to_string(p) + " predictors");

    // Each row is a unit: intercept, standardized predictors; target is the
    // unit's mean pre-period outcome.
    Eigen::MatrixXd x(n, p + 1);
    Eigen::VectorXd y(n);
    x.col(0).setOnes();
    for (Eigen::Index c = 0; c < p; ++c) {
        const auto r = active[static_cast<std::size_t>(c)];
        Eigen::VectorXd col(n);
        col[0] = design.x1[r];
        col.tail(j) = design.x0.row(r).transpose();
        const double m = col.mean();
        const double sd = std::sqrt((col.array() - m).square().mean());
        x.col(c + 1) = (col.array() - m) / sd;
    }
    y[0] = design.q1.mean();
    y.tail(j) = design.q0.colwise().mean().transpose();

    const auto ols = stats::ols(x, y);
    if (!ols.full_rank) return fallback("rank-deficient predictor regression");
    Eigen::VectorXd v = Eigen::VectorXd::Zero(k);
    for (Eigen::Index c = 0; c < p; ++c) v[active[static_cast<std::size_t>(c)]] = std::abs(ols.coef[c + 1]);
    const double total = v.sum();
    if (!(total > 0.0) || !std::isfinite(total)) return fallback("all predictor coefficients are zero");
    return {v / total, VMethod::RegressionBased, {}};
}

SimplexQp weight_problem(const DesignMatrices& design, const PredictorWeights& v, const QpSettings& settings) {
    check_v(design, v);
    const Eigen::VectorXd root = v.v.cwiseSqrt();
    SimplexQp qp;
    qp.a = root.asDiagonal() * design.x0;
    qp.b = root.cwiseProduct(design.x1);
    qp.settings = settings;
    return qp;
}

double outcome_loss(const DesignMatrices& design, const Eigen::VectorXd& w) {
    if (w.size() != design.donors()) throw std::invalid_argument("outcome_loss: weight length mismatch");
    const Eigen::VectorXd r = design.q1 - design.q0 * w;
    return r.squaredNorm() / static_cast<double>(r.size());
}

std::vector<PredictorWeights> v_candidates(const DesignMatrices& standardized, int dirichlet_draws,
                                           std::uint64_t seed) {
    if (dirichlet_draws < 0) throw std::invalid_argument("v_candidates: negative draw count");
    const auto k = standardized.predictors();
    std::vector<PredictorWeights> out;
    out.reserve(static_cast<std::size_t>(dirichlet_draws) + 2);
    out.push_back(regression_v(standardized));
    out.push_back(uniform_v(k));
    for (int i = 0; i < dirichlet_draws; ++i) {
        KeyedRng rng(seed, {kCandidateStream, static_cast<std::uint64_t>(i)});
        Eigen::VectorXd v(k);
        for (Eigen::Index r = 0; r < k; ++r) v[r] = rng.exponential();
        out.push_back({v / v.sum(), VMethod::NestedSearch, "dirichlet draw " + std::to_string(i)});
    }
    return out;
}

VSelection select_v_nested(const DesignMatrices& standardized, const std::vector<PredictorWeights>& candidates,
                           const QpSettings& settings) {
    if (candidates.empty()) throw std::invalid_argument("select_v_nested: no candidates");
    VSelection best;
    double best_loss = std::numeric_limits<double>::infinity();
    best.losses.reserve(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        auto w = solve_weights(standardized, candidates[i], settings);
        const double loss = outcome_loss(standardized, w.w);
        best.losses.push_back(loss);
        if (loss < best_loss || i == 0) {
            best_loss = loss;
            best.index = i;
            best.v = candidates[i];
            best.w = std::move(w);
        }
    }
    return best;
}

int default_training_end(const PanelDataset& dataset, const StudySpec& spec) {
    const int cutoff = effective_cutoff(spec);
    std::vector<int> pre;
    for (int p : dataset.periods())
        if (p < cutoff) pre.push_back(p);
    if (pre.size() < 4) throw SpecError("pre-period too short for a training/validation split");
    return pre[pre.size() / 2 - 1];
}

CvResult cross_validate_v(const PanelDataset& dataset, const StudySpec& spec, const CvSplit& split) {
    validate_spec(dataset, spec);
    const int cutoff = effective_cutoff(spec);
    std::vector<int> training, validation;
    for (int p : dataset.periods()) {
        if (p >= cutoff) break;
        (p <= split.training_end ? training : validation).push_back(p);
    }
    if (training.size() < 2)
        throw SpecError("training window ending " + std::to_string(split.training_end) + " has fewer than 2 periods");
    if (validation.size() < 2)
        throw SpecError("validation window after " + std::to_string(split.training_end) +
                        " has fewer than 2 periods");

    const int train_cutoff = validation.front();
    const auto design = build_shifted_design(dataset, spec, train_cutoff, cutoff - train_cutoff);
    const auto sd = standardize_predictors(design);

    const bool defaults = split.candidates.empty();
    const auto candidates =
        defaults ? v_candidates(sd.design, spec.v_candidates, splitmix64_mix(spec.seed ^ kCvStream)) : split.candidates;

    // Validation rows of the full path matrix.
    const auto first = static_cast<Eigen::Index>(training.size());
    const auto len = static_cast<Eigen::Index>(validation.size());
    const Eigen::VectorXd y1 = design.paths.col(0).segment(first, len);
    const Eigen::MatrixXd y0 = design.paths.block(first, 1, len, design.donors());

    CvResult out;
    out.training_end = split.training_end;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto w = solve_weights(sd.design, candidates[i], QpSettings{});
        const double loss = (y1 - y0 * w.w).squaredNorm() / static_cast<double>(len);
        out.validation_losses.push_back(loss);
        if (loss < best || i == 0) {
            best = loss;
            out.best_index = i;
        }
    }
    out.weights = candidates[out.best_index];
    if (defaults) {
        out.weights.method = VMethod::CrossValidated;
        out.weights.note.clear();
    }
    return out;
}

ScmFit make_fit(const DesignMatrices& design, StandardizedDesign standardized, PredictorWeights v, WeightVector w) {
    if (w.w.size() != design.donors()) throw std::invalid_argument("make_fit: weight length mismatch");
    ScmFit f;
    f.observed = design.paths.col(0);
    f.counterfactual = design.paths.rightCols(design.donors()) * w.w;
    f.gap = f.observed - f.counterfactual;
    f.donor_ids = design.donor_ids;
    f.periods = design.periods;
    f.treatment_period = design.treatment_period;
    f.design = design;
    f.warnings = standardized.warnings;
    f.standardized = std::move(standardized);
    f.vweights = std::move(v);
    f.weights = std::move(w);
    if (!f.vweights.note.empty() && f.vweights.method != VMethod::NestedSearch)
        f.warnings.push_back(f.vweights.note);
    if (!f.weights.converged) f.warnings.push_back("donor-weight solver did not converge");
    const auto series = f.gap_series();
    f.pre_rmse = rmse(series, Window::pre());
    f.post_rmse = rmse(series, Window::post());
    return f;
}

ScmFit fit_design(const DesignMatrices& design, const FitSettings& settings) {
    auto sd = standardize_predictors(design);
    PredictorWeights v;
    WeightVector w;
    if (settings.fixed_v) {
        v = *settings.fixed_v;
        w = solve_weights(sd.design, v, settings.qp);
    } else if (settings.nested) {
        auto candidates = v_candidates(sd.design, settings.v_candidates, settings.seed);
        if (settings.extra_candidate) candidates.push_back(*settings.extra_candidate);
        auto sel = select_v_nested(sd.design, candidates, settings.qp);
        v = sel.v;
        const char* source = to_string(sel.v.method);
        v.note = "selected " + (sel.v.method == VMethod::NestedSearch ? sel.v.note : std::string(source)) +
                 " candidate " + std::to_string(sel.index) + " of " + std::to_string(candidates.size());
        v.method = VMethod::NestedSearch;
        w = std::move(sel.w);
    } else {
        v = regression_v(sd.design);
        w = solve_weights(sd.design, v, settings.qp);
    }
    return make_fit(design, std::move(sd), std::move(v), std::move(w));
}

ScmFit fit(const PanelDataset& dataset, const StudySpec& spec, const QpSettings& qp) {
    const auto design = build_design(dataset, spec);
    FitSettings settings;
    settings.nested = spec.nested_optimization;
    settings.v_candidates = spec.v_candidates;
    settings.seed = spec.seed;
    settings.qp = qp;
    std::vector<std::string> notes;
    if (spec.nested_optimization) {
        std::optional<int> training_end = spec.training_end;
        if (!training_end) {
            try {
                training_end = default_training_end(dataset, spec);
            } catch (const SpecError&) {
                notes.push_back("pre-period too short for cross-validated V; in-sample candidates only");
            }
        }
        if (training_end) {
            if (spec.training_end) {
                settings.extra_candidate = cross_validate_v(dataset, spec, {*training_end, {}}).weights;
            } else {
                try {
                    settings.extra_candidate = cross_validate_v(dataset, spec, {*training_end, {}}).weights;
                } catch (const SpecError& e) {
                    notes.push_back(std::string("cross-validated V skipped: ") + e.what());
                }
            }
        }
    }
    auto f = fit_design(design, settings);
    f.spec = spec;
    f.warnings.insert(f.warnings.end(), notes.begin(), notes.end());
    return f;
}

double rmse(const GapSeries& series, const Window& window) {
    if (series.gap.size() != static_cast<Eigen::Index>(series.periods.size()))
        throw std::invalid_argument("rmse: gap and period lengths differ");
    double ss = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < series.periods.size(); ++i) {
        const int p = series.periods[i];
        bool in = false;
        switch (window.kind) {
            case Window::Kind::Pre: in = p < series.treatment_period; break;
            case Window::Kind::Post: in = p >= series.treatment_period; break;
            case Window::Kind::Custom: in = p >= window.first && p <= window.last; break;
        }
        if (!in) continue;
        const double g = series.gap[static_cast<Eigen::Index>(i)];
        ss += g * g;
        ++n;
    }
    if (n == 0) throw std::invalid_argument("rmse: window contains no periods");
    return std::sqrt(ss / n);
}

}  // namespace scm
