#include "scm/report.hpp"

#include "scm/dgp.hpp"
#include "scm/elastic_net.hpp"
#include "scm/errors.hpp"
#include "scm/stats.hpp"
#include "scm/svg.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <Eigen/Core>
#include <boost/version.hpp>

namespace scm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Comma-separated table with a header row; fields containing commas or
/// quotes are quoted.
class Csv {
public:
    explicit Csv(const std::vector<std::string>& header) { row(header); }

    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            const auto& c = cells[i];
            if (c.find_first_of(",\"\n") != std::string::npos) {
                out_ << '"';
                for (char ch : c) out_ << (ch == '"' ? "\"\"" : std::string(1, ch));
                out_ << '"';
            } else {
                out_ << c;
            }
        }
        out_ << '\n';
    }

    std::string str() const { return out_.str(); }

private:
    std::ostringstream out_;
};

std::string num(double v) { return format_number(v); }
std::string num(const std::optional<double>& v) { return v ? format_number(*v) : ""; }

/// Fixed decimals for the markdown report.
std::string fixed(double v, int digits = 3) {
    if (!std::isfinite(v)) return format_number(v);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    std::string s = buf;
    if (s.find_first_not_of("-0.") == std::string::npos && s[0] == '-') s.erase(0, 1);
    return s;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::string display_name(const ReportBundle& b, const std::string& id) {
    const auto it = b.unit_names.find(id);
    return it == b.unit_names.end() || it->second.empty() ? id : it->second;
}

std::vector<double> as_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

std::vector<double> as_x(const std::vector<int>& periods) { return {periods.begin(), periods.end()}; }

double mean_abs(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().mean() : 0.0; }

StudySpec normalized(StudySpec s) {
    s.nested_optimization = true;
    return s;
}

// Printed reference values -------------------------------------------------

struct Target {
    const char* table;
    const char* quantity;
    double value;
    double tolerance;
};

/// Per-outcome reference values in replication_outcomes() order.
struct OutcomeTargets {
    std::array<double, 6> performance;  // rmse nested, rmse unnested, improvement %, bias w/o, bias with, reduction %
    std::vector<std::pair<const char*, double>> weights;
    std::array<double, 2> did;  // effect, se
    std::array<double, 4> chow_wald;  // wald F, wald p, chow F, chow p
    std::array<double, 4> gh;  // regime Zt, regime break, trend Zt, trend break
    std::array<double, 4> lasso;  // att, se, post rmse, pre rmse
    std::vector<std::pair<const char*, double>> lasso_weights;
};

const std::vector<OutcomeTargets>& printed_values() {
    static const std::vector<OutcomeTargets> v{
        {{0.288, 0.326, 12, 0.58, 0.07, 88},
         {{"Cyprus", 0.19}, {"Jordan", 0.15}, {"Malta", 0.06}, {"Mauritania", 0.26}, {"West Bank", 0.33}},
         {-0.679, 0.062},
         {4.18, 0.049, 5.62, 0.000},
         {-6.63, 2012, -6.46, 2010},
         {-2.620, 0.296, 2.804, 0.330},
         {{"Cyprus", 0.091}, {"Israel", -0.033}, {"Jordan", 1.175}, {"West Bank", 0.104}}},
        {{0.091, 0.155, 42, 0.42, 0.24, 43},
         {{"Cyprus", 0.60}, {"North Macedonia", 0.12}, {"Portugal", 0.28}},
         {-0.266, 0.062},
         {6.47, 0.016, 3.69, 0.016},
         {-8.32, 2011, -7.05, 2011},
         {-1.156, 0.069, 1.258, 0.094},
         {{"Cyprus", 0.229}, {"Mauritania", 0.227}}},
        {{0.282, 0.376, 25, 0.23, 0.20, 14},
         {{"Cyprus", 0.50}, {"Portugal", 0.26}, {"West Bank", 0.24}},
         {-0.423, 0.028},
         {5.29, 0.028, 5.64, 0.000},
         {-8.15, 2011, -6.93, 2011},
         {-2.129, 0.208, 2.573, 0.301},
         {{"Algeria", -0.421}, {"Cyprus", 0.036}, {"West Bank", 0.381}}},
        {{0.031, 0.041, 25, 0.24, 0.23, 3},
         {{"Albania", 0.09}, {"Cyprus", 0.75}, {"Portugal", 0.09}, {"West Bank", 0.06}},
         {-0.100, 0.006},
         {4.63, 0.045, 2.52, 0.064},
         {-7.40, 2011, -7.04, 2011},
         {-0.417, 0.048, 0.485, 0.039},
         {{"Algeria", -0.066}}},
        {{0.525, 0.603, 13, 0.27, 0.03, 88},
         {{"Italy", 0.20}, {"Mauritania", 0.04}, {"West Bank", 0.76}},
         {-0.923, 0.077},
         {4.21, 0.049, 5.62, 0.000},
         {-7.24, 2011, -6.59, 2012},
         {-1.974, 0.578, 2.260, 0.605},
         {{"Italy", 0.20}, {"Mauritania", 0.04}, {"West Bank", 0.76}}},
        {{0.374, 0.514, 27, 0.40, 0.13, 67},
         {{"Israel", 0.93}, {"North Macedonia", 0.07}},
         {-0.137, 0.014},
         {0.01, 0.906, 2.77, 0.047},
         {-11.13, 2013, -10.11, 2013},
         {-1.044, 0.221, 1.366, 0.221},
         {{"Cyprus", -0.850}, {"Jordan", 1.104}, {"Slovenia", 0.168}}},
    };
    return v;
}

std::optional<double> donor_weight(const ReportBundle& b, const std::vector<std::string>& ids, const Eigen::VectorXd& w,
                                   const std::string& name) {
    const auto key = lower(name);
    for (std::size_t j = 0; j < ids.size(); ++j)
        if (lower(ids[j]) == key || lower(display_name(b, ids[j])) == key) return w[static_cast<Eigen::Index>(j)];
    return std::nullopt;
}

const BreakTestResult* find_break(const ReportBundle& b, BreakTest t) {
    for (const auto& r : b.breaks)
        if (r.test == t) return &r;
    return nullptr;
}

// Figures ------------------------------------------------------------------

std::string counterfactual_figure(const ReportBundle& b) {
    const auto& f = b.fit;
    svg::LineChart c;
    c.title = "Observed vs synthetic: " + b.treated_name;
    c.x_label = "period";
    c.y_label = f.spec.outcome;
    c.series.push_back({b.treated_name, as_x(f.periods), as_vector(f.observed), "#000000", 2.0, false});
    c.series.push_back({"synthetic " + b.treated_name, as_x(f.periods), as_vector(f.counterfactual), "#1f77b4", 2.0, true});
    c.rules.push_back({static_cast<double>(f.treatment_period), "treatment"});
    return svg::render(c);
}

std::string gap_figure(const ReportBundle& b) {
    const auto& f = b.fit;
    svg::LineChart c;
    c.title = "Gap: " + b.treated_name + " minus synthetic";
    c.x_label = "period";
    c.y_label = "gap";
    c.zero_line = true;
    c.series.push_back({"gap", as_x(f.periods), as_vector(f.gap), "#000000", 2.0, false});
    c.rules.push_back({static_cast<double>(f.treatment_period), "treatment"});
    return svg::render(c);
}

const PlaceboDistribution& need_placebo(const ReportBundle& b, const std::string& figure) {
    if (!b.placebo_space) throw ReportError("figure '" + figure + "' needs the in-space placebo analysis");
    return *b.placebo_space;
}

std::string spaghetti_figure(const ReportBundle& b) {
    const auto& d = need_placebo(b, "placebo_spaghetti");
    svg::LineChart c;
    c.title = "Placebo gaps";
    c.x_label = "period";
    c.y_label = "gap";
    c.zero_line = true;
    c.legend = false;
    for (const auto& r : d.donors) {
        if (!r.retained()) continue;
        c.series.push_back({r.unit_id, as_x(r.fit->periods), as_vector(r.fit->gap), "#bbbbbb", 1.0, false});
    }
    c.series.push_back({b.treated_name, as_x(b.fit.periods), as_vector(d.treated.fit->gap), "#000000", 2.5, false});
    c.rules.push_back({static_cast<double>(b.fit.treatment_period), "treatment"});
    return svg::render(c);
}

std::string ratio_figure(const ReportBundle& b) {
    const auto& d = need_placebo(b, "placebo_ratios");
    svg::Histogram h;
    h.title = "Post/pre RMSPE ratios";
    h.x_label = "ratio";
    h.bins = 15;
    for (const auto& r : d.donors)
        if (r.retained()) h.values.push_back(r.ratio);
    h.values.push_back(d.treated.ratio);
    h.markers.push_back(d.treated.ratio);
    return svg::render(h);
}

std::string placebo_time_figure(const ReportBundle& b, int year) {
    for (const auto& run : b.placebo_time) {
        if (run.false_year != year) continue;
        svg::LineChart c;
        c.title = "In-time placebo at " + std::to_string(year);
        c.x_label = "period";
        c.y_label = b.fit.spec.outcome;
        c.series.push_back({b.treated_name, as_x(run.paths.periods), as_vector(run.paths.observed), "#000000", 2.0, false});
        c.series.push_back({"synthetic (placebo)", as_x(run.paths.periods), as_vector(run.paths.counterfactual), "#1f77b4", 2.0, true});
        c.rules.push_back({static_cast<double>(year), "placebo"});
        c.rules.push_back({static_cast<double>(b.fit.treatment_period), "treatment"});
        return svg::render(c);
    }
    throw ReportError("figure 'placebo_time_" + std::to_string(year) + "' needs an in-time placebo at that year");
}

std::string loo_figure(const ReportBundle& b) {
    if (!b.loo) throw ReportError("figure 'loo' needs the leave-one-out analysis");
    svg::LineChart c;
    c.title = "Leave-one-out synthetic paths";
    c.x_label = "period";
    c.y_label = b.fit.spec.outcome;
    for (const auto& r : b.loo->results)
        c.series.push_back({"without " + display_name(b, r.excluded_unit), as_x(r.refit.periods),
                            as_vector(r.refit.counterfactual), "#aaaaaa", 1.0, false});
    c.series.push_back({b.treated_name, as_x(b.fit.periods), as_vector(b.fit.observed), "#000000", 2.0, false});
    c.series.push_back({"synthetic (all donors)", as_x(b.fit.periods), as_vector(b.fit.counterfactual), "#1f77b4", 2.0, true});
    c.rules.push_back({static_cast<double>(b.fit.treatment_period), "treatment"});
    return svg::render(c);
}

std::string bias_figure(const ReportBundle& b) {
    if (!b.bias_correction) throw ReportError("figure 'bias_correction' needs the bias-correction analysis");
    svg::LineChart c;
    c.title = "Classic vs bias-corrected gap";
    c.x_label = "period";
    c.y_label = "gap";
    c.zero_line = true;
    c.series.push_back({"classic", as_x(b.fit.periods), as_vector(b.fit.gap), "#000000", 2.0, false});
    c.series.push_back({"bias-corrected", as_x(b.fit.periods), as_vector(b.bias_correction->gap), "#d62728", 2.0, true});
    c.rules.push_back({static_cast<double>(b.fit.treatment_period), "treatment"});
    return svg::render(c);
}

// Data loading -------------------------------------------------------------

struct LoadedData {
    PanelDataset dataset;
    std::string bytes;
    std::vector<std::string> warnings;
};

LoadedData load_data(const RunConfig& config) {
    LoadedData out;
    if (config.data.preset) {
        auto sc = dgp_preset(*config.data.preset);
        if (config.seed) sc.seed_root = *config.seed;
        out.dataset = generate_scenario(sc, config.data.draw);
        std::ostringstream text;
        write_panel(text, out.dataset);
        out.bytes = text.str();
        return out;
    }
    std::ifstream in(*config.data.path, std::ios::binary);
    if (!in) throw ConfigError("cannot open data file '" + config.data.path->string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    out.bytes = buf.str();
    std::istringstream text(out.bytes);
    auto loaded = load_panel(text, config.data.schema);
    out.dataset = std::move(loaded.dataset);
    for (const auto& u : loaded.report.dropped_units) out.warnings.push_back("dropped unbalanced unit '" + u + "'");
    for (int p : loaded.report.dropped_periods) out.warnings.push_back("dropped sparse period " + std::to_string(p));
    for (const auto& w : loaded.report.warnings) out.warnings.push_back(w);
    return out;
}

void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream f(p, std::ios::binary);
    f << content;
    f.close();
    if (!f) throw ReportError("cannot write '" + p.string() + "'");
}

std::vector<std::string> finish(const std::map<std::string, std::string>& files_in, const ManifestInputs& m,
                                const std::filesystem::path& out_dir) {
    auto files = files_in;
    files["manifest.json"] = render_manifest(m, files_in);
    write_atomically(out_dir, files);
    std::vector<std::string> names;
    for (const auto& [name, _] : files_in) names.push_back(name);
    names.push_back("manifest.json");
    return names;
}

}  // namespace

// Tables -------------------------------------------------------------------

std::vector<BalanceRow> balance_table(const ScmFit& fit) {
    const auto& d = fit.design;
    const Eigen::VectorXd synth = d.x0 * fit.weights.w;
    const Eigen::VectorXd mean = d.x0.rowwise().mean();
    std::vector<BalanceRow> rows;
    for (Eigen::Index k = 0; k < d.predictors(); ++k)
        rows.push_back({d.predictor_labels[static_cast<std::size_t>(k)], d.x1[k], synth[k], mean[k], fit.vweights.v[k]});
    return rows;
}

PerformanceRow performance_table(const ScmFit& nested, const ScmFit& unnested) {
    if (!(normalized(nested.spec) == normalized(unnested.spec)))
        throw std::invalid_argument("performance_table: fits differ beyond the nested-optimization flag");
    PerformanceRow r;
    r.rmse_nested = nested.pre_rmse;
    r.rmse_unnested = unnested.pre_rmse;
    r.improvement_pct = r.rmse_unnested > 0.0 ? 100.0 * (r.rmse_unnested - r.rmse_nested) / r.rmse_unnested
                        : r.rmse_nested == 0.0 ? 0.0
                                               : kNaN;
    const auto& sd = nested.standardized.design;
    r.bias_without_matching = mean_abs(sd.x1 - sd.x0.rowwise().mean());
    r.bias_with_matching = mean_abs(sd.x1 - sd.x0 * nested.weights.w);
    r.bias_reduction_pct =
        r.bias_without_matching > 0.0 ? 100.0 * (1.0 - r.bias_with_matching / r.bias_without_matching) : kNaN;
    r.donors = static_cast<int>(nested.donor_ids.size());
    r.predictors = static_cast<int>(sd.predictors());
    return r;
}

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (v == 0.0) return "0";
    std::array<char, 64> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

std::string sha256_hex(const std::string& bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
        throw ReportError("SHA-256 computation failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

RunConfig stage_config(const RunConfig& config, Stage stage) {
    RunConfig c = config;
    if (stage == Stage::Report) {
        if (c.did.enabled) c.placebo_space.enabled = true;
        return c;
    }
    c.placebo_space.enabled = stage == Stage::PlaceboSpace || stage == Stage::Did;
    c.placebo_time.enabled = stage == Stage::PlaceboTime;
    c.loo.enabled = stage == Stage::Loo;
    c.penalized.enabled = stage == Stage::Penalized;
    c.bias_correction.enabled = stage == Stage::Penalized && config.bias_correction.enabled;
    c.lasso.enabled = stage == Stage::Lasso;
    c.breaks.enabled = stage == Stage::Breaks;
    c.did.enabled = stage == Stage::Did;
    if (c.placebo_time.enabled && c.placebo_time.years.empty())
        throw ConfigError("placebo-time needs [placebo_time] years");
    return c;
}

ReportBundle analyze(const PanelDataset& dataset, const RunConfig& config) {
    ReportBundle b;
    const auto& spec = config.study;
    for (const auto& u : dataset.units()) b.unit_names[u.id] = u.name;
    b.treated_name = display_name(b, spec.treated_unit);

    b.fit = fit(dataset, spec);
    for (const auto& w : b.fit.warnings) b.warnings.push_back("fit: " + w);
    StudySpec plain = spec;
    plain.nested_optimization = false;
    b.unnested = fit(dataset, plain);

    if (config.placebo_space.enabled) {
        PlaceboOptions o;
        o.filter_multiple = config.placebo_space.filter_multiple;
        o.threads = config.threads;
        b.placebo_space = in_space_placebo(dataset, spec, o);
        for (const auto& r : b.placebo_space->donors)
            if (r.failed) b.warnings.push_back("placebo fit for '" + r.unit_id + "' failed: " + r.failure);
    }
    if (config.placebo_time.enabled) {
        for (int year : config.placebo_time.years) {
            PlaceboTimeRun run;
            run.false_year = year;
            run.fit_end = year < spec.treatment_period ? config.placebo_time.fit_end.value_or(spec.treatment_period - 1)
                                                        : dataset.periods().back();
            run.fit = in_time_placebo(dataset, spec, year, run.fit_end);
            run.paths = extend_paths(run.fit, dataset);
            b.placebo_time.push_back(std::move(run));
        }
    }
    if (config.loo.enabled) {
        b.loo = leave_one_out(dataset, spec, config.loo.mode);
        for (const auto& w : b.loo->warnings) b.warnings.push_back("loo: " + w);
    }
    if (config.penalized.enabled) {
        double lambda = 0.0;
        if (config.penalized.lambda) {
            lambda = *config.penalized.lambda;
        } else {
            b.penalty_choice = choose_penalty(dataset, spec, config.penalized.grid);
            lambda = b.penalty_choice->lambda;
        }
        b.penalized = penalized_fit(b.fit, lambda);
    }
    if (config.bias_correction.enabled) b.bias_correction = bias_correct(b.fit, config.bias_correction.alpha);
    if (config.lasso.enabled) {
        LassoOptions o;
        o.alpha = config.lasso.alpha;
        o.holdout = config.lasso.holdout;
        o.lambda_grid = config.lasso.grid;
        if (o.lambda_grid.empty()) {
            const auto d = build_design(dataset, spec);
            const double lmax = elastic_net_lambda_max(d.q0, d.q1, std::max(o.alpha, 1e-3));
            o.lambda_grid = log_lambda_grid(lmax > 0.0 ? lmax : 1.0, 1e-4, 30);
        }
        b.lasso = lasso_fit(dataset, spec, o);
    }
    if (config.breaks.enabled) {
        const auto& f = b.fit;
        const int brk = config.breaks.break_year.value_or(f.treatment_period);
        GhOptions gh;
        gh.trim = config.breaks.trim;
        gh.lag = config.breaks.lag;
        for (auto kind : config.breaks.tests) {
            try {
                switch (kind) {
                    case BreakTestKind::Wald:
                        b.breaks.push_back(wald_known_break(f.periods, f.gap, brk, config.breaks.covariance));
                        break;
                    case BreakTestKind::Chow: b.breaks.push_back(chow_test(f.periods, f.gap, brk)); break;
                    case BreakTestKind::GhLevel:
                        b.breaks.push_back(gregory_hansen(f.periods, f.observed, f.counterfactual, GhModel::Level, gh));
                        break;
                    case BreakTestKind::GhTrend:
                        b.breaks.push_back(gregory_hansen(f.periods, f.observed, f.counterfactual, GhModel::TrendShift, gh));
                        break;
                    case BreakTestKind::GhRegime:
                        b.breaks.push_back(gregory_hansen(f.periods, f.observed, f.counterfactual, GhModel::RegimeShift, gh));
                        break;
                    case BreakTestKind::Trend:
                        b.trend = differential_trend(f.periods, f.gap, brk, config.breaks.supremum, config.breaks.trim);
                        break;
                }
            } catch (const BreakTestError& e) {
                b.warnings.push_back(std::string("break test ") + to_string(kind) + " skipped: " + e.what());
            }
        }
    }
    if (config.did.enabled) {
        if (!b.placebo_space) throw ReportError("DiD needs the in-space placebo analysis");
        const auto panel = build_gap_panel(*b.placebo_space, config.did.lags);
        for (const auto& w : panel.warnings) b.warnings.push_back("did: " + w);
        b.did = did_regress(panel);
        if (config.did.subsample_draws > 0)
            b.did_subsample = did_subsample(*b.placebo_space, config.did.lags, config.did.subsample_draws,
                                            config.did.subsample_size, config.seed.value_or(0));
    }
    return b;
}

std::map<std::string, std::string> render_tables(const ReportBundle& b, const RunConfig& config) {
    std::map<std::string, std::string> files;
    const auto& f = b.fit;

    Csv weights({"unit", "name", "weight"});
    for (std::size_t j = 0; j < f.donor_ids.size(); ++j)
        weights.row({f.donor_ids[j], display_name(b, f.donor_ids[j]), num(f.weights.w[static_cast<Eigen::Index>(j)])});
    files["weights.csv"] = weights.str();

    Csv balance({"predictor", "treated", "synthetic", "donor_mean", "v_weight"});
    for (const auto& r : balance_table(f))
        balance.row({r.predictor, num(r.treated), num(r.synthetic), num(r.donor_mean), num(r.v_weight)});
    files["balance.csv"] = balance.str();

    Csv gaps({"period", "observed", "synthetic", "gap"});
    for (std::size_t i = 0; i < f.periods.size(); ++i) {
        const auto t = static_cast<Eigen::Index>(i);
        gaps.row({std::to_string(f.periods[i]), num(f.observed[t]), num(f.counterfactual[t]), num(f.gap[t])});
    }
    files["gaps.csv"] = gaps.str();

    std::optional<PerformanceRow> perf;
    if (b.unnested) {
        perf = performance_table(f, *b.unnested);
        Csv p({"measure", "value"});
        p.row({"rmse_nested", num(perf->rmse_nested)});
        p.row({"rmse_unnested", num(perf->rmse_unnested)});
        p.row({"improvement_pct", num(perf->improvement_pct)});
        p.row({"bias_without_matching", num(perf->bias_without_matching)});
        p.row({"bias_with_matching", num(perf->bias_with_matching)});
        p.row({"bias_reduction_pct", num(perf->bias_reduction_pct)});
        p.row({"control_units", std::to_string(perf->donors)});
        p.row({"predictors", std::to_string(perf->predictors)});
        p.row({"v_method", to_string(f.vweights.method)});
        files["performance.csv"] = p.str();
    }

    std::vector<std::pair<std::string, AttResult>> effects;
    effects.emplace_back("synthetic_control", att(f.gap_series(), b.placebo_space ? &*b.placebo_space : nullptr));

    if (b.placebo_space) {
        const auto& d = *b.placebo_space;
        Csv units({"unit", "role", "pre_rmspe", "post_rmspe", "ratio", "excluded", "failed"});
        auto add = [&](const PlaceboRecord& r, const char* role) {
            units.row({r.unit_id, role, num(r.pre_rmspe), num(r.post_rmspe), num(r.ratio), r.excluded ? "1" : "0",
                       r.failed ? "1" : "0"});
        };
        add(d.treated, "treated");
        for (const auto& r : d.donors) add(r, "placebo");
        files["placebo_space.csv"] = units.str();

        // Significance is flagged at both 10% and 15%.
        auto flag = [](double p, double level) { return p <= level ? "1" : "0"; };
        Csv pv({"period", "p_value", "significant_10", "significant_15"});
        for (const auto& [p, v] : d.per_period_pvalues)
            pv.row({std::to_string(p), num(v), flag(v, 0.10), flag(v, 0.15)});
        pv.row({"overall", num(d.overall_pvalue), flag(d.overall_pvalue, 0.10), flag(d.overall_pvalue, 0.15)});
        files["placebo_pvalues.csv"] = pv.str();

        std::vector<std::string> header{"period", d.treated.unit_id};
        std::vector<const PlaceboRecord*> kept;
        for (const auto& r : d.donors)
            if (r.fit) header.push_back(r.unit_id), kept.push_back(&r);
        Csv g(header);
        for (std::size_t i = 0; i < f.periods.size(); ++i) {
            const auto t = static_cast<Eigen::Index>(i);
            std::vector<std::string> row{std::to_string(f.periods[i]), num(d.treated.fit->gap[t])};
            for (const auto* r : kept) row.push_back(num(r->fit->gap[t]));
            g.row(row);
        }
        files["placebo_gaps.csv"] = g.str();
    }

    if (!b.placebo_time.empty()) {
        Csv t({"false_year", "fit_end", "period", "observed", "synthetic", "gap"});
        Csv s({"false_year", "fit_end", "pre_rmse", "post_rmse", "mean_post_gap"});
        for (const auto& run : b.placebo_time) {
            const auto& p = run.paths;
            for (std::size_t i = 0; i < p.periods.size(); ++i) {
                const auto k = static_cast<Eigen::Index>(i);
                t.row({std::to_string(run.false_year), std::to_string(run.fit_end), std::to_string(p.periods[i]),
                       num(p.observed[k]), num(p.counterfactual[k]), num(p.observed[k] - p.counterfactual[k])});
            }
            s.row({std::to_string(run.false_year), std::to_string(run.fit_end), num(run.fit.pre_rmse),
                   num(run.fit.post_rmse), num(att(run.fit.gap_series()).att)});
        }
        files["placebo_time.csv"] = t.str();
        files["placebo_time_summary.csv"] = s.str();
    }

    if (b.loo) {
        Csv l({"excluded_unit", "name", "baseline_gap_end", "loo_gap_end", "gap_correlation", "pre_rmse"});
        Csv w({"excluded_unit", "unit", "weight"});
        for (const auto& r : b.loo->results) {
            l.row({r.excluded_unit, display_name(b, r.excluded_unit), num(r.baseline_gap_end), num(r.loo_gap_end),
                   num(r.gap_correlation), num(r.refit.pre_rmse)});
            for (std::size_t j = 0; j < r.refit.donor_ids.size(); ++j)
                w.row({r.excluded_unit, r.refit.donor_ids[j], num(r.refit.weights.w[static_cast<Eigen::Index>(j)])});
        }
        files["loo.csv"] = l.str();
        files["loo_weights.csv"] = w.str();
    }

    if (b.penalized) {
        const auto& p = *b.penalized;
        Csv t({"unit", "name", "weight", "discrepancy"});
        for (std::size_t j = 0; j < p.base.donor_ids.size(); ++j) {
            const auto k = static_cast<Eigen::Index>(j);
            t.row({p.base.donor_ids[j], display_name(b, p.base.donor_ids[j]), num(p.base.weights.w[k]),
                   num(p.discrepancies[k])});
        }
        files["penalized_weights.csv"] = t.str();
        Csv s({"lambda", "holdout_mse", "chosen"});
        if (b.penalty_choice) {
            for (std::size_t i = 0; i < b.penalty_choice->grid.size(); ++i)
                s.row({num(b.penalty_choice->grid[i]), num(b.penalty_choice->holdout_mse[i]),
                       b.penalty_choice->grid[i] == p.lambda ? "1" : "0"});
        } else {
            s.row({num(p.lambda), "", "1"});
        }
        files["penalized.csv"] = s.str();
        effects.emplace_back("penalized", att(p.base.gap_series()));
    }

    if (b.bias_correction) {
        Csv t({"period", "classic_gap", "corrected_gap", "lambda"});
        for (std::size_t i = 0; i < f.periods.size(); ++i) {
            const auto k = static_cast<Eigen::Index>(i);
            t.row({std::to_string(f.periods[i]), num(f.gap[k]), num(b.bias_correction->gap[k]),
                   num(b.bias_correction->lambdas[i])});
        }
        files["bias_correction.csv"] = t.str();
        effects.emplace_back("bias_corrected", att(GapSeries{f.periods, b.bias_correction->gap, f.treatment_period}));
    }

    if (b.lasso) {
        const auto& l = *b.lasso;
        Csv w({"unit", "name", "weight"});
        w.row({"(intercept)", "", num(l.intercept)});
        for (std::size_t j = 0; j < l.donor_ids.size(); ++j)
            w.row({l.donor_ids[j], display_name(b, l.donor_ids[j]), num(l.weights[static_cast<Eigen::Index>(j)])});
        files["lasso_weights.csv"] = w.str();
        Csv p({"lambda", "holdout_mse", "nonzero", "chosen"});
        for (std::size_t i = 0; i < l.lambda_path.size(); ++i)
            p.row({num(l.lambda_path[i]), num(l.holdout_mse[i]), std::to_string(l.nonzero_counts[i]),
                   l.lambda_path[i] == l.chosen_lambda ? "1" : "0"});
        files["lasso_path.csv"] = p.str();
        Csv g({"period", "observed", "synthetic", "gap"});
        for (std::size_t i = 0; i < l.periods.size(); ++i) {
            const auto k = static_cast<Eigen::Index>(i);
            g.row({std::to_string(l.periods[i]), num(l.observed[k]), num(l.counterfactual[k]), num(l.gap[k])});
        }
        files["lasso_gaps.csv"] = g.str();
        effects.emplace_back("lasso", att(l.gap_series()));
    }

    {
        Csv a({"variant", "att", "se", "ci95_low", "ci95_high", "se_method", "post_periods", "pre_rmse", "post_rmse"});
        for (const auto& [name, r] : effects) {
            double pre = f.pre_rmse, post = f.post_rmse;
            if (name == "lasso") pre = b.lasso->pre_rmse, post = b.lasso->post_rmse;
            if (name == "penalized") pre = b.penalized->base.pre_rmse, post = b.penalized->base.post_rmse;
            if (name == "bias_corrected") {
                const GapSeries g{f.periods, b.bias_correction->gap, f.treatment_period};
                pre = rmse(g, Window::pre()), post = rmse(g, Window::post());
            }
            a.row({name, num(r.att), num(r.se), r.ci95 ? num(r.ci95->first) : "", r.ci95 ? num(r.ci95->second) : "",
                   to_string(r.method), std::to_string(r.post_periods), num(pre), num(post)});
        }
        files["att.csv"] = a.str();
    }

    if (!b.breaks.empty() || b.trend) {
        Csv t({"test", "statistic", "p_value", "p_bound", "break_period", "df1", "df2", "trim", "degenerate"});
        for (const auto& r : b.breaks)
            t.row({to_string(r.test), num(r.statistic), num(r.p_value), r.p_bound,
                   r.break_period ? std::to_string(*r.break_period) : "", num(r.df1), num(r.df2), num(r.trim_fraction),
                   r.degenerate ? "1" : "0"});
        files["breaks.csv"] = t.str();
        if (b.trend) {
            const auto& tr = *b.trend;
            Csv d({"measure", "value"});
            d.row({"pre_slope", num(tr.pre_slope)});
            d.row({"pre_se", num(tr.pre_se)});
            d.row({"pre_ci95_low", num(tr.pre_ci95.first)});
            d.row({"pre_ci95_high", num(tr.pre_ci95.second)});
            d.row({"post_slope", num(tr.post_slope)});
            d.row({"post_se", num(tr.post_se)});
            d.row({"post_ci95_low", num(tr.post_ci95.first)});
            d.row({"post_ci95_high", num(tr.post_ci95.second)});
            d.row({"tau", num(tr.tau_statistic)});
            d.row({"tau_pvalue", num(tr.tau_pvalue)});
            d.row({"dof", num(tr.dof)});
            d.row({"degenerate", tr.degenerate ? "1" : "0"});
            d.row({"sup_tau", num(tr.sup_tau)});
            d.row({"sup_break", tr.sup_break ? std::to_string(*tr.sup_break) : ""});
            d.row({"sup_pvalue_bonferroni", num(tr.sup_pvalue)});
            files["trend.csv"] = d.str();
        }
    }

    if (b.did) {
        const auto& d = *b.did;
        Csv t({"measure", "value"});
        t.row({"effect", num(d.effect)});
        t.row({"clustered_se", num(d.clustered_se)});
        t.row({"ci95_low", num(d.ci95.first)});
        t.row({"ci95_high", num(d.ci95.second)});
        t.row({"unit_fe_pvalue", num(d.fe_unit_pvalue)});
        t.row({"time_fe_pvalue", num(d.fe_time_pvalue)});
        t.row({"r2_within", num(d.r2_within)});
        t.row({"r2_between", num(d.r2_between)});
        t.row({"r2_overall", num(d.r2_overall)});
        for (Eigen::Index l = 0; l < d.lag_coef.size(); ++l) t.row({"lag" + std::to_string(l + 1), num(d.lag_coef[l])});
        t.row({"clusters", std::to_string(d.clusters)});
        t.row({"observations", std::to_string(d.observations)});
        t.row({"parameters", std::to_string(d.parameters)});
        files["did.csv"] = t.str();
        if (b.did_subsample) {
            Csv s({"draw", "effect"});
            for (std::size_t i = 0; i < b.did_subsample->effects.size(); ++i)
                s.row({std::to_string(i), num(b.did_subsample->effects[i])});
            files["did_subsample.csv"] = s.str();
        }
    }

    std::vector<ReplicationCheck> checks;
    if (config.replication.enabled) {
        checks = replication_checks(b, config.replication.outcome);
        Csv r({"table", "quantity", "printed", "computed", "tolerance", "status"});
        for (const auto& c : checks)
            r.row({c.table, c.quantity, num(c.printed), num(c.computed), num(c.tolerance), c.status});
        files["replication.csv"] = r.str();
    }

    if (!b.warnings.empty()) {
        Csv w({"warning"});
        for (const auto& s : b.warnings) w.row({s});
        files["warnings.csv"] = w.str();
    }

    // Markdown summary.
    std::ostringstream md;
    md << "# Synthetic control report: " << b.treated_name << "\n\n";
    md << "Outcome `" << f.spec.outcome << "`, treatment period " << f.treatment_period << ", " << f.donor_ids.size()
       << " donors, " << f.design.predictors() << " predictors, V method " << to_string(f.vweights.method) << ".\n\n";
    md << "## Donor weights\n\n| unit | weight |\n|---|---|\n";
    for (std::size_t j = 0; j < f.donor_ids.size(); ++j)
        md << "| " << display_name(b, f.donor_ids[j]) << " | " << fixed(f.weights.w[static_cast<Eigen::Index>(j)]) << " |\n";
    md << "\n## Predictor balance\n\n| predictor | treated | synthetic | V weight |\n|---|---|---|---|\n";
    for (const auto& r : balance_table(f))
        md << "| " << r.predictor << " | " << fixed(r.treated) << " | " << fixed(r.synthetic) << " | " << fixed(r.v_weight)
           << " |\n";
    if (perf) {
        md << "\n## Performance\n\n| measure | value |\n|---|---|\n";
        md << "| RMSE (nested) | " << fixed(perf->rmse_nested) << " |\n";
        md << "| RMSE (not nested) | " << fixed(perf->rmse_unnested) << " |\n";
        md << "| Improvement | " << fixed(perf->improvement_pct, 1) << "% |\n";
        md << "| Bias without matching | " << fixed(perf->bias_without_matching) << " |\n";
        md << "| Bias with matching | " << fixed(perf->bias_with_matching) << " |\n";
        md << "| Bias reduction | " << fixed(perf->bias_reduction_pct, 1) << "% |\n";
    }
    md << "\n## Average effect\n\n| variant | ATT | SE | SE method |\n|---|---|---|---|\n";
    for (const auto& [name, r] : effects)
        md << "| " << name << " | " << fixed(r.att) << " | " << (r.se ? fixed(*r.se) : "n/a") << " | "
           << to_string(r.method) << " |\n";
    if (b.placebo_space)
        md << "\nIn-space placebo: overall p-value " << fixed(b.placebo_space->overall_pvalue) << " over "
           << b.placebo_space->retained_count() << " retained units (filter multiple "
           << format_number(b.placebo_space->filter_multiple) << ").\n";
    if (!b.breaks.empty()) {
        md << "\n## Structural breaks\n\n| test | statistic | p-value | break |\n|---|---|---|---|\n";
        for (const auto& r : b.breaks)
            md << "| " << to_string(r.test) << " | " << fixed(r.statistic, 2) << " | "
               << (r.p_bound.empty() ? fixed(r.p_value) : r.p_bound) << " | "
               << (r.break_period ? std::to_string(*r.break_period) : "") << " |\n";
    }
    if (b.did)
        md << "\nDiD on gaps: effect " << fixed(b.did->effect) << " (clustered SE " << fixed(b.did->clustered_se)
           << ", " << b.did->clusters << " clusters).\n";
    if (!checks.empty()) {
        md << "\n## Replication check (`" << config.replication.outcome
           << "`)\n\n| table | quantity | printed | computed | status |\n|---|---|---|---|---|\n";
        for (const auto& c : checks)
            md << "| " << c.table << " | " << c.quantity << " | " << format_number(c.printed) << " | "
               << (c.computed ? fixed(*c.computed) : "") << " | " << c.status << " |\n";
    }
    if (!b.warnings.empty()) {
        md << "\n## Warnings\n\n";
        for (const auto& w : b.warnings) md << "- " << w << "\n";
    }
    files["report.md"] = md.str();
    return files;
}

std::vector<std::string> available_figures(const ReportBundle& b) {
    std::vector<std::string> names{"counterfactual", "gap"};
    if (b.placebo_space) names.insert(names.end(), {"placebo_spaghetti", "placebo_ratios"});
    for (const auto& run : b.placebo_time) names.push_back("placebo_time_" + std::to_string(run.false_year));
    if (b.loo) names.push_back("loo");
    if (b.bias_correction) names.push_back("bias_correction");
    return names;
}

std::map<std::string, std::string> emit_figures(const ReportBundle& b, const std::vector<std::string>& names) {
    std::map<std::string, std::string> out;
    const std::string prefix = "placebo_time_";
    for (const auto& n : names) {
        std::string s;
        if (n == "counterfactual") s = counterfactual_figure(b);
        else if (n == "gap") s = gap_figure(b);
        else if (n == "placebo_spaghetti") s = spaghetti_figure(b);
        else if (n == "placebo_ratios") s = ratio_figure(b);
        else if (n == "loo") s = loo_figure(b);
        else if (n == "bias_correction") s = bias_figure(b);
        else if (n.rfind(prefix, 0) == 0) {
            int year = 0;
            const auto tail = n.substr(prefix.size());
            const auto [p, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), year);
            if (ec != std::errc() || p != tail.data() + tail.size()) throw ReportError("unknown figure '" + n + "'");
            s = placebo_time_figure(b, year);
        } else {
            throw ReportError("unknown figure '" + n + "'");
        }
        out[n + ".svg"] = std::move(s);
    }
    return out;
}

std::vector<ReplicationCheck> replication_checks(const ReportBundle& b, const std::string& outcome) {
    const auto& keys = replication_outcomes();
    const auto it = std::find(keys.begin(), keys.end(), outcome);
    if (it == keys.end()) throw std::invalid_argument("replication: unknown outcome '" + outcome + "'");
    const auto& t = printed_values()[static_cast<std::size_t>(it - keys.begin())];

    std::vector<ReplicationCheck> out;
    auto add = [&](const char* table, const std::string& q, double printed, std::optional<double> computed, double tol) {
        ReplicationCheck c{table, q, printed, computed, tol, "not computed"};
        if (computed && std::isfinite(*computed)) c.status = std::abs(*computed - printed) <= tol ? "agree" : "disagree";
        out.push_back(std::move(c));
    };
    std::optional<PerformanceRow> perf;
    if (b.unnested) perf = performance_table(b.fit, *b.unnested);
    auto pf = [&](double PerformanceRow::*m) -> std::optional<double> {
        if (!perf) return std::nullopt;
        return (*perf).*m;
    };
    add("performance", "rmse_nested", t.performance[0], b.fit.pre_rmse, 0.05);
    add("performance", "rmse_unnested", t.performance[1], pf(&PerformanceRow::rmse_unnested), 0.05);
    add("performance", "improvement_pct", t.performance[2], pf(&PerformanceRow::improvement_pct), 5.0);
    add("performance", "bias_without_matching", t.performance[3], pf(&PerformanceRow::bias_without_matching), 0.05);
    add("performance", "bias_with_matching", t.performance[4], pf(&PerformanceRow::bias_with_matching), 0.05);
    add("performance", "bias_reduction_pct", t.performance[5], pf(&PerformanceRow::bias_reduction_pct), 5.0);
    add("performance", "control_units", 16, static_cast<double>(b.fit.donor_ids.size()), 0.0);
    add("performance", "predictors", 17, static_cast<double>(b.fit.design.predictors()), 0.0);
    for (const auto& [name, w] : t.weights)
        add("weights", std::string("weight ") + name, w, donor_weight(b, b.fit.donor_ids, b.fit.weights.w, name), 0.05);
    add("did", "did_effect", t.did[0], b.did ? std::optional(b.did->effect) : std::nullopt, 0.05);
    add("did", "did_clustered_se", t.did[1], b.did ? std::optional(b.did->clustered_se) : std::nullopt, 0.02);
    auto stat = [&](BreakTest k) -> std::optional<double> {
        if (const auto* r = find_break(b, k)) return r->statistic;
        return std::nullopt;
    };
    auto pval = [&](BreakTest k) -> std::optional<double> {
        if (const auto* r = find_break(b, k)) return r->p_value;
        return std::nullopt;
    };
    auto year = [&](BreakTest k) -> std::optional<double> {
        if (const auto* r = find_break(b, k); r && r->break_period) return static_cast<double>(*r->break_period);
        return std::nullopt;
    };
    add("breaks", "wald_F", t.chow_wald[0], stat(BreakTest::WaldKnown), 0.5);
    add("breaks", "wald_p", t.chow_wald[1], pval(BreakTest::WaldKnown), 0.05);
    add("breaks", "chow_F", t.chow_wald[2], stat(BreakTest::Chow), 0.5);
    add("breaks", "chow_p", t.chow_wald[3], pval(BreakTest::Chow), 0.05);
    add("breaks", "gh_regime_Zt", t.gh[0], stat(BreakTest::GregoryHansenRegime), 0.5);
    add("breaks", "gh_regime_break", t.gh[1], year(BreakTest::GregoryHansenRegime), 0.0);
    add("breaks", "gh_trend_Zt", t.gh[2], stat(BreakTest::GregoryHansenTrend), 0.5);
    add("breaks", "gh_trend_break", t.gh[3], year(BreakTest::GregoryHansenTrend), 0.0);
    const LassoFit* l = b.lasso ? &*b.lasso : nullptr;
    std::optional<AttResult> la;
    if (l) la = att(l->gap_series());
    add("lasso", "lasso_att", t.lasso[0], la ? std::optional(la->att) : std::nullopt, 0.1);
    add("lasso", "lasso_att_se", t.lasso[1], la ? la->se : std::nullopt, 0.05);
    add("lasso", "lasso_post_rmse", t.lasso[2], l ? std::optional(l->post_rmse) : std::nullopt, 0.1);
    add("lasso", "lasso_pre_rmse", t.lasso[3], l ? std::optional(l->pre_rmse) : std::nullopt, 0.05);
    for (const auto& [name, w] : t.lasso_weights)
        add("lasso", std::string("lasso weight ") + name, w,
            l ? donor_weight(b, l->donor_ids, l->weights, name) : std::nullopt, 0.05);
    return out;
}

void write_atomically(const std::filesystem::path& out_dir, const std::map<std::string, std::string>& files) {
    namespace fs = std::filesystem;
    const fs::path target = out_dir.has_filename() ? out_dir : out_dir.parent_path();
    const fs::path staging = target.string() + ".staging";
    const fs::path backup = target.string() + ".previous";
    std::error_code ec;
    fs::remove_all(staging, ec);
    try {
        fs::create_directories(staging);
        for (const auto& [name, content] : files) {
            if (name.find('/') != std::string::npos || name.find("..") != std::string::npos)
                throw ReportError("invalid output file name '" + name + "'");
            write_file(staging / name, content);
        }
        fs::remove_all(backup, ec);
        if (fs::exists(target)) fs::rename(target, backup);
        try {
            fs::rename(staging, target);
        } catch (...) {
            if (fs::exists(backup)) fs::rename(backup, target, ec);
            throw;
        }
        fs::remove_all(backup, ec);
    } catch (const fs::filesystem_error& e) {
        fs::remove_all(staging, ec);
        throw ReportError(std::string("writing outputs failed: ") + e.what());
    } catch (...) {
        fs::remove_all(staging, ec);
        throw;
    }
}

std::string render_manifest(const ManifestInputs& in, const std::map<std::string, std::string>& files) {
    nlohmann::ordered_json m;
    m["tool"] = "scm";
    m["tool_version"] = kToolVersion;
    m["command"] = in.command;
    m["seed"] = in.seed ? nlohmann::ordered_json(*in.seed) : nlohmann::ordered_json(nullptr);
    m["threads_used"] = in.threads;
    const auto config_hash = sha256_hex(in.config_text);
    const auto data_hash = sha256_hex(in.data_bytes);
    m["config_sha256"] = config_hash;
    m["data_sha256"] = data_hash;
    m["run_sha256"] = sha256_hex(config_hash + "\n" + data_hash + "\n" + in.command + "\n" +
                                 (in.seed ? std::to_string(*in.seed) : std::string("none")));
    m["versions"] = {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"boost", std::to_string(BOOST_VERSION / 100000) + "." + std::to_string(BOOST_VERSION / 100 % 1000) +
                                   "." + std::to_string(BOOST_VERSION % 100)}};
    auto list = nlohmann::ordered_json::array();
    for (const auto& [name, content] : files)
        list.push_back({{"name", name}, {"bytes", content.size()}, {"sha256", sha256_hex(content)}});
    m["files"] = list;
    return m.dump(2) + "\n";
}

std::vector<std::string> run(const RunConfig& config, Stage stage, const std::filesystem::path& out_dir) {
    static const char* names[] = {"fit", "placebo-space", "placebo-time", "loo", "penalized",
                                  "lasso", "breaks", "did", "report"};
    const auto effective = stage_config(config, stage);
    auto data = load_data(effective);
    auto bundle = analyze(data.dataset, effective);
    bundle.warnings.insert(bundle.warnings.begin(), data.warnings.begin(), data.warnings.end());
    auto files = render_tables(bundle, effective);
    if (effective.figures)
        for (auto& [name, content] : emit_figures(bundle, available_figures(bundle))) files[name] = std::move(content);
    ManifestInputs m{names[static_cast<int>(stage)], config.source_text, data.bytes, config.seed, config.threads};
    return finish(files, m, out_dir);
}

std::vector<std::string> run_simulate(const RunConfig& config, const std::filesystem::path& out_dir) {
    if (!config.data.preset) throw ConfigError("simulate needs [data] preset");
    auto data = load_data(config);
    std::map<std::string, std::string> files{{"panel.csv", data.bytes}};
    ManifestInputs m{"simulate", config.source_text, data.bytes, config.seed, config.threads};
    return finish(files, m, out_dir);
}

}  // namespace scm
