#include "scm/config.hpp"

#include "scm/errors.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace scm {

namespace {

namespace pt = boost::property_tree;

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

/// Accessor for one section that records which keys were read.
class Section {
public:
    Section(std::string name, const pt::ptree* tree, bool header)
        : name_(std::move(name)), tree_(tree), header_(header) {}

    /// The ptree drops sections without keys, so the header is tracked separately.
    bool present() const { return tree_ != nullptr || header_; }

    std::optional<std::string> raw(const std::string& key) {
        allowed_.insert(key);
        if (!tree_) return std::nullopt;
        const auto it = tree_->find(key);
        if (it == tree_->not_found()) return std::nullopt;
        return trim(it->second.data());
    }

    std::string where(const std::string& key) const { return "[" + name_ + "] " + key; }

    std::optional<std::string> text(const std::string& key) {
        auto v = raw(key);
        if (v && v->empty()) throw ConfigError(where(key) + ": empty value");
        return v;
    }

    std::optional<bool> boolean(const std::string& key) {
        const auto v = text(key);
        if (!v) return std::nullopt;
        if (*v == "true" || *v == "yes" || *v == "1") return true;
        if (*v == "false" || *v == "no" || *v == "0") return false;
        throw ConfigError(where(key) + ": expected true or false, got '" + *v + "'");
    }

    template <class Int>
    std::optional<Int> integer(const std::string& key) {
        const auto v = text(key);
        if (!v) return std::nullopt;
        return parse_int<Int>(*v, key);
    }

    std::optional<double> real(const std::string& key) {
        const auto v = text(key);
        if (!v) return std::nullopt;
        return parse_real(*v, key);
    }

    std::vector<double> reals(const std::string& key) {
        std::vector<double> out;
        if (const auto v = text(key))
            for (const auto& item : split_list(*v)) out.push_back(parse_real(item, key));
        return out;
    }

    std::vector<int> ints(const std::string& key) {
        std::vector<int> out;
        if (const auto v = text(key))
            for (const auto& item : split_list(*v)) out.push_back(parse_int<int>(item, key));
        return out;
    }

    std::vector<std::string> strings(const std::string& key) {
        if (const auto v = text(key)) return split_list(*v);
        return {};
    }

    template <class Int>
    Int parse_int(const std::string& s, const std::string& key) const {
        Int x{};
        const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
        if (ec != std::errc() || p != s.data() + s.size())
            throw ConfigError(where(key) + ": expected an integer, got '" + s + "'");
        return x;
    }

    double parse_real(const std::string& s, const std::string& key) const {
        if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
        double x = 0.0;
        const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
        if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(x))
            throw ConfigError(where(key) + ": expected a number, got '" + s + "'");
        return x;
    }

    void reject_unknown() const {
        if (!tree_) return;
        for (const auto& [key, child] : *tree_) {
            if (!child.empty()) throw ConfigError("[" + name_ + "]: nested entry '" + key + "' is not supported");
            if (!allowed_.count(key)) throw ConfigError("unknown key " + where(key));
        }
    }

private:
    std::string name_;
    const pt::ptree* tree_;
    bool header_ = false;
    std::set<std::string> allowed_;
};

YearWindow parse_window(const std::string& s, const std::string& where) {
    const auto dash = s.find('-', 1);
    try {
        if (dash == std::string::npos) throw std::invalid_argument(s);
        YearWindow w{std::stoi(trim(s.substr(0, dash))), std::stoi(trim(s.substr(dash + 1)))};
        if (w.first > w.last) throw std::invalid_argument(s);
        return w;
    } catch (const std::exception&) {
        throw ConfigError(where + ": expected a year range 'first-last', got '" + s + "'");
    }
}

}  // namespace

const char* to_string(BreakTestKind k) {
    switch (k) {
        case BreakTestKind::Wald: return "wald";
        case BreakTestKind::Chow: return "chow";
        case BreakTestKind::GhLevel: return "gh_level";
        case BreakTestKind::GhTrend: return "gh_trend";
        case BreakTestKind::GhRegime: return "gh_regime";
        case BreakTestKind::Trend: return "trend";
    }
    return "unknown";
}

const std::vector<std::string>& replication_outcomes() {
    static const std::vector<std::string> keys{"court_packing",        "high_court_independence",
                                               "compliance",           "judicial_constraints",
                                               "judicial_purges",      "judicial_accountability"};
    return keys;
}

RunConfig parse_config(std::istream& in, const std::filesystem::path& base_dir) {
    RunConfig cfg;
    {
        std::ostringstream buf;
        buf << in.rdbuf();
        cfg.source_text = buf.str();
    }
    pt::ptree tree;
    try {
        std::istringstream text(cfg.source_text);
        pt::read_ini(text, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
    }

    static const std::vector<std::string> known{"run",  "data",     "study", "placebo_space", "placebo_time",
                                                "loo",  "penalized", "lasso", "bias_correction", "breaks",
                                                "did",  "replication"};
    for (const auto& [name, child] : tree) {
        if (child.empty() && !child.data().empty())
            throw ConfigError("key '" + name + "' appears outside a section");
        if (std::find(known.begin(), known.end(), name) == known.end())
            throw ConfigError("unknown section [" + name + "]");
    }
    std::set<std::string> headers;
    {
        std::istringstream lines(cfg.source_text);
        std::string line;
        while (std::getline(lines, line)) {
            line = trim(line);
            if (line.size() > 2 && line.front() == '[' && line.back() == ']') {
                const auto name = trim(line.substr(1, line.size() - 2));
                if (std::find(known.begin(), known.end(), name) == known.end())
                    throw ConfigError("unknown section [" + name + "]");
                headers.insert(name);
            }
        }
    }
    auto section = [&](const std::string& name) {
        const auto it = tree.find(name);
        return Section(name, it == tree.not_found() ? nullptr : &it->second, headers.count(name) > 0);
    };

    auto run = section("run");
    if (const auto s = run.integer<std::uint64_t>("seed")) cfg.seed = *s;
    if (const auto t = run.integer<int>("threads")) cfg.threads = *t;
    if (const auto o = run.text("out")) cfg.out = base_dir / *o;
    if (const auto f = run.boolean("figures")) cfg.figures = *f;
    run.reject_unknown();

    auto data = section("data");
    if (!data.present()) throw ConfigError("missing section [data]");
    if (const auto p = data.text("path")) cfg.data.path = base_dir / *p;
    cfg.data.preset = data.text("preset");
    if (const auto d = data.integer<std::uint64_t>("draw")) cfg.data.draw = *d;
    if (const auto u = data.text("unit_column")) cfg.data.schema.unit_column = *u;
    if (const auto y = data.text("year_column")) cfg.data.schema.year_column = *y;
    cfg.data.schema.name_column = data.text("name_column");
    if (const auto d = data.text("delimiter")) {
        if (*d == "tab") cfg.data.schema.delimiter = '\t';
        else if (d->size() == 1) cfg.data.schema.delimiter = (*d)[0];
        else throw ConfigError(data.where("delimiter") + ": expected one character or 'tab'");
    }
    cfg.data.schema.outcome_columns = data.strings("outcomes");
    if (const auto s = data.boolean("strict")) cfg.data.schema.strict = *s;
    data.reject_unknown();
    if (cfg.data.path.has_value() == cfg.data.preset.has_value())
        throw ConfigError("[data] needs exactly one of 'path' and 'preset'");

    auto study = section("study");
    if (!study.present()) throw ConfigError("missing section [study]");
    auto& s = cfg.study;
    const auto treated = study.text("treated_unit");
    const auto year = study.integer<int>("treatment_year");
    const auto outcome = study.text("outcome");
    if (!treated || !year || !outcome)
        throw ConfigError("[study] requires treated_unit, treatment_year and outcome");
    s.treated_unit = *treated;
    s.treatment_period = *year;
    s.outcome = *outcome;
    const auto scheme = study.text("predictors").value_or("full_path");
    const auto years = study.ints("benchmark_years");
    const auto lags = study.integer<int>("lags");
    if (scheme == "benchmark_years") {
        if (years.empty()) throw ConfigError("[study] predictors = benchmark_years needs benchmark_years");
        s.predictors = BenchmarkYears{years};
    } else if (scheme == "lagged") {
        s.predictors = LaggedOutcomes{lags.value_or(2)};
    } else if (scheme == "full_path") {
        s.predictors = FullPrePath{};
    } else {
        throw ConfigError(study.where("predictors") + ": expected benchmark_years, lagged or full_path");
    }
    if (!years.empty() && scheme != "benchmark_years")
        throw ConfigError("[study] benchmark_years is only valid with predictors = benchmark_years");
    if (lags && scheme != "lagged") throw ConfigError("[study] lags is only valid with predictors = lagged");
    for (const auto& item : study.strings("covariates")) {
        CovariateSpec c;
        const auto colon = item.find(':');
        c.variable = trim(item.substr(0, colon));
        if (colon != std::string::npos) c.window = parse_window(trim(item.substr(colon + 1)), study.where("covariates"));
        s.covariates.push_back(c);
    }
    s.donor_exclusions = study.strings("donor_exclusions");
    if (const auto n = study.boolean("nested")) s.nested_optimization = *n;
    if (const auto v = study.integer<int>("v_candidates")) s.v_candidates = *v;
    s.training_end = study.integer<int>("training_end");
    study.reject_unknown();

    auto ps = section("placebo_space");
    cfg.placebo_space.enabled = ps.boolean("enabled").value_or(ps.present());
    if (const auto m = ps.real("filter_multiple")) cfg.placebo_space.filter_multiple = *m;
    ps.reject_unknown();
    if (!(cfg.placebo_space.filter_multiple > 0.0))
        throw ConfigError("[placebo_space] filter_multiple must be positive");

    auto ptime = section("placebo_time");
    cfg.placebo_time.enabled = ptime.boolean("enabled").value_or(ptime.present());
    cfg.placebo_time.years = ptime.ints("years");
    cfg.placebo_time.fit_end = ptime.integer<int>("fit_end");
    ptime.reject_unknown();
    if (cfg.placebo_time.enabled && cfg.placebo_time.years.empty())
        throw ConfigError("[placebo_time] needs years");

    auto loo = section("loo");
    cfg.loo.enabled = loo.boolean("enabled").value_or(loo.present());
    if (const auto m = loo.text("mode")) {
        if (*m == "largest_weight") cfg.loo.mode = LooMode::LargestWeight;
        else if (*m == "each_nonzero") cfg.loo.mode = LooMode::EachNonzero;
        else throw ConfigError(loo.where("mode") + ": expected largest_weight or each_nonzero");
    }
    loo.reject_unknown();

    auto pen = section("penalized");
    cfg.penalized.enabled = pen.boolean("enabled").value_or(pen.present());
    if (const auto l = pen.text("lambda"); l && *l != "auto") cfg.penalized.lambda = pen.parse_real(*l, "lambda");
    if (auto g = pen.reals("grid"); !g.empty()) cfg.penalized.grid = std::move(g);
    pen.reject_unknown();
    if (cfg.penalized.lambda && *cfg.penalized.lambda < 0.0) throw ConfigError("[penalized] lambda must be >= 0");

    auto lasso = section("lasso");
    cfg.lasso.enabled = lasso.boolean("enabled").value_or(lasso.present());
    cfg.lasso.grid = lasso.reals("grid");
    if (const auto a = lasso.real("alpha")) cfg.lasso.alpha = *a;
    if (const auto h = lasso.text("holdout")) cfg.lasso.holdout = parse_window(*h, lasso.where("holdout"));
    lasso.reject_unknown();
    if (cfg.lasso.alpha < 0.0 || cfg.lasso.alpha > 1.0) throw ConfigError("[lasso] alpha must lie in [0, 1]");

    auto bc = section("bias_correction");
    cfg.bias_correction.enabled = bc.boolean("enabled").value_or(bc.present());
    if (const auto a = bc.real("alpha")) cfg.bias_correction.alpha = *a;
    bc.reject_unknown();
    if (cfg.bias_correction.alpha < 0.0 || cfg.bias_correction.alpha > 1.0)
        throw ConfigError("[bias_correction] alpha must lie in [0, 1]");

    auto br = section("breaks");
    cfg.breaks.enabled = br.boolean("enabled").value_or(br.present());
    if (const auto tests = br.strings("tests"); !tests.empty()) {
        cfg.breaks.tests.clear();
        static const std::map<std::string, BreakTestKind> names{
            {"wald", BreakTestKind::Wald},         {"chow", BreakTestKind::Chow},
            {"gh_level", BreakTestKind::GhLevel},  {"gh_trend", BreakTestKind::GhTrend},
            {"gh_regime", BreakTestKind::GhRegime}, {"trend", BreakTestKind::Trend}};
        for (const auto& t : tests) {
            const auto it = names.find(t);
            if (it == names.end()) throw ConfigError(br.where("tests") + ": unknown test '" + t + "'");
            cfg.breaks.tests.push_back(it->second);
        }
    }
    cfg.breaks.break_year = br.integer<int>("break_year");
    if (const auto c = br.text("covariance")) {
        if (*c == "classical") cfg.breaks.covariance = Covariance::Classical;
        else if (*c == "hc1") cfg.breaks.covariance = Covariance::HC1;
        else throw ConfigError(br.where("covariance") + ": expected classical or hc1");
    }
    if (const auto t = br.real("trim")) cfg.breaks.trim = *t;
    cfg.breaks.lag = br.integer<int>("lag");
    if (const auto sup = br.boolean("supremum")) cfg.breaks.supremum = *sup;
    br.reject_unknown();
    if (!(cfg.breaks.trim > 0.0 && cfg.breaks.trim < 0.5)) throw ConfigError("[breaks] trim must lie in (0, 0.5)");

    auto did = section("did");
    cfg.did.enabled = did.boolean("enabled").value_or(did.present());
    if (const auto l = did.integer<int>("lags")) cfg.did.lags = *l;
    if (const auto d = did.integer<int>("subsample_draws")) cfg.did.subsample_draws = *d;
    if (const auto z = did.integer<int>("subsample_size")) cfg.did.subsample_size = *z;
    did.reject_unknown();
    if (cfg.did.lags < 0) throw ConfigError("[did] lags must be >= 0");
    if (cfg.did.subsample_draws < 0) throw ConfigError("[did] subsample_draws must be >= 0");
    if (cfg.did.subsample_draws > 0 && cfg.did.subsample_size < 1)
        throw ConfigError("[did] subsample_draws needs subsample_size >= 1");

    auto rep = section("replication");
    cfg.replication.enabled = rep.boolean("enabled").value_or(rep.present());
    cfg.replication.outcome = rep.text("outcome").value_or("");
    rep.reject_unknown();
    if (cfg.replication.enabled) {
        const auto& keys = replication_outcomes();
        if (std::find(keys.begin(), keys.end(), cfg.replication.outcome) == keys.end()) {
            std::string list;
            for (const auto& k : keys) list += (list.empty() ? "" : ", ") + k;
            throw ConfigError("[replication] outcome must be one of: " + list);
        }
    }
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
    return parse_config(in, path.parent_path());
}

bool needs_seed(const RunConfig& c) {
    return c.study.nested_optimization || c.data.preset.has_value() || (c.did.enabled && c.did.subsample_draws > 0);
}

void finalize_config(RunConfig& c, std::optional<std::uint64_t> seed_override, std::optional<int> threads_override) {
    if (seed_override) c.seed = seed_override;
    if (threads_override) c.threads = *threads_override;
    if (c.threads < 1) throw ConfigError("threads must be >= 1");
    if (needs_seed(c) && !c.seed)
        throw ConfigError("a seed is required (nested V search, generated data or DiD subsampling); set [run] seed or --seed");
    c.study.seed = c.seed.value_or(0);
}

}  // namespace scm
