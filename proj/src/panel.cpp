#include "scm/panel.hpp"

#include "scm/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace scm {

namespace {

std::vector<std::string> split_row(const std::string& line, char delimiter, std::size_t line_no) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == delimiter) {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (quoted) throw ParseError("unterminated quoted field", line_no);
    fields.push_back(std::move(cur));
    return fields;
}

std::string trim(std::string s) {
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string quote_if_needed(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    return out + "\"";
}

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

}  // namespace

PanelDataset::PanelDataset(std::vector<Unit> units, std::vector<int> periods,
                           std::vector<Variable> variables, std::vector<double> values)
    : units_(std::move(units)),
      periods_(std::move(periods)),
      variables_(std::move(variables)),
      values_(std::move(values)) {
    if (values_.size() != units_.size() * periods_.size() * variables_.size())
        throw ValidationError("panel value count does not match units x periods x variables");
    for (std::size_t i = 1; i < periods_.size(); ++i)
        if (periods_[i] <= periods_[i - 1]) throw ValidationError("periods must be strictly increasing");
    std::set<std::string> ids;
    for (const auto& u : units_)
        if (!ids.insert(u.id).second) throw ValidationError("duplicate unit id '" + u.id + "'");
    std::set<std::string> names;
    for (const auto& v : variables_)
        if (!names.insert(v.name).second) throw ValidationError("duplicate variable '" + v.name + "'");
    for (double v : values_)
        if (!std::isfinite(v)) throw ValidationError("panel contains a non-finite value");
}

std::optional<std::size_t> PanelDataset::find_unit(std::string_view id) const {
    for (std::size_t i = 0; i < units_.size(); ++i)
        if (units_[i].id == id) return i;
    return std::nullopt;
}

std::optional<std::size_t> PanelDataset::find_period(int year) const {
    auto it = std::lower_bound(periods_.begin(), periods_.end(), year);
    if (it == periods_.end() || *it != year) return std::nullopt;
    return static_cast<std::size_t>(it - periods_.begin());
}

std::optional<std::size_t> PanelDataset::find_variable(std::string_view name) const {
    for (std::size_t i = 0; i < variables_.size(); ++i)
        if (variables_[i].name == name) return i;
    return std::nullopt;
}

Eigen::VectorXd PanelDataset::series(std::size_t unit, std::size_t variable) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(periods_.size()));
    for (std::size_t t = 0; t < periods_.size(); ++t) out[static_cast<Eigen::Index>(t)] = value(unit, t, variable);
    return out;
}

PanelDataset PanelDataset::truncated(int last_period) const {
    std::vector<int> kept;
    for (int p : periods_)
        if (p <= last_period) kept.push_back(p);
    std::vector<double> vals;
    vals.reserve(kept.size() * units_.size() * variables_.size());
    for (std::size_t v = 0; v < variables_.size(); ++v)
        for (std::size_t u = 0; u < units_.size(); ++u)
            for (std::size_t t = 0; t < kept.size(); ++t) vals.push_back(value(u, t, v));
    return PanelDataset(units_, std::move(kept), variables_, std::move(vals));
}

PanelDataset PanelDataset::with_units(const std::vector<std::string>& ids) const {
    std::vector<std::size_t> idx;
    for (std::size_t u = 0; u < units_.size(); ++u)
        if (std::find(ids.begin(), ids.end(), units_[u].id) != ids.end()) idx.push_back(u);
    std::vector<Unit> units;
    for (auto u : idx) units.push_back(units_[u]);
    std::vector<double> vals;
    for (std::size_t v = 0; v < variables_.size(); ++v)
        for (auto u : idx)
            for (std::size_t t = 0; t < periods_.size(); ++t) vals.push_back(value(u, t, v));
    return PanelDataset(std::move(units), periods_, variables_, std::move(vals));
}

LoadResult load_panel(std::istream& in, const PanelSchema& schema) {
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        header = split_row(line, schema.delimiter, line_no);
        break;
    }
    if (header.empty()) throw ParseError("empty input: no header row", 0);
    for (auto& h : header) h = trim(h);

    auto column = [&](const std::string& name) -> std::optional<std::size_t> {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) return std::nullopt;
        return static_cast<std::size_t>(it - header.begin());
    };
    const auto unit_col = column(schema.unit_column);
    const auto year_col = column(schema.year_column);
    if (!unit_col) throw ParseError("missing unit column '" + schema.unit_column + "'", line_no);
    if (!year_col) throw ParseError("missing year column '" + schema.year_column + "'", line_no);
    std::optional<std::size_t> name_col;
    if (schema.name_column) {
        name_col = column(*schema.name_column);
        if (!name_col) throw ParseError("missing name column '" + *schema.name_column + "'", line_no);
    }
    std::vector<std::size_t> value_cols;
    std::vector<Variable> variables;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (c == *unit_col || c == *year_col || (name_col && c == *name_col)) continue;
        if (header[c].empty()) throw ParseError("empty column name in header", line_no);
        const bool is_outcome = std::find(schema.outcome_columns.begin(), schema.outcome_columns.end(),
                                          header[c]) != schema.outcome_columns.end();
        variables.push_back({header[c], is_outcome ? VariableRole::Outcome : VariableRole::Covariate});
        value_cols.push_back(c);
    }
    if (variables.empty()) throw ParseError("no value columns in header", line_no);
    for (const auto& o : schema.outcome_columns)
        if (std::none_of(variables.begin(), variables.end(), [&](const Variable& v) { return v.name == o; }))
            throw ParseError("outcome column '" + o + "' not found", line_no);

    std::vector<Unit> units;
    std::unordered_map<std::string, std::size_t> unit_index;
    std::map<std::pair<std::size_t, int>, std::vector<double>> cells;
    std::set<int> years;

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        auto fields = split_row(line, schema.delimiter, line_no);
        if (fields.size() != header.size())
            throw ParseError("expected " + std::to_string(header.size()) + " fields, found " +
                                 std::to_string(fields.size()),
                             line_no);
        const std::string id = trim(fields[*unit_col]);
        if (id.empty()) throw ParseError("empty unit id", line_no);
        const std::string year_text = trim(fields[*year_col]);
        int year = 0;
        auto yr = std::from_chars(year_text.data(), year_text.data() + year_text.size(), year);
        if (yr.ec != std::errc{} || yr.ptr != year_text.data() + year_text.size())
            throw ParseError("invalid year '" + year_text + "'", line_no);

        auto [it, inserted] = unit_index.try_emplace(id, units.size());
        if (inserted) units.push_back({id, name_col ? trim(fields[*name_col]) : id});

        std::vector<double> row(value_cols.size(), kMissing);
        for (std::size_t k = 0; k < value_cols.size(); ++k) {
            const std::string text = trim(fields[value_cols[k]]);
            if (text.empty()) continue;
            double v = 0.0;
            const char* first = text.data();
            if (*first == '+') ++first;
            auto res = std::from_chars(first, text.data() + text.size(), v);
            if (res.ec != std::errc{} || res.ptr != text.data() + text.size() || !std::isfinite(v))
                throw ParseError("invalid value '" + text + "' in column '" + variables[k].name + "'", line_no);
            row[k] = v;
        }
        if (!cells.emplace(std::make_pair(it->second, year), std::move(row)).second)
            throw ParseError("duplicate row for unit '" + id + "' year " + std::to_string(year), line_no);
        years.insert(year);
    }
    if (units.empty()) throw ParseError("no data rows", line_no);

    LoadReport report;
    std::vector<int> periods;
    for (int y : years) {
        std::size_t present = 0;
        for (std::size_t u = 0; u < units.size(); ++u) present += cells.count({u, y});
        if (2 * present < units.size()) {
            report.dropped_periods.push_back(y);
            report.warnings.push_back("period " + std::to_string(y) + " dropped: rows for only " +
                                      std::to_string(present) + " of " + std::to_string(units.size()) +
                                      " units");
        } else {
            periods.push_back(y);
        }
    }

    std::vector<std::size_t> kept;
    for (std::size_t u = 0; u < units.size(); ++u) {
        std::vector<std::string> missing;
        for (int y : periods) {
            auto it = cells.find({u, y});
            if (it == cells.end()) {
                missing.push_back("all variables@" + std::to_string(y));
                continue;
            }
            for (std::size_t k = 0; k < variables.size(); ++k)
                if (std::isnan(it->second[k])) missing.push_back(variables[k].name + "@" + std::to_string(y));
        }
        if (missing.empty()) {
            kept.push_back(u);
            continue;
        }
        std::string cells_text;
        for (std::size_t i = 0; i < missing.size() && i < 8; ++i) cells_text += (i ? ", " : "") + missing[i];
        if (missing.size() > 8) cells_text += ", ... (" + std::to_string(missing.size()) + " total)";
        if (schema.strict)
            throw ValidationError("unit '" + units[u].id + "' is unbalanced; missing " + cells_text);
        report.dropped_units.push_back(units[u].id);
        report.warnings.push_back("unit '" + units[u].id + "' dropped: missing " + cells_text);
    }
    if (kept.empty()) throw ValidationError("no balanced units remain after validation");

    std::vector<Unit> out_units;
    for (auto u : kept) out_units.push_back(units[u]);
    std::vector<double> values;
    values.reserve(variables.size() * kept.size() * periods.size());
    for (std::size_t k = 0; k < variables.size(); ++k)
        for (auto u : kept)
            for (int y : periods) values.push_back(cells.at({u, y})[k]);
    return {PanelDataset(std::move(out_units), std::move(periods), std::move(variables), std::move(values)),
            std::move(report)};
}

LoadResult load_panel_file(const std::filesystem::path& path, const PanelSchema& schema) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path.string() + "'", 0);
    return load_panel(in, schema);
}

void write_panel(std::ostream& out, const PanelDataset& dataset) {
    const bool names_differ = std::any_of(dataset.units().begin(), dataset.units().end(),
                                          [](const Unit& u) { return u.name != u.id; });
    out << "unit,year";
    if (names_differ) out << ",name";
    for (const auto& v : dataset.variables()) out << ',' << quote_if_needed(v.name);
    out << '\n';
    for (std::size_t u = 0; u < dataset.unit_count(); ++u) {
        for (std::size_t t = 0; t < dataset.period_count(); ++t) {
            out << quote_if_needed(dataset.units()[u].id) << ',' << dataset.periods()[t];
            if (names_differ) out << ',' << quote_if_needed(dataset.units()[u].name);
            for (std::size_t v = 0; v < dataset.variables().size(); ++v)
                out << ',' << format_double(dataset.value(u, t, v));
            out << '\n';
        }
    }
}

int effective_cutoff(const StudySpec& spec) { return spec.fit_cutoff.value_or(spec.treatment_period); }

std::vector<std::string> donor_pool(const PanelDataset& dataset, const StudySpec& spec) {
    std::vector<std::string> out;
    for (const auto& u : dataset.units()) {
        if (u.id == spec.treated_unit) continue;
        if (std::find(spec.donor_exclusions.begin(), spec.donor_exclusions.end(), u.id) !=
            spec.donor_exclusions.end())
            continue;
        out.push_back(u.id);
    }
    return out;
}

void validate_spec(const PanelDataset& dataset, const StudySpec& spec) {
    if (!dataset.find_unit(spec.treated_unit))
        throw SpecError("treated unit '" + spec.treated_unit + "' not in dataset");
    if (!dataset.find_variable(spec.outcome)) throw SpecError("outcome '" + spec.outcome + "' not in dataset");
    for (const auto& c : spec.covariates)
        if (!dataset.find_variable(c.variable)) throw SpecError("covariate '" + c.variable + "' not in dataset");
    for (const auto& e : spec.donor_exclusions) {
        if (e == spec.treated_unit) throw SpecError("treated unit '" + e + "' listed in donor exclusions");
        if (!dataset.find_unit(e)) throw SpecError("excluded unit '" + e + "' not in dataset");
    }
    const auto& periods = dataset.periods();
    if (periods.empty()) throw SpecError("dataset has no periods");
    const int cutoff = effective_cutoff(spec);
    if (cutoff > spec.treatment_period) throw SpecError("fit cutoff must not be after the treatment period");
    const auto pre = std::count_if(periods.begin(), periods.end(), [&](int p) { return p < cutoff; });
    const auto post =
        std::count_if(periods.begin(), periods.end(), [&](int p) { return p >= spec.treatment_period; });
    if (pre < 2)
        throw SpecError("treatment period " + std::to_string(spec.treatment_period) +
                        " leaves fewer than 2 pre-treatment periods");
    if (post < 1)
        throw SpecError("treatment period " + std::to_string(spec.treatment_period) +
                        " leaves no post-treatment period");
    if (const auto* b = std::get_if<BenchmarkYears>(&spec.predictors)) {
        for (int y : b->years) {
            if (y >= cutoff)
                throw SpecError("benchmark year " + std::to_string(y) + " is not before " + std::to_string(cutoff));
            if (!dataset.find_period(y)) throw SpecError("benchmark year " + std::to_string(y) + " not in dataset");
        }
        if (b->years.empty() && spec.covariates.empty()) throw SpecError("no predictors specified");
    } else if (const auto* l = std::get_if<LaggedOutcomes>(&spec.predictors)) {
        if (l->count < 1) throw SpecError("lagged outcome count must be >= 1");
        if (l->count > pre) throw SpecError("more outcome lags than pre-treatment periods");
    }
    for (const auto& c : spec.covariates) {
        if (!c.window) continue;
        if (c.window->first > c.window->last) throw SpecError("covariate '" + c.variable + "' has an empty window");
        if (c.window->last >= cutoff)
            throw SpecError("covariate '" + c.variable + "' window ends at " + std::to_string(c.window->last) +
                            ", not before " + std::to_string(cutoff));
        const bool any = std::any_of(periods.begin(), periods.end(),
                                     [&](int p) { return p >= c.window->first && p <= c.window->last; });
        if (!any) throw SpecError("covariate '" + c.variable + "' window contains no dataset period");
    }
    const auto donors = donor_pool(dataset, spec);
    if (donors.size() < 2)
        throw DonorPoolError("donor pool has " + std::to_string(donors.size()) +
                             " unit(s) after exclusions; at least 2 required");
}

namespace {

DesignMatrices assemble_design(const PanelDataset& dataset, const StudySpec& spec, int cutoff, int shift) {
    const auto& periods = dataset.periods();
    const int first = periods.front();
    auto clamp_year = [&](int y) {
        // Snap onto an existing period inside [first, cutoff - 1].
        y = std::clamp(y, first, cutoff - 1);
        auto it = std::upper_bound(periods.begin(), periods.end(), y);
        return *(it - 1);
    };

    DesignMatrices d;
    d.treated_id = spec.treated_unit;
    d.donor_ids = donor_pool(dataset, spec);
    d.periods = periods;
    d.treatment_period = spec.treatment_period;
    for (int p : periods)
        if (p < cutoff) d.pre_periods.push_back(p);

    std::vector<std::size_t> unit_idx{*dataset.find_unit(spec.treated_unit)};
    for (const auto& id : d.donor_ids) unit_idx.push_back(*dataset.find_unit(id));
    const auto outcome = *dataset.find_variable(spec.outcome);
    const auto n_units = static_cast<Eigen::Index>(unit_idx.size());

    std::vector<Eigen::RowVectorXd> rows;
    auto outcome_row = [&](int year) {
        const auto t = *dataset.find_period(year);
        Eigen::RowVectorXd r(n_units);
        for (Eigen::Index u = 0; u < n_units; ++u) r[u] = dataset.value(unit_idx[static_cast<std::size_t>(u)], t, outcome);
        return r;
    };

    std::visit(
        [&](const auto& scheme) {
            using T = std::decay_t<decltype(scheme)>;
            if constexpr (std::is_same_v<T, BenchmarkYears>) {
                for (int y : scheme.years) {
                    const int src = clamp_year(y - shift);
                    rows.push_back(outcome_row(src));
                    d.predictor_labels.push_back(spec.outcome + "@" + std::to_string(y));
                }
            } else if constexpr (std::is_same_v<T, LaggedOutcomes>) {
                for (int k = 1; k <= scheme.count; ++k) {
                    const auto& pre = d.pre_periods;
                    if (static_cast<int>(pre.size()) < k) throw SpecError("not enough periods for outcome lags");
                    const int y = pre[pre.size() - static_cast<std::size_t>(k)];
                    rows.push_back(outcome_row(y));
                    d.predictor_labels.push_back(spec.outcome + "@lag" + std::to_string(k));
                }
            } else {
                // Full pre-path rows are labelled by their (unshifted) year.
                const int full_cutoff = effective_cutoff(spec);
                for (int y : periods) {
                    if (y >= full_cutoff) break;
                    rows.push_back(outcome_row(clamp_year(y - shift)));
                    d.predictor_labels.push_back(spec.outcome + "@" + std::to_string(y));
                }
            }
        },
        spec.predictors);
    d.scheme_rows = static_cast<Eigen::Index>(rows.size());

    for (const auto& c : spec.covariates) {
        const auto var = *dataset.find_variable(c.variable);
        int lo = c.window ? c.window->first : first;
        int hi = c.window ? c.window->last : effective_cutoff(spec) - 1;
        lo = std::max(lo - shift, first);
        hi = std::min(hi - shift, cutoff - 1);
        if (hi < lo) lo = hi = clamp_year(hi);
        Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(n_units);
        int count = 0;
        for (std::size_t t = 0; t < periods.size(); ++t) {
            if (periods[t] < lo || periods[t] > hi) continue;
            for (Eigen::Index u = 0; u < n_units; ++u) r[u] += dataset.value(unit_idx[static_cast<std::size_t>(u)], t, var);
            ++count;
        }
        if (count == 0) throw SpecError("covariate '" + c.variable + "' window contains no period");
        rows.push_back(r / count);
        std::string label = c.variable;
        if (c.window) label += " (" + std::to_string(c.window->first) + "-" + std::to_string(c.window->last) + ")";
        d.predictor_labels.push_back(label);
    }
    if (rows.empty()) throw SpecError("design has no predictor rows");

    const auto k = static_cast<Eigen::Index>(rows.size());
    const auto j = n_units - 1;
    d.x1.resize(k);
    d.x0.resize(k, j);
    for (Eigen::Index r = 0; r < k; ++r) {
        d.x1[r] = rows[static_cast<std::size_t>(r)][0];
        d.x0.row(r) = rows[static_cast<std::size_t>(r)].tail(j);
    }

    const auto n_t = static_cast<Eigen::Index>(periods.size());
    d.paths.resize(n_t, n_units);
    for (Eigen::Index u = 0; u < n_units; ++u) d.paths.col(u) = dataset.series(unit_idx[static_cast<std::size_t>(u)], outcome);
    const auto n_pre = static_cast<Eigen::Index>(d.pre_periods.size());
    d.q1 = d.paths.col(0).head(n_pre);
    d.q0 = d.paths.block(0, 1, n_pre, j);

    if (j < 2) throw DonorPoolError("donor pool has fewer than 2 units");
    if (n_pre < 2) throw SpecError("fewer than 2 pre-treatment periods");
    if (!d.x0.allFinite() || !d.x1.allFinite() || !d.paths.allFinite())
        throw SpecError("design contains non-finite values");
    return d;
}

}  // namespace

DesignMatrices build_design(const PanelDataset& dataset, const StudySpec& spec) {
    validate_spec(dataset, spec);
    return assemble_design(dataset, spec, effective_cutoff(spec), 0);
}

DesignMatrices build_shifted_design(const PanelDataset& dataset, const StudySpec& spec, int cutoff, int shift) {
    validate_spec(dataset, spec);
    if (cutoff > effective_cutoff(spec)) throw SpecError("training cutoff after the fit cutoff");
    if (shift < 0) throw SpecError("negative predictor shift");
    return assemble_design(dataset, spec, cutoff, shift);
}

StandardizedDesign standardize_predictors(const DesignMatrices& design) {
    StandardizedDesign out{design, {}, {}};
    const auto k = design.predictors();
    const auto n = static_cast<double>(design.donors() + 1);
    out.scaling.mean.resize(k);
    out.scaling.scale.resize(k);
    out.scaling.constant.assign(static_cast<std::size_t>(k), false);
    for (Eigen::Index r = 0; r < k; ++r) {
        const double m = (design.x1[r] + design.x0.row(r).sum()) / n;
        double ss = (design.x1[r] - m) * (design.x1[r] - m);
        ss += (design.x0.row(r).array() - m).square().sum();
        const double sd = std::sqrt(ss / n);
        out.scaling.mean[r] = m;
        // Rows whose spread is at rounding level relative to their magnitude are constant.
        const double mag = std::max(std::abs(m), design.x0.row(r).cwiseAbs().maxCoeff());
        if (!(sd > 1e-12 * std::max(mag, 1e-300))) {
            out.scaling.scale[r] = 1.0;
            out.scaling.constant[static_cast<std::size_t>(r)] = true;
            out.design.x1[r] = 0.0;
            out.design.x0.row(r).setZero();
            out.warnings.push_back("predictor '" + design.predictor_labels[static_cast<std::size_t>(r)] +
                                   "' is constant across units; standardized to zero");
            continue;
        }
        out.scaling.scale[r] = sd;
        out.design.x1[r] = (design.x1[r] - m) / sd;
        out.design.x0.row(r) = (design.x0.row(r).array() - m) / sd;
    }
    return out;
}

Eigen::VectorXd unstandardize(const ScalingRecord& scaling, const Eigen::VectorXd& standardized) {
    Eigen::VectorXd out = standardized.cwiseProduct(scaling.scale) + scaling.mean;
    for (std::size_t r = 0; r < scaling.constant.size(); ++r)
        if (scaling.constant[r]) out[static_cast<Eigen::Index>(r)] = scaling.mean[static_cast<Eigen::Index>(r)];
    return out;
}

}  // namespace scm
