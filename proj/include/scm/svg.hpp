#pragma once

#include <string>
#include <vector>

namespace scm::svg {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
    std::string color = "#1f77b4";
    double width = 1.5;
    bool dashed = false;
};

struct VerticalRule {
    double x = 0.0;
    std::string label;
};

struct LineChart {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<Series> series;
    std::vector<VerticalRule> rules;
    bool zero_line = false;
    bool legend = true;
};

/// One <path> per series, one <line class="rule"> per vertical rule. Axes,
/// ticks and frame use <line>/<rect>/<text> only, so the path count equals
/// the series count.
std::string render(const LineChart& chart);

struct Histogram {
    std::string title;
    std::string x_label;
    std::vector<double> values;
    int bins = 20;
    /// Value drawn as a highlighted marker (e.g. the treated unit's ratio).
    std::vector<double> markers;
};

std::string render(const Histogram& hist);

/// Fixed-precision number formatting used in every coordinate.
std::string num(double v);

/// Escapes &, <, >, " for text nodes and attributes.
std::string escape(const std::string& s);

}  // namespace scm::svg
