#include "scm/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace scm::svg {

namespace {

constexpr double kWidth = 720, kHeight = 440;
constexpr double kLeft = 70, kRight = 170, kTop = 40, kBottom = 60;

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    void add(double v) {
        if (!std::isfinite(v)) return;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    void finish() {
        if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
        if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
    }
};

/// Round step (1, 2 or 5 times a power of ten) giving about `target` ticks.
double nice_step(double span, int target) {
    const double raw = span / target;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    for (double m : {1.0, 2.0, 5.0})
        if (m * mag >= raw) return m * mag;
    return 10.0 * mag;
}

std::vector<double> ticks(const Range& r, int target) {
    const double step = nice_step(r.hi - r.lo, target);
    std::vector<double> out;
    for (double t = std::ceil(r.lo / step) * step; t <= r.hi + 1e-9 * step; t += step)
        out.push_back(std::abs(t) < 1e-12 * step ? 0.0 : t);
    return out;
}

std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

struct Frame {
    Range x, y;
    double sx(double v) const { return kLeft + (v - x.lo) / (x.hi - x.lo) * (kWidth - kLeft - kRight); }
    double sy(double v) const { return kTop + (y.hi - v) / (y.hi - y.lo) * (kHeight - kTop - kBottom); }
};

void header(std::ostringstream& o, const std::string& title) {
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kWidth) << "\" height=\"" << num(kHeight)
      << "\" viewBox=\"0 0 " << num(kWidth) << ' ' << num(kHeight) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    o << "<rect x=\"0\" y=\"0\" width=\"" << num(kWidth) << "\" height=\"" << num(kHeight) << "\" fill=\"white\"/>\n";
    o << "<text x=\"" << num(kWidth / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
      << "</text>\n";
}

void axes(std::ostringstream& o, const Frame& f, const std::string& xl, const std::string& yl) {
    const double x0 = kLeft, x1 = kWidth - kRight, y0 = kTop, y1 = kHeight - kBottom;
    o << "<rect x=\"" << num(x0) << "\" y=\"" << num(y0) << "\" width=\"" << num(x1 - x0) << "\" height=\""
      << num(y1 - y0) << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (double t : ticks(f.x, 8)) {
        o << "<line class=\"tick\" x1=\"" << num(f.sx(t)) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(f.sx(t))
          << "\" y2=\"" << num(y1 + 4) << "\" stroke=\"#444\"/>\n";
        o << "<text x=\"" << num(f.sx(t)) << "\" y=\"" << num(y1 + 16) << "\" text-anchor=\"middle\">"
          << tick_label(t) << "</text>\n";
    }
    for (double t : ticks(f.y, 6)) {
        o << "<line class=\"tick\" x1=\"" << num(x0 - 4) << "\" y1=\"" << num(f.sy(t)) << "\" x2=\"" << num(x0)
          << "\" y2=\"" << num(f.sy(t)) << "\" stroke=\"#444\"/>\n";
        o << "<text x=\"" << num(x0 - 7) << "\" y=\"" << num(f.sy(t) + 4) << "\" text-anchor=\"end\">"
          << tick_label(t) << "</text>\n";
    }
    o << "<text x=\"" << num((x0 + x1) / 2) << "\" y=\"" << num(kHeight - 18) << "\" text-anchor=\"middle\">"
      << escape(xl) << "</text>\n";
    o << "<text x=\"18\" y=\"" << num((y0 + y1) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
      << num((y0 + y1) / 2) << ")\">" << escape(yl) << "</text>\n";
}

}  // namespace

std::string num(double v) {
    if (!std::isfinite(v)) throw std::invalid_argument("svg: non-finite coordinate");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    std::string s = buf;
    if (s == "-0.00") s = "0.00";
    return s;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string render(const LineChart& chart) {
    Frame f;
    for (const auto& s : chart.series) {
        if (s.x.size() != s.y.size()) throw std::invalid_argument("svg: series '" + s.label + "' has mismatched x/y");
        for (double v : s.x) f.x.add(v);
        for (double v : s.y) f.y.add(v);
    }
    for (const auto& r : chart.rules) f.x.add(r.x);
    if (chart.zero_line) f.y.add(0.0);
    f.x.finish();
    f.y.finish();
    const double pad = 0.05 * (f.y.hi - f.y.lo);
    f.y.lo -= pad;
    f.y.hi += pad;

    std::ostringstream o;
    header(o, chart.title);
    axes(o, f, chart.x_label, chart.y_label);
    if (chart.zero_line)
        o << "<line class=\"zero\" x1=\"" << num(kLeft) << "\" y1=\"" << num(f.sy(0.0)) << "\" x2=\""
          << num(kWidth - kRight) << "\" y2=\"" << num(f.sy(0.0)) << "\" stroke=\"#999\" stroke-dasharray=\"2,2\"/>\n";
    for (const auto& r : chart.rules) {
        o << "<line class=\"rule\" x1=\"" << num(f.sx(r.x)) << "\" y1=\"" << num(kTop) << "\" x2=\"" << num(f.sx(r.x))
          << "\" y2=\"" << num(kHeight - kBottom) << "\" stroke=\"#d62728\" stroke-dasharray=\"5,3\"/>\n";
        o << "<text x=\"" << num(f.sx(r.x) + 3) << "\" y=\"" << num(kTop + 12) << "\" fill=\"#d62728\">"
          << escape(r.label) << "</text>\n";
    }
    for (const auto& s : chart.series) {
        o << "<path d=\"";
        bool pen_down = false;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.y[i])) {
                pen_down = false;
                continue;
            }
            o << (pen_down ? " L" : (i ? " M" : "M")) << num(f.sx(s.x[i])) << ',' << num(f.sy(s.y[i]));
            pen_down = true;
        }
        o << "\" fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"" << num(s.width) << '"';
        if (s.dashed) o << " stroke-dasharray=\"6,3\"";
        o << "><title>" << escape(s.label) << "</title></path>\n";
    }
    if (chart.legend) {
        double y = kTop + 10;
        for (const auto& s : chart.series) {
            if (s.label.empty()) continue;
            o << "<line class=\"legend\" x1=\"" << num(kWidth - kRight + 12) << "\" y1=\"" << num(y) << "\" x2=\""
              << num(kWidth - kRight + 32) << "\" y2=\"" << num(y) << "\" stroke=\"" << s.color
              << "\" stroke-width=\"2\"" << (s.dashed ? " stroke-dasharray=\"6,3\"" : "") << "/>\n";
            o << "<text x=\"" << num(kWidth - kRight + 36) << "\" y=\"" << num(y + 4) << "\">" << escape(s.label)
              << "</text>\n";
            y += 16;
        }
    }
    o << "</svg>\n";
    return o.str();
}

std::string render(const Histogram& h) {
    if (h.bins < 1) throw std::invalid_argument("svg: histogram needs >= 1 bin");
    Frame f;
    for (double v : h.values) f.x.add(v);
    for (double v : h.markers) f.x.add(v);
    f.x.finish();
    const double width = (f.x.hi - f.x.lo) / h.bins;
    std::vector<int> counts(static_cast<std::size_t>(h.bins), 0);
    for (double v : h.values) {
        if (!std::isfinite(v)) continue;
        auto b = static_cast<int>(std::floor((v - f.x.lo) / width));
        b = std::clamp(b, 0, h.bins - 1);
        ++counts[static_cast<std::size_t>(b)];
    }
    f.y.lo = 0.0;
    f.y.hi = std::max(1, *std::max_element(counts.begin(), counts.end())) * 1.1;

    std::ostringstream o;
    header(o, h.title);
    axes(o, f, h.x_label, "count");
    for (int b = 0; b < h.bins; ++b) {
        const double x0 = f.sx(f.x.lo + b * width), x1 = f.sx(f.x.lo + (b + 1) * width);
        const double top = f.sy(counts[static_cast<std::size_t>(b)]);
        o << "<rect class=\"bar\" x=\"" << num(x0) << "\" y=\"" << num(top) << "\" width=\"" << num(x1 - x0)
          << "\" height=\"" << num(f.sy(0.0) - top) << "\" fill=\"#9ecae1\" stroke=\"#3182bd\"/>\n";
    }
    for (double m : h.markers) {
        if (!std::isfinite(m)) continue;
        o << "<line class=\"rule\" x1=\"" << num(f.sx(m)) << "\" y1=\"" << num(kTop) << "\" x2=\"" << num(f.sx(m))
          << "\" y2=\"" << num(kHeight - kBottom) << "\" stroke=\"#d62728\" stroke-width=\"2\"/>\n";
    }
    o << "</svg>\n";
    return o.str();
}

}  // namespace scm::svg
