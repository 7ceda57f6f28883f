#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "mnl/error.hpp"

// Minimal static SVG charts: line plots with optional log-scaled y and bar charts.

namespace mnl::plot {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;  // non-finite entries break the line
};

struct Axes {
    std::string title;
    std::string xlabel;
    std::string ylabel;
    bool log_y = false;
    int width = 720;
    int height = 440;
};

namespace detail {

inline const char* color(std::size_t k) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    return palette[k % 10];
}

inline std::string escape(const std::string& s) {
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

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

struct Frame {
    double x0, x1, y0, y1;
    double left = 70, right = 20, top = 36, bottom = 50;
    int w, h;
    bool log_y;

    double px(double x) const { return left + (x - x0) / (x1 - x0) * (w - left - right); }
    double py(double y) const {
        const double v = log_y ? std::log10(y) : y;
        return h - bottom - (v - y0) / (y1 - y0) * (h - top - bottom);
    }
};

inline void open(std::ostringstream& s, const Axes& ax) {
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << ax.width << "\" height=\"" << ax.height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << ax.width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(ax.title)
      << "</text>\n";
}

inline void axes(std::ostringstream& s, const Frame& f, const Axes& ax) {
    s << "<rect x=\"" << f.left << "\" y=\"" << f.top << "\" width=\"" << f.w - f.left - f.right << "\" height=\""
      << f.h - f.top - f.bottom << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double xv = f.x0 + (f.x1 - f.x0) * k / 4.0;
        const double yv = f.y0 + (f.y1 - f.y0) * k / 4.0;
        const double xp = f.px(xv);
        const double yp = f.h - f.bottom - (f.h - f.top - f.bottom) * k / 4.0;
        s << "<text x=\"" << xp << "\" y=\"" << f.h - f.bottom + 16 << "\" text-anchor=\"middle\">" << fmt(xv)
          << "</text>\n";
        s << "<text x=\"" << f.left - 6 << "\" y=\"" << yp + 4 << "\" text-anchor=\"end\">"
          << fmt(f.log_y ? std::pow(10.0, yv) : yv) << "</text>\n";
    }
    s << "<text x=\"" << (f.left + f.w - f.right) / 2 << "\" y=\"" << f.h - 12 << "\" text-anchor=\"middle\">"
      << escape(ax.xlabel) << "</text>\n";
    s << "<text transform=\"translate(16," << (f.top + f.h - f.bottom) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(ax.ylabel) << "</text>\n";
}

}  // namespace detail

inline std::string line_chart(const Axes& ax, const std::vector<Series>& series) {
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size()) throw ArgumentError("line_chart: x and y lengths differ");
        for (std::size_t k = 0; k < s.x.size(); ++k) {
            if (!std::isfinite(s.y[k]) || (ax.log_y && s.y[k] <= 0.0)) continue;
            const double y = ax.log_y ? std::log10(s.y[k]) : s.y[k];
            x0 = std::min(x0, s.x[k]);
            x1 = std::max(x1, s.x[k]);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    const double pad = 0.05 * (y1 - y0);
    detail::Frame f{x0, x1, y0 - pad, y1 + pad};
    f.w = ax.width;
    f.h = ax.height;
    f.log_y = ax.log_y;

    std::ostringstream s;
    detail::open(s, ax);
    detail::axes(s, f, ax);
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& sr = series[i];
        std::string d;
        bool pen = false;
        for (std::size_t k = 0; k < sr.x.size(); ++k) {
            if (!std::isfinite(sr.y[k]) || (ax.log_y && sr.y[k] <= 0.0)) {
                pen = false;
                continue;
            }
            d += (pen ? "L" : "M") + detail::fmt(f.px(sr.x[k])) + "," + detail::fmt(f.py(sr.y[k])) + " ";
            pen = true;
        }
        s << "<path d=\"" << d << "\" fill=\"none\" stroke=\"" << detail::color(i) << "\" stroke-width=\"1.3\"/>\n";
        s << "<text x=\"" << f.w - f.right - 6 << "\" y=\"" << f.top + 16 + 14 * i << "\" text-anchor=\"end\" fill=\""
          << detail::color(i) << "\">" << detail::escape(sr.label) << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

inline std::string bar_chart(const Axes& ax, const std::vector<double>& values, double x_start = 0.0) {
    double top = 0.0;
    for (double v : values) top = std::max(top, v);
    if (top == 0.0) top = 1.0;
    const double n = static_cast<double>(std::max<std::size_t>(values.size(), 1));
    detail::Frame f{x_start - 0.5, x_start + n - 0.5, 0.0, top * 1.05};
    f.w = ax.width;
    f.h = ax.height;
    f.log_y = false;
    std::ostringstream s;
    detail::open(s, ax);
    detail::axes(s, f, ax);
    const double bw = std::max(1.0, (f.px(1.0) - f.px(0.0)) * 0.8);
    for (std::size_t k = 0; k < values.size(); ++k) {
        if (values[k] <= 0.0) continue;
        const double xc = f.px(x_start + static_cast<double>(k));
        s << "<rect x=\"" << detail::fmt(xc - bw / 2) << "\" y=\"" << detail::fmt(f.py(values[k])) << "\" width=\""
          << detail::fmt(bw) << "\" height=\"" << detail::fmt(f.py(0.0) - f.py(values[k])) << "\" fill=\""
          << detail::color(0) << "\"/>\n";
    }
    s << "</svg>\n";
    return s.str();
}

inline void write(const std::filesystem::path& path, const std::string& svg) {
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigurationError("plot: cannot write " + path.string());
    out << svg;
}

}  // namespace mnl::plot
