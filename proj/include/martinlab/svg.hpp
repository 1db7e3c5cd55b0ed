#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "errors.hpp"

namespace martinlab {

// Static plot description. Points with non-positive coordinates on a log axis are skipped.
struct PlotSeries {
    std::string label;
    std::vector<double> x, y;
    bool line = false;  // polyline instead of markers
};

struct Plot {
    std::string kind;  // decay | lambda | llt | series
    std::string title, xlabel, ylabel, annotation;
    bool log_x = false, log_y = false;
    std::vector<PlotSeries> series;
};

namespace detail {

inline std::string num(double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.6g", v);
    return b;
}

inline std::string escape(const std::string& s) {
    std::string o;
    for (char c : s) {
        if (c == '<') o += "&lt;";
        else if (c == '>') o += "&gt;";
        else if (c == '&') o += "&amp;";
        else if (c == '-' && !o.empty() && o.back() == '-') o += " -";  // keep comments well formed
        else o += c;
    }
    return o;
}

} // namespace detail

inline std::string render_svg(const Plot& p, const std::string& config_hash) {
    using detail::num;
    const double W = 640, H = 420, L = 70, R = 20, T = 40, B = 50;
    auto tx = [&](double v) { return p.log_x ? std::log10(v) : v; };
    auto ty = [&](double v) { return p.log_y ? std::log10(v) : v; };
    auto usable = [&](double x, double y) {
        return std::isfinite(x) && std::isfinite(y) && (!p.log_x || x > 0) && (!p.log_y || y > 0);
    };
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (auto& s : p.series)
        for (size_t i = 0; i < s.x.size() && i < s.y.size(); ++i)
            if (usable(s.x[i], s.y[i])) {
                x0 = std::min(x0, tx(s.x[i]));
                x1 = std::max(x1, tx(s.x[i]));
                y0 = std::min(y0, ty(s.y[i]));
                y1 = std::max(y1, ty(s.y[i]));
            }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 - x0 < 1e-300) x0 -= 0.5, x1 += 0.5;
    if (y1 - y0 < 1e-300) y0 -= 0.5, y1 += 0.5;
    double padx = 0.04 * (x1 - x0), pady = 0.06 * (y1 - y0);
    x0 -= padx, x1 += padx, y0 -= pady, y1 += pady;
    auto px = [&](double v) { return L + (tx(v) - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double v) { return H - B - (ty(v) - y0) / (y1 - y0) * (H - T - B); };

    static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"};
    std::string o;
    o += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    o += "<!-- config_sha256=" + config_hash + " kind=" + detail::escape(p.kind) + " -->\n";
    o += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" viewBox=\"0 0 640 420\" "
         "font-family=\"sans-serif\" font-size=\"12\">\n";
    o += "<rect width=\"640\" height=\"420\" fill=\"white\"/>\n";
    o += "<text x=\"320\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" + detail::escape(p.title) + "</text>\n";
    o += "<line x1=\"" + num(L) + "\" y1=\"" + num(H - B) + "\" x2=\"" + num(W - R) + "\" y2=\"" + num(H - B) +
         "\" stroke=\"black\"/>\n";
    o += "<line x1=\"" + num(L) + "\" y1=\"" + num(T) + "\" x2=\"" + num(L) + "\" y2=\"" + num(H - B) +
         "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        double fx = x0 + (x1 - x0) * i / 4.0, fy = y0 + (y1 - y0) * i / 4.0;
        double sx = L + (W - L - R) * i / 4.0, sy = H - B - (H - T - B) * i / 4.0;
        std::string lx = num(p.log_x ? std::pow(10.0, fx) : fx), ly = num(p.log_y ? std::pow(10.0, fy) : fy);
        o += "<text x=\"" + num(sx) + "\" y=\"" + num(H - B + 16) + "\" text-anchor=\"middle\">" + lx + "</text>\n";
        o += "<text x=\"" + num(L - 6) + "\" y=\"" + num(sy + 4) + "\" text-anchor=\"end\">" + ly + "</text>\n";
    }
    o += "<text x=\"" + num((L + W - R) / 2) + "\" y=\"" + num(H - 12) + "\" text-anchor=\"middle\">" +
         detail::escape(p.xlabel) + (p.log_x ? " (log)" : "") + "</text>\n";
    o += "<text x=\"16\" y=\"" + num((T + H - B) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         num((T + H - B) / 2) + ")\">" + detail::escape(p.ylabel) + (p.log_y ? " (log)" : "") + "</text>\n";
    for (size_t k = 0; k < p.series.size(); ++k) {
        const auto& s = p.series[k];
        const char* c = colours[k % 6];
        if (s.line) {
            std::string pts;
            for (size_t i = 0; i < s.x.size() && i < s.y.size(); ++i)
                if (usable(s.x[i], s.y[i])) pts += num(px(s.x[i])) + "," + num(py(s.y[i])) + " ";
            if (!pts.empty())
                o += "<polyline fill=\"none\" stroke=\"" + std::string(c) + "\" points=\"" + pts + "\"/>\n";
        } else {
            for (size_t i = 0; i < s.x.size() && i < s.y.size(); ++i)
                if (usable(s.x[i], s.y[i]))
                    o += "<circle cx=\"" + num(px(s.x[i])) + "\" cy=\"" + num(py(s.y[i])) + "\" r=\"3\" fill=\"" + c +
                         "\"/>\n";
        }
        o += "<text x=\"" + num(W - R - 4) + "\" y=\"" + num(T + 14 + 14 * k) + "\" text-anchor=\"end\" fill=\"" + c +
             "\">" + detail::escape(s.label) + "</text>\n";
    }
    if (!p.annotation.empty())
        o += "<text x=\"" + num(L + 8) + "\" y=\"" + num(T + 14) + "\">" + detail::escape(p.annotation) + "</text>\n";
    o += "</svg>\n";
    return o;
}

} // namespace martinlab
