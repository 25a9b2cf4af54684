#ifndef SHUTTLE_SVG_HPP
#define SHUTTLE_SVG_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

namespace shuttle::svg {

struct Series {
    std::string label;
    std::vector<double> x, y;
    std::string color;
    bool dashed = false;
};

struct Panel {
    std::string title, xlabel, ylabel;
    std::vector<Series> series;
};

namespace detail {

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else if (c == '&') out += "&amp;";
        else out += c;
    }
    return out;
}

// 1-2-5 tick step covering the span in about five intervals
inline double tick_step(double span) {
    if (!(span > 0.0)) return 1.0;
    const double raw = span / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    for (double m : {1.0, 2.0, 5.0, 10.0})
        if (raw <= m * mag) return m * mag;
    return 10.0 * mag;
}

}  // namespace detail

/// Panels stacked vertically, one shared width. No timestamps or random ids,
/// so identical data gives identical bytes.
inline std::string render(const std::vector<Panel>& panels, double width = 720, double panel_height = 260) {
    using detail::num;
    const double ml = 70, mr = 150, mt = 30, mb = 45;
    const double height = panel_height * static_cast<double>(panels.size());
    std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" +
                      num(height) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (std::size_t p = 0; p < panels.size(); ++p) {
        const Panel& panel = panels[p];
        const double top = panel_height * static_cast<double>(p) + mt;
        const double w = width - ml - mr, h = panel_height - mt - mb;
        double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
        for (const auto& s : panel.series)
            for (std::size_t k = 0; k < s.x.size(); ++k) {
                if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k])) continue;
                x0 = std::min(x0, s.x[k]);
                x1 = std::max(x1, s.x[k]);
                y0 = std::min(y0, s.y[k]);
                y1 = std::max(y1, s.y[k]);
            }
        if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
        if (x1 == x0) x1 = x0 + 1;
        if (y1 == y0) y0 -= 0.5 * std::max(1e-12, std::abs(y0)), y1 += 0.5 * std::max(1e-12, std::abs(y1));
        const double pad = 0.05 * (y1 - y0);
        y0 -= pad;
        y1 += pad;
        const auto sx = [&](double v) { return ml + (v - x0) / (x1 - x0) * w; };
        const auto sy = [&](double v) { return top + h - (v - y0) / (y1 - y0) * h; };

        out += "<text x=\"" + num(ml) + "\" y=\"" + num(top - 10) + "\" font-size=\"13\">" +
               detail::escape(panel.title) + "</text>\n";
        out += "<rect x=\"" + num(ml) + "\" y=\"" + num(top) + "\" width=\"" + num(w) + "\" height=\"" + num(h) +
               "\" fill=\"none\" stroke=\"black\"/>\n";
        const double xs = detail::tick_step(x1 - x0), ys = detail::tick_step(y1 - y0);
        for (double t = std::ceil(x0 / xs) * xs; t <= x1 + 1e-9 * xs; t += xs)
            out += "<text x=\"" + num(sx(t)) + "\" y=\"" + num(top + h + 15) + "\" text-anchor=\"middle\">" +
                   num(std::abs(t) < 1e-12 * xs ? 0.0 : t) + "</text>\n";
        for (double t = std::ceil(y0 / ys) * ys; t <= y1 + 1e-9 * ys; t += ys) {
            out += "<line x1=\"" + num(ml) + "\" x2=\"" + num(ml + w) + "\" y1=\"" + num(sy(t)) + "\" y2=\"" +
                   num(sy(t)) + "\" stroke=\"#ddd\"/>\n";
            out += "<text x=\"" + num(ml - 5) + "\" y=\"" + num(sy(t) + 4) + "\" text-anchor=\"end\">" +
                   num(std::abs(t) < 1e-12 * ys ? 0.0 : t) + "</text>\n";
        }
        out += "<text x=\"" + num(ml + w / 2) + "\" y=\"" + num(top + h + 32) + "\" text-anchor=\"middle\">" +
               detail::escape(panel.xlabel) + "</text>\n";
        out += "<text transform=\"translate(" + num(18) + "," + num(top + h / 2) +
               ") rotate(-90)\" text-anchor=\"middle\">" + detail::escape(panel.ylabel) + "</text>\n";

        for (std::size_t si = 0; si < panel.series.size(); ++si) {
            const Series& s = panel.series[si];
            std::string pts;
            for (std::size_t k = 0; k < s.x.size(); ++k)
                if (std::isfinite(s.x[k]) && std::isfinite(s.y[k]))
                    pts += (pts.empty() ? "" : " ") + num(sx(s.x[k])) + "," + num(sy(s.y[k]));
            out += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"1.5\"" +
                   (s.dashed ? " stroke-dasharray=\"6,4\"" : "") + " points=\"" + pts + "\"/>\n";
            const double ly = top + 12 + 16 * static_cast<double>(si);
            out += "<line x1=\"" + num(ml + w + 10) + "\" x2=\"" + num(ml + w + 30) + "\" y1=\"" + num(ly) +
                   "\" y2=\"" + num(ly) + "\" stroke=\"" + s.color + "\" stroke-width=\"1.5\"" +
                   (s.dashed ? " stroke-dasharray=\"6,4\"" : "") + "/>\n";
            out += "<text x=\"" + num(ml + w + 35) + "\" y=\"" + num(ly + 4) + "\">" + detail::escape(s.label) +
                   "</text>\n";
        }
    }
    out += "</svg>\n";
    return out;
}

}  // namespace shuttle::svg

#endif
