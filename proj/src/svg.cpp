#include "sisrnn/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace sisrnn {

namespace {

constexpr double kW = 640, kH = 400;
constexpr double kL = 60, kR = 20, kT = 40, kB = 40;  // margins

const char* kColors[] = {"#1f6fb2", "#d1495b", "#3a7d44", "#8d6a9f"};

struct Scale {
    double lo, hi;
    double px0, px1;
    double operator()(double v) const {
        const double t = hi > lo ? (v - lo) / (hi - lo) : 0.5;
        return px0 + t * (px1 - px0);
    }
};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

void open_svg(std::ofstream& out, const std::string& path, const std::string& title) {
    out.open(path);
    if (!out) throw std::runtime_error("svg: cannot open " + path);
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kW << "' height='" << kH
        << "' viewBox='0 0 " << kW << " " << kH << "'>\n"
        << "<rect width='100%' height='100%' fill='white'/>\n"
        << "<text x='" << kW / 2 << "' y='22' font-family='sans-serif' font-size='15' text-anchor='middle'>"
        << title << "</text>\n";
}

void axes(std::ofstream& out, const Scale& sx, const Scale& sy) {
    out << "<line x1='" << kL << "' y1='" << kH - kB << "' x2='" << kW - kR << "' y2='" << kH - kB
        << "' stroke='black'/>\n"
        << "<line x1='" << kL << "' y1='" << kT << "' x2='" << kL << "' y2='" << kH - kB
        << "' stroke='black'/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = sx.lo + (sx.hi - sx.lo) * i / 4.0;
        const double fy = sy.lo + (sy.hi - sy.lo) * i / 4.0;
        out << "<text x='" << sx(fx) << "' y='" << kH - kB + 16
            << "' font-family='sans-serif' font-size='11' text-anchor='middle'>" << num(fx) << "</text>\n";
        out << "<text x='" << kL - 6 << "' y='" << sy(fy) + 4
            << "' font-family='sans-serif' font-size='11' text-anchor='end'>" << num(fy) << "</text>\n";
    }
}

}  // namespace

void write_histogram_svg(const std::string& path, const std::vector<double>& edges,
                         const std::vector<double>& counts, const std::string& title) {
    if (edges.size() != counts.size() + 1 || counts.empty())
        throw std::invalid_argument("svg: histogram needs counts.size()+1 edges");
    std::ofstream out;
    open_svg(out, path, title);
    const double cmax = std::max(1.0, *std::max_element(counts.begin(), counts.end()));
    Scale sx{edges.front(), edges.back(), kL, kW - kR};
    Scale sy{0.0, cmax, kH - kB, kT};
    axes(out, sx, sy);
    for (size_t i = 0; i < counts.size(); ++i) {
        const double x0 = sx(edges[i]);
        const double x1 = sx(edges[i + 1]);
        const double y = sy(counts[i]);
        out << "<rect x='" << x0 << "' y='" << y << "' width='" << std::max(0.5, x1 - x0 - 0.5)
            << "' height='" << (kH - kB) - y << "' fill='" << kColors[0] << "'/>\n";
    }
    out << "</svg>\n";
    if (!out) throw std::runtime_error("svg: write failed for " + path);
}

void write_line_svg(const std::string& path, const std::vector<double>& xs,
                    const std::vector<std::pair<std::string, std::vector<double>>>& series,
                    const std::string& title) {
    if (xs.empty() || series.empty()) throw std::invalid_argument("svg: empty plot");
    std::ofstream out;
    open_svg(out, path, title);
    double lo = series[0].second[0], hi = lo;
    for (const auto& [name, ys] : series) {
        if (ys.size() != xs.size()) throw std::invalid_argument("svg: series '" + name + "' length mismatch");
        for (double v : ys) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (hi == lo) hi = lo + 1.0;
    Scale sx{xs.front(), xs.back(), kL, kW - kR};
    Scale sy{lo, hi, kH - kB, kT};
    axes(out, sx, sy);
    for (size_t s = 0; s < series.size(); ++s) {
        out << "<polyline fill='none' stroke='" << kColors[s % 4] << "' stroke-width='1.5' points='";
        for (size_t i = 0; i < xs.size(); ++i) out << sx(xs[i]) << "," << sy(series[s].second[i]) << " ";
        out << "'/>\n";
        out << "<text x='" << kW - kR - 4 << "' y='" << kT + 14 + 14 * s
            << "' font-family='sans-serif' font-size='12' text-anchor='end' fill='" << kColors[s % 4]
            << "'>" << series[s].first << "</text>\n";
    }
    out << "</svg>\n";
    if (!out) throw std::runtime_error("svg: write failed for " + path);
}

}  // namespace sisrnn
