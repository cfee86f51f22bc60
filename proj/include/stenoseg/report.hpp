#pragma once

// Report assembly: merge metrics CSVs, sort by F1, and render an SVG bubble
// chart (y = F1, x = model index, radius proportional to sqrt(params) so
// bubble area tracks parameter count).

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "stenoseg/metrics.hpp"

namespace stenoseg {

struct ReportRow {
    std::string model;
    std::size_t params = 0;
    Metric precision, recall, f1;
};

namespace detail {
inline Metric parse_metric_field(const std::string& s, const char* column) {
    if (s == "undefined") return {};
    try {
        return {std::stod(s), true};
    } catch (...) {
        throw IOError(std::string("bad value in column '") + column + "': " + s);
    }
}
}  // namespace detail

inline std::vector<ReportRow> parse_metrics_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw IOError("empty metrics CSV");
    // strict header check; name the first offending column
    {
        const std::vector<std::string> want{"model", "params", "precision", "recall", "f1"};
        std::istringstream hs(line);
        std::string col;
        std::size_t i = 0;
        while (std::getline(hs, col, ',')) {
            if (i >= want.size() || col != want[i])
                throw IOError("metrics CSV schema mismatch at column '" + col + "'");
            ++i;
        }
        if (i != want.size())
            throw IOError("metrics CSV schema mismatch: missing column '" + want[i] + "'");
    }
    std::vector<ReportRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string model, params, p, r, f;
        if (!std::getline(ls, model, ',') || !std::getline(ls, params, ',') ||
            !std::getline(ls, p, ',') || !std::getline(ls, r, ',') || !std::getline(ls, f, ','))
            throw IOError("malformed metrics CSV row: " + line);
        ReportRow row;
        row.model = model;
        try {
            row.params = std::stoull(params);
        } catch (...) {
            throw IOError("bad value in column 'params': " + params);
        }
        row.precision = detail::parse_metric_field(p, "precision");
        row.recall = detail::parse_metric_field(r, "recall");
        row.f1 = detail::parse_metric_field(f, "f1");
        rows.push_back(std::move(row));
    }
    return rows;
}

// Ascending by F1; undefined F1 sorts first. Stable for reproducible output.
inline std::vector<ReportRow> merge_reports(std::vector<ReportRow> rows) {
    std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
        if (a.f1.defined != b.f1.defined) return !a.f1.defined;
        return a.f1.value < b.f1.value;
    });
    return rows;
}

inline std::string render_merged_csv(const std::vector<ReportRow>& rows) {
    std::ostringstream out;
    out << metrics_csv_header() << "\n";
    auto fmt = [](const Metric& m) {
        if (!m.defined) return std::string("undefined");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", m.value);
        return std::string(buf);
    };
    for (const auto& r : rows)
        out << r.model << "," << r.params << "," << fmt(r.precision) << "," << fmt(r.recall)
            << "," << fmt(r.f1) << "\n";
    return out.str();
}

inline double bubble_radius(std::size_t params, double scale) {
    return scale * std::sqrt(double(params));
}

inline std::string render_bubble_svg(const std::vector<ReportRow>& rows) {
    const double width = 800, height = 420, left = 80, bottom = 40, top = 30;
    const double plot_h = height - bottom - top;
    std::size_t max_params = 1;
    for (const auto& r : rows) max_params = std::max(max_params, r.params);
    const double scale = 36.0 / std::sqrt(double(max_params));
    const double dx = rows.empty() ? 0 : (width - left - 60) / double(rows.size());

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\">\n";
    out << "  <line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
        << (top + plot_h) << "\" stroke=\"black\"/>\n";
    out << "  <line x1=\"" << left << "\" y1=\"" << (top + plot_h) << "\" x2=\"" << (width - 40)
        << "\" y2=\"" << (top + plot_h) << "\" stroke=\"black\"/>\n";
    out << "  <text x=\"12\" y=\"" << (top + plot_h / 2) << "\" font-size=\"12\">F1</text>\n";
    std::size_t i = 0;
    for (const auto& r : rows) {
        if (!r.f1.defined) {
            ++i;
            continue;
        }
        const double cx = left + dx * (double(i) + 0.5);
        const double cy = top + (1.0 - r.f1.value) * plot_h;
        char buf[256];
        std::snprintf(buf, sizeof buf,
                      "  <circle cx=\"%.2f\" cy=\"%.2f\" r=\"%.4f\" fill=\"steelblue\" "
                      "fill-opacity=\"0.6\"><title>%s: f1=%.4f params=%zu</title></circle>\n",
                      cx, cy, bubble_radius(r.params, scale), r.model.c_str(), r.f1.value,
                      r.params);
        out << buf;
        std::snprintf(buf, sizeof buf,
                      "  <text x=\"%.2f\" y=\"%.2f\" font-size=\"11\" "
                      "text-anchor=\"middle\">%s</text>\n",
                      cx, top + plot_h + 16, r.model.c_str());
        out << buf;
        ++i;
    }
    out << "</svg>\n";
    return out.str();
}

}  // namespace stenoseg
