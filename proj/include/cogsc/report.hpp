#pragma once

// Metrics rows, CSV output, SVG line plots and detection records.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cogsc/detector.hpp"

namespace cogsc::report {

struct MetricsRow {
    std::string condition;
    std::string channel;
    double snr_db = 0;
    double ratio = 0;  // achieved k / n
    double map = -1, ap50 = -1, ap75 = -1, ap_s = -1, ap_m = -1, ap_l = -1;
};

inline const char* kCsvHeader = "condition,channel,snr_db,ratio,mAP,AP50,AP75,AP_S,AP_M,AP_L";

inline std::string fixed(double v, int digits = 6) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    std::string s = buf;
    if (s == "-0." + std::string(static_cast<std::size_t>(digits), '0')) s.erase(0, 1);
    return s;
}

/// Value as it will appear in the CSV, so downstream arithmetic matches the file.
inline double rounded(double v, int digits = 6) { return std::isinf(v) ? v : std::stod(fixed(v, digits)); }

inline std::string csv_line(const MetricsRow& r) {
    std::ostringstream os;
    os << r.condition << ',' << r.channel << ',' << fixed(r.snr_db, 2) << ',' << fixed(r.ratio, 6) << ','
       << fixed(r.map) << ',' << fixed(r.ap50) << ',' << fixed(r.ap75) << ',' << fixed(r.ap_s) << ','
       << fixed(r.ap_m) << ',' << fixed(r.ap_l);
    return os.str();
}

inline void write_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
    os << kCsvHeader << '\n';
    for (const auto& r : rows) os << csv_line(r) << '\n';
}

inline void write_csv_file(const std::string& path, const std::vector<MetricsRow>& rows) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write '" + path + "'");
    write_csv(os, rows);
}

/// Splits a CSV line on commas (no quoting is ever produced).
inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

inline std::vector<MetricsRow> read_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != kCsvHeader) throw std::runtime_error("metrics CSV: unexpected header");
    std::vector<MetricsRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto f = split_csv(line);
        if (f.size() != 10) throw std::runtime_error("metrics CSV: expected 10 fields in '" + line + "'");
        rows.push_back({f[0], f[1], std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5]),
                        std::stod(f[6]), std::stod(f[7]), std::stod(f[8]), std::stod(f[9])});
    }
    return rows;
}

// ---------------------------------------------------------------------------
// SVG line plot

struct Series {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

inline std::string xml_escape(const std::string& s) {
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

inline std::string svg_line_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                                 const std::vector<Series>& series) {
    const double W = 640, H = 420, left = 70, right = 190, top = 40, bottom = 60;
    double x0 = 1e300, x1 = -1e300, y0 = 0, y1 = 1e-9;
    for (const auto& s : series)
        for (auto [x, y] : s.points) {
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y1 = std::max(y1, y);
        }
    if (!(x0 < x1)) {
        x0 -= 1;
        x1 += 1;
    }
    y1 = std::max(0.05, std::ceil(y1 * 20) / 20);
    auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * (W - left - right); };
    auto py = [&](double y) { return H - bottom - (y - y0) / (y1 - y0) * (H - top - bottom); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 "
       << W << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title)
       << "</text>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\"" << H - bottom
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << H - bottom
       << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double xv = x0 + (x1 - x0) * i / 5.0, yv = y0 + (y1 - y0) * i / 5.0;
        os << "<text x=\"" << fixed(px(xv), 1) << "\" y=\"" << H - bottom + 18 << "\" text-anchor=\"middle\">"
           << fixed(xv, 1) << "</text>\n";
        os << "<text x=\"" << left - 8 << "\" y=\"" << fixed(py(yv) + 4, 1) << "\" text-anchor=\"end\">"
           << fixed(yv, 2) << "</text>\n";
        os << "<line x1=\"" << left << "\" y1=\"" << fixed(py(yv), 1) << "\" x2=\"" << W - right << "\" y2=\""
           << fixed(py(yv), 1) << "\" stroke=\"#e0e0e0\"/>\n";
    }
    os << "<text x=\"" << (left + W - right) / 2 << "\" y=\"" << H - 18 << "\" text-anchor=\"middle\">"
       << xml_escape(xlabel) << "</text>\n";
    os << "<text x=\"18\" y=\"" << (top + H - bottom) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
       << (top + H - bottom) / 2 << ")\">" << xml_escape(ylabel) << "</text>\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        const char* c = colors[i % 8];
        os << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" data-series=\"" << xml_escape(s.label)
           << "\" points=\"";
        for (std::size_t k = 0; k < s.points.size(); ++k)
            os << (k ? " " : "") << fixed(px(s.points[k].first), 1) << ',' << fixed(py(s.points[k].second), 1);
        os << "\"/>\n";
        for (auto [x, y] : s.points)
            os << "<circle cx=\"" << fixed(px(x), 1) << "\" cy=\"" << fixed(py(y), 1) << "\" r=\"3\" fill=\"" << c
               << "\"/>\n";
        const double ly = top + 10 + 18.0 * static_cast<double>(i);
        os << "<line x1=\"" << W - right + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - right + 32 << "\" y2=\"" << ly
           << "\" stroke=\"" << c << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << W - right + 38 << "\" y=\"" << ly + 4 << "\">" << xml_escape(s.label) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

/// Series label used for a (condition, ratio, channel) group of metrics rows.
inline std::string series_label(const MetricsRow& r) {
    return r.condition + " R=" + fixed(r.ratio, 4) + " " + r.channel;
}

/// mAP versus SNR, one series per (condition, ratio) for the given channel, in first-seen order.
inline std::vector<Series> series_for_channel(const std::vector<MetricsRow>& rows, const std::string& channel) {
    std::vector<Series> out;
    std::map<std::string, std::size_t> index;
    for (const auto& r : rows) {
        if (r.channel != channel) continue;
        const auto label = series_label(r);
        auto [it, inserted] = index.emplace(label, out.size());
        if (inserted) out.push_back({label, {}});
        out[it->second].points.emplace_back(r.snr_db, r.map);
    }
    for (auto& s : out) std::stable_sort(s.points.begin(), s.points.end());
    return out;
}

// ---------------------------------------------------------------------------
// Detection records: image_id, class, confidence, x, y, w, h

inline void write_detections(std::ostream& os, const std::vector<detector::Detection>& dets,
                             const std::vector<std::string>& class_names) {
    for (const auto& d : dets)
        os << d.image_id << '\t' << class_names.at(d.class_id) << '\t' << fixed(d.confidence) << '\t'
           << fixed(d.box.x, 3) << '\t' << fixed(d.box.y, 3) << '\t' << fixed(d.box.w, 3) << '\t'
           << fixed(d.box.h, 3) << '\n';
}

}  // namespace cogsc::report
