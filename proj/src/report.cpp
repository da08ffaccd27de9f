#include "fedsim/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "fedsim/errors.hpp"

namespace fedsim {

namespace {

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::string opt_field(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

std::vector<std::string> split_csv_line(const std::string& line) {
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

} // namespace

std::string metrics_csv_header() {
    return "round,epoch,train_loss,test_acc,escape_cm,escape_tm,byz_selected_frac,drift_norm,"
           "angle_deg,temporal_cos";
}

std::string metrics_csv_row(const RoundMetrics& rm) {
    std::ostringstream out;
    out << rm.round << ',' << rm.epoch << ',' << opt_field(rm.train_loss) << ','
        << opt_field(rm.test_acc) << ',' << opt_field(rm.escape_cm) << ','
        << opt_field(rm.escape_tm) << ',' << opt_field(rm.byz_selected_frac) << ','
        << opt_field(rm.drift_norm) << ',' << opt_field(rm.angle_deg) << ','
        << opt_field(rm.temporal_cos);
    return out.str();
}

std::vector<std::pair<double, double>> csv_metric_series(const std::string& csv_text,
                                                         const std::string& metric) {
    std::istringstream in(csv_text);
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("csv: empty file");
    const auto header = split_csv_line(line);
    std::size_t col = header.size();
    std::size_t epoch_col = header.size();
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == metric) col = i;
        if (header[i] == "epoch") epoch_col = i;
    }
    if (col >= header.size()) throw ConfigError("csv: unknown metric '" + metric + "'");
    if (epoch_col >= header.size()) throw ConfigError("csv: missing epoch column");

    std::vector<std::pair<double, double>> points;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() <= std::max(col, epoch_col)) continue;
        if (fields[col].empty()) continue;
        points.emplace_back(std::stod(fields[epoch_col]), std::stod(fields[col]));
    }
    if (points.empty()) throw ConfigError("csv: no data rows for metric '" + metric + "'");
    return points;
}

std::string render_svg(const std::vector<PlotSeries>& series, const std::string& x_label,
                       const std::string& y_label) {
    constexpr int W = 800, H = 500;
    constexpr int ML = 70, MR = 160, MT = 30, MB = 50;
    static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series) {
        for (const auto& [x, y] : s.points) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    }
    if (xmin > xmax) {
        xmin = 0;
        xmax = 1;
        ymin = 0;
        ymax = 1;
    }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;

    auto px = [&](double x) { return ML + (x - xmin) / (xmax - xmin) * (W - ML - MR); };
    auto py = [&](double y) { return H - MB - (y - ymin) / (ymax - ymin) * (H - MT - MB); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" viewBox=\"0 0 " << W << ' ' << H << "\">\n";
    svg << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    svg << "<line x1=\"" << ML << "\" y1=\"" << H - MB << "\" x2=\"" << W - MR << "\" y2=\""
        << H - MB << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << ML << "\" y1=\"" << MT << "\" x2=\"" << ML << "\" y2=\"" << H - MB
        << "\" stroke=\"black\"/>\n";

    for (int i = 0; i <= 4; ++i) {
        const double fx = xmin + (xmax - xmin) * i / 4.0;
        const double fy = ymin + (ymax - ymin) * i / 4.0;
        svg << "<text x=\"" << fmt(px(fx)) << "\" y=\"" << H - MB + 20
            << "\" font-size=\"12\" text-anchor=\"middle\">" << fmt(fx) << "</text>\n";
        svg << "<text x=\"" << ML - 8 << "\" y=\"" << fmt(py(fy) + 4)
            << "\" font-size=\"12\" text-anchor=\"end\">" << fmt(fy) << "</text>\n";
    }
    svg << "<text x=\"" << (ML + W - MR) / 2 << "\" y=\"" << H - 10
        << "\" font-size=\"14\" text-anchor=\"middle\">" << x_label << "</text>\n";
    svg << "<text x=\"18\" y=\"" << (MT + H - MB) / 2
        << "\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
        << (MT + H - MB) / 2 << ")\">" << y_label << "</text>\n";

    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = kColors[s % 8];
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [x, y] : series[s].points) svg << fmt(px(x)) << ',' << fmt(py(y)) << ' ';
        svg << "\"/>\n";
        const int ly = MT + 18 * static_cast<int>(s);
        svg << "<line x1=\"" << W - MR + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - MR + 34
            << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        svg << "<text x=\"" << W - MR + 40 << "\" y=\"" << ly + 4 << "\" font-size=\"12\">"
            << series[s].label << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

} // namespace fedsim
