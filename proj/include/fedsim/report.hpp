#ifndef FEDSIM_REPORT_HPP
#define FEDSIM_REPORT_HPP

#include <string>
#include <utility>
#include <vector>

#include "fedsim/sim.hpp"

namespace fedsim {

// CSV schema shared by cmd_run and cmd_plot.
std::string metrics_csv_header();
std::string metrics_csv_row(const RoundMetrics& rm); // absent metrics as empty fields

// Extracts (epoch, metric) points from a metrics CSV; rows with an empty
// metric field are skipped. Throws ConfigError on an unknown metric name or a
// header-only file.
std::vector<std::pair<double, double>> csv_metric_series(const std::string& csv_text,
                                                         const std::string& metric);

struct PlotSeries {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

// Static SVG line chart, one polyline per series; byte-deterministic for
// identical inputs.
std::string render_svg(const std::vector<PlotSeries>& series, const std::string& x_label,
                       const std::string& y_label);

} // namespace fedsim

#endif
