#pragma once

#include <string>
#include <vector>

namespace rplan {

// Minimal static SVG renderings of report files. Every function takes the report's text
// and returns a complete SVG document.

std::string layer_curve_svg(const std::string& layer_curve_csv);
std::string cosine_heatmap_svg(const std::string& cosine_csv);
std::string norms_bars_svg(const std::string& norms_csv);
std::string sweep_svg(const std::string& sweep_csv);
std::string logit_shift_svg(const std::string& logit_report_json);
std::string overthink_scatter_svg(const std::string& detection_report_json);

// Colour used for a value in [lo, hi]; values at or above hi map to the maximum.
std::string heat_colour(double value, double lo, double hi);

enum class ChartKind { layer_curve, cosine_heatmap, norms_bars, sweep, logit_shift, overthink_scatter };

struct ChartRequest {
    ChartKind kind;
    std::string report_path;
    std::string svg_path;
};

// Reads each report and writes its chart. Report files are opened read-only.
void emit_charts(const std::vector<ChartRequest>& requests);

}  // namespace rplan
