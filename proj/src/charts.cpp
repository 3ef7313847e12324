#include "rplan/charts.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <utility>

#include "rplan/serialization.hpp"

namespace rplan {

namespace {

constexpr double kWidth = 640, kHeight = 400, kMargin = 56;

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();

    void add(double v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    void pad() {
        if (!std::isfinite(lo)) lo = 0, hi = 1;
        if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
    }
};

// Plot area with linear axes.
class Canvas {
public:
    Canvas(std::string title, std::string x_label, std::string y_label, Range x, Range y)
        : x_(x), y_(y) {
        x_.pad();
        y_.pad();
        body_ += "<text x=\"" + num(kWidth / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" +
                 escape(title) + "</text>\n";
        body_ += "<line class=\"axis\" x1=\"" + num(kMargin) + "\" y1=\"" + num(kHeight - kMargin) + "\" x2=\"" +
                 num(kWidth - kMargin) + "\" y2=\"" + num(kHeight - kMargin) + "\" stroke=\"black\"/>\n";
        body_ += "<line class=\"axis\" x1=\"" + num(kMargin) + "\" y1=\"" + num(kMargin) + "\" x2=\"" + num(kMargin) +
                 "\" y2=\"" + num(kHeight - kMargin) + "\" stroke=\"black\"/>\n";
        body_ += "<text x=\"" + num(kWidth / 2) + "\" y=\"" + num(kHeight - 16) +
                 "\" text-anchor=\"middle\" font-size=\"12\">" + escape(x_label) + "</text>\n";
        body_ += "<text x=\"16\" y=\"" + num(kHeight / 2) + "\" transform=\"rotate(-90 16 " + num(kHeight / 2) +
                 ")\" text-anchor=\"middle\" font-size=\"12\">" + escape(y_label) + "</text>\n";
        tick_labels();
    }

    double px(double x) const { return kMargin + (x - x_.lo) / (x_.hi - x_.lo) * (kWidth - 2 * kMargin); }
    double py(double y) const { return kHeight - kMargin - (y - y_.lo) / (y_.hi - y_.lo) * (kHeight - 2 * kMargin); }

    void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& colour,
                  const std::string& cls) {
        std::string points;
        for (const auto& [x, y] : pts) {
            if (!points.empty()) points += ' ';
            points += num(px(x)) + "," + num(py(y));
        }
        body_ += "<polyline class=\"" + cls + "\" fill=\"none\" stroke=\"" + colour +
                 "\" stroke-width=\"2\" points=\"" + points + "\"/>\n";
    }

    void dot(double x, double y, const std::string& colour, const std::string& cls) {
        body_ += "<circle class=\"" + cls + "\" cx=\"" + num(px(x)) + "\" cy=\"" + num(py(y)) + "\" r=\"3\" fill=\"" +
                 colour + "\"/>\n";
    }

    void raw(const std::string& s) { body_ += s; }

    std::string finish() const { return wrap(body_); }

    static std::string wrap(const std::string& body) {
        return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" + num(kHeight) +
               "\" viewBox=\"0 0 " + num(kWidth) + " " + num(kHeight) + "\">\n" +
               "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n" + body + "</svg>\n";
    }

private:
    void tick_labels() {
        auto label = [](double v) { return format_number(std::round(v * 1000.0) / 1000.0); };
        body_ += "<text class=\"tick\" x=\"" + num(kMargin) + "\" y=\"" + num(kHeight - kMargin + 14) +
                 "\" font-size=\"10\" text-anchor=\"middle\">" + label(x_.lo) + "</text>\n";
        body_ += "<text class=\"tick\" x=\"" + num(kWidth - kMargin) + "\" y=\"" + num(kHeight - kMargin + 14) +
                 "\" font-size=\"10\" text-anchor=\"middle\">" + label(x_.hi) + "</text>\n";
        body_ += "<text class=\"tick\" x=\"" + num(kMargin - 4) + "\" y=\"" + num(kHeight - kMargin) +
                 "\" font-size=\"10\" text-anchor=\"end\">" + label(y_.lo) + "</text>\n";
        body_ += "<text class=\"tick\" x=\"" + num(kMargin - 4) + "\" y=\"" + num(kMargin + 4) +
                 "\" font-size=\"10\" text-anchor=\"end\">" + label(y_.hi) + "</text>\n";
    }

    Range x_, y_;
    std::string body_;
};

double cell_number(const std::string& cell, const char* what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(std::string("malformed report: non-numeric ") + what + " '" + cell + "'");
    }
}

json parse_report(const std::string& text) {
    json doc = json::parse(text, nullptr, false);
    if (doc.is_discarded() || !doc.is_object() || !doc.contains("schema_version")) {
        throw ConfigError("malformed report: not a schema-versioned JSON document");
    }
    return doc;
}

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};

}  // namespace

std::string heat_colour(double value, double lo, double hi) {
    const double t = hi > lo ? std::clamp((value - lo) / (hi - lo), 0.0, 1.0) : 1.0;
    // white -> dark red
    const int r = static_cast<int>(std::lround(255 - t * (255 - 103)));
    const int g = static_cast<int>(std::lround(255 - t * 255));
    const int b = static_cast<int>(std::lround(255 - t * (255 - 13)));
    char buf[8];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
    return buf;
}

std::string layer_curve_svg(const std::string& text) {
    const CsvTable t = parse_csv(text);
    const auto c_layer = t.column("layer");
    const auto c_r = t.column("pearson_r");
    std::vector<std::pair<double, double>> pts;
    Range xr, yr;
    yr.add(0.0);
    yr.add(1.0);
    for (const auto& row : t.rows) {
        const double x = cell_number(row[c_layer], "layer");
        // An undefined correlation (constant predictor) is drawn at zero.
        const double y = row[c_r].empty() ? 0.0 : cell_number(row[c_r], "pearson_r");
        pts.emplace_back(x, y);
        xr.add(x);
        yr.add(y);
    }
    Canvas c("Probe correlation by layer", "layer", "test Pearson r", xr, yr);
    c.polyline(pts, kPalette[0], "series");
    for (const auto& [x, y] : pts) c.dot(x, y, kPalette[0], "vertex");
    return c.finish();
}

std::string cosine_heatmap_svg(const std::string& text) {
    const CsvTable t = parse_csv(text);
    const std::size_t k = t.rows.size();
    if (k == 0 || t.header.size() != k + 1) throw ConfigError("malformed report: cosine matrix is not square");
    const double cell = std::min((kWidth - 2 * kMargin) / static_cast<double>(k),
                                 (kHeight - 2 * kMargin) / static_cast<double>(k));
    std::string body = "<text x=\"" + num(kWidth / 2) +
                       "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">Cosine similarity of directions</text>\n";
    for (std::size_t a = 0; a < k; ++a) {
        const double y = kMargin + static_cast<double>(a) * cell;
        body += "<text x=\"" + num(kMargin - 6) + "\" y=\"" + num(y + cell / 2) +
                "\" font-size=\"11\" text-anchor=\"end\">" + escape(t.header[a + 1]) + "</text>\n";
        for (std::size_t b = 0; b < k; ++b) {
            const double v = cell_number(t.rows[a][b + 1], "cosine");
            const double x = kMargin + static_cast<double>(b) * cell;
            body += "<rect class=\"cell\" data-row=\"" + std::to_string(a) + "\" data-col=\"" + std::to_string(b) +
                    "\" x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(cell) + "\" height=\"" +
                    num(cell) + "\" fill=\"" + heat_colour(v, -1.0, 1.0) + "\"/>\n";
            body += "<text x=\"" + num(x + cell / 2) + "\" y=\"" + num(y + cell / 2) +
                    "\" font-size=\"11\" text-anchor=\"middle\">" + num(v) + "</text>\n";
        }
    }
    return Canvas::wrap(body);
}

std::string norms_bars_svg(const std::string& text) {
    const CsvTable t = parse_csv(text);
    const auto c_layer = t.column("layer");
    const auto c_level = t.column("to_level");
    const auto c_norm = t.column("l2_norm");
    struct Bar {
        int layer;
        int level;
        double norm;
    };
    std::vector<Bar> bars;
    std::vector<int> layers, levels;
    Range yr;
    yr.add(0.0);
    for (const auto& row : t.rows) {
        Bar b{static_cast<int>(cell_number(row[c_layer], "layer")), static_cast<int>(cell_number(row[c_level], "level")),
              cell_number(row[c_norm], "l2_norm")};
        bars.push_back(b);
        yr.add(b.norm);
        if (std::ranges::find(layers, b.layer) == layers.end()) layers.push_back(b.layer);
        if (std::ranges::find(levels, b.level) == levels.end()) levels.push_back(b.level);
    }
    Range xr;
    xr.add(0.0);
    xr.add(static_cast<double>(std::max<std::size_t>(layers.size(), 1)));
    Canvas c("Direction norms by target level", "layer", "L2 norm", xr, yr);
    const double group_w = (kWidth - 2 * kMargin) / static_cast<double>(std::max<std::size_t>(layers.size(), 1));
    const double bar_w = group_w * 0.8 / static_cast<double>(std::max<std::size_t>(levels.size(), 1));
    for (const auto& b : bars) {
        const auto gi = static_cast<double>(std::ranges::find(layers, b.layer) - layers.begin());
        const auto li = static_cast<std::size_t>(std::ranges::find(levels, b.level) - levels.begin());
        const double x = kMargin + gi * group_w + group_w * 0.1 + static_cast<double>(li) * bar_w;
        const double top = c.py(b.norm);
        c.raw("<rect class=\"bar\" data-layer=\"" + std::to_string(b.layer) + "\" data-level=\"" +
              std::to_string(b.level) + "\" x=\"" + num(x) + "\" y=\"" + num(top) + "\" width=\"" + num(bar_w) +
              "\" height=\"" + num(kHeight - kMargin - top) + "\" fill=\"" + kPalette[li % 6] + "\"/>\n");
    }
    return c.finish();
}

std::string sweep_svg(const std::string& text) {
    const CsvTable t = parse_csv(text);
    const auto c_lambda = t.column("lambda");
    const auto c_reason = t.column("mean_reasoning_tokens");
    const auto c_answer = t.column("mean_answer_tokens");
    std::vector<std::pair<double, double>> reason, answer;
    Range xr, yr;
    yr.add(0.0);
    for (const auto& row : t.rows) {
        const double x = cell_number(row[c_lambda], "lambda");
        reason.emplace_back(x, cell_number(row[c_reason], "mean_reasoning_tokens"));
        answer.emplace_back(x, cell_number(row[c_answer], "mean_answer_tokens"));
        xr.add(x);
        yr.add(reason.back().second);
        yr.add(answer.back().second);
    }
    std::ranges::sort(reason);
    std::ranges::sort(answer);
    Canvas c("Token counts under steering", "lambda", "mean tokens", xr, yr);
    c.polyline(reason, kPalette[0], "series reasoning");
    c.polyline(answer, kPalette[1], "series answer");
    return c.finish();
}

std::string logit_shift_svg(const std::string& text) {
    const json doc = parse_report(text);
    Range xr, yr;
    yr.add(0.0);
    struct Box {
        double lambda;
        double min, q25, median, q75, max;
    };
    std::vector<Box> boxes;
    try {
        for (const auto& row : doc.at("rows")) {
            const auto& s = row.at("end_think_delta");
            Box b{row.at("lambda").get<double>(), s.at("min").get<double>(),    s.at("q25").get<double>(),
                  s.at("median").get<double>(),   s.at("q75").get<double>(),    s.at("max").get<double>()};
            xr.add(b.lambda);
            yr.add(b.min);
            yr.add(b.max);
            boxes.push_back(b);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed report: ") + e.what());
    }
    xr.lo -= 0.05;
    xr.hi += 0.05;
    Canvas c("Change in end-of-reasoning logit", "lambda", "delta logit", xr, yr);
    c.raw("<line class=\"zero\" x1=\"" + num(kMargin) + "\" y1=\"" + num(c.py(0)) + "\" x2=\"" +
          num(kWidth - kMargin) + "\" y2=\"" + num(c.py(0)) + "\" stroke=\"#999\" stroke-dasharray=\"4\"/>\n");
    for (const auto& b : boxes) {
        const double x = c.px(b.lambda);
        c.raw("<line class=\"whisker\" x1=\"" + num(x) + "\" y1=\"" + num(c.py(b.min)) + "\" x2=\"" + num(x) +
              "\" y2=\"" + num(c.py(b.max)) + "\" stroke=\"black\"/>\n");
        const double top = c.py(b.q75);
        c.raw("<rect class=\"box\" x=\"" + num(x - 8) + "\" y=\"" + num(top) + "\" width=\"16\" height=\"" +
              num(std::max(1.0, c.py(b.q25) - top)) + "\" fill=\"" + kPalette[0] + "\" fill-opacity=\"0.6\"/>\n");
        c.raw("<line class=\"median\" x1=\"" + num(x - 8) + "\" y1=\"" + num(c.py(b.median)) + "\" x2=\"" +
              num(x + 8) + "\" y2=\"" + num(c.py(b.median)) + "\" stroke=\"black\" stroke-width=\"2\"/>\n");
    }
    return c.finish();
}

std::string overthink_scatter_svg(const std::string& text) {
    const json doc = parse_report(text);
    std::vector<std::pair<double, double>> pts;
    Range r;
    try {
        for (const auto& p : doc.at("per_pair")) {
            pts.emplace_back(p.at("predicted_vanilla").get<double>(), p.at("predicted_overthink").get<double>());
            r.add(pts.back().first);
            r.add(pts.back().second);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed report: ") + e.what());
    }
    r.pad();
    Canvas c("Predicted length: vanilla vs overthink", "vanilla prediction", "overthink prediction", r, r);
    c.polyline({{r.lo, r.lo}, {r.hi, r.hi}}, "#999", "diagonal");
    for (const auto& [x, y] : pts) c.dot(x, y, kPalette[3], "pair");
    return c.finish();
}

void emit_charts(const std::vector<ChartRequest>& requests) {
    for (const auto& req : requests) {
        const std::string text = read_text_file(req.report_path);
        std::string svg;
        switch (req.kind) {
            case ChartKind::layer_curve: svg = layer_curve_svg(text); break;
            case ChartKind::cosine_heatmap: svg = cosine_heatmap_svg(text); break;
            case ChartKind::norms_bars: svg = norms_bars_svg(text); break;
            case ChartKind::sweep: svg = sweep_svg(text); break;
            case ChartKind::logit_shift: svg = logit_shift_svg(text); break;
            case ChartKind::overthink_scatter: svg = overthink_scatter_svg(text); break;
        }
        write_text_file(req.svg_path, svg);
    }
}

}  // namespace rplan
