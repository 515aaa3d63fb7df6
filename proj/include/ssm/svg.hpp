/*
 * atria-ssm - statistical shape modelling and atrial ECG simulation.
 *
 * Copyright 2026 The atria-ssm Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include "ssm/ecg.hpp"
#include "ssm/error.hpp"
#include "ssm/io_util.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ssm::svg {

/// One box of a box plot.
struct BoxRow
{
    std::string label;
    double whisker_lo = 0.0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double whisker_hi = 0.0;
};

namespace detail {

inline std::string num(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    if (std::string_view(buf) == "-0.00") {
        return "0.00";
    }
    return buf;
}

inline std::string escape(std::string_view s)
{
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

class Canvas
{
public:
    Canvas(double w, double h)
    {
        out_ = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w) + "\" height=\"" + num(h) +
               "\" viewBox=\"0 0 " + num(w) + " " + num(h) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
        out_ += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    }

    void line(double x1, double y1, double x2, double y2, const char* stroke, double width = 1.0,
              const char* extra = "")
    {
        out_ += "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) + "\" y2=\"" + num(y2) +
                "\" stroke=\"" + stroke + "\" stroke-width=\"" + num(width) + "\"" + extra + "/>\n";
    }

    void rect(double x, double y, double w, double h, const char* fill, const char* stroke)
    {
        out_ += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) + "\" height=\"" + num(h) +
                "\" fill=\"" + fill + "\" stroke=\"" + stroke + "\"/>\n";
    }

    void text(double x, double y, std::string_view s, const char* anchor = "middle", const char* extra = "")
    {
        out_ += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" text-anchor=\"" + anchor + "\"" + extra + ">" +
                escape(s) + "</text>\n";
    }

    void polyline(std::span<const double> xs, std::span<const double> ys, const char* stroke, bool markers = false)
    {
        out_ += "<polyline fill=\"none\" stroke=\"" + std::string(stroke) + "\" points=\"";
        for (std::size_t i = 0; i < xs.size(); ++i) {
            out_ += (i ? " " : "") + num(xs[i]) + "," + num(ys[i]);
        }
        out_ += "\"/>\n";
        if (markers) {
            for (std::size_t i = 0; i < xs.size(); ++i) {
                out_ += "<circle cx=\"" + num(xs[i]) + "\" cy=\"" + num(ys[i]) + "\" r=\"2.5\" fill=\"" + stroke + "\"/>\n";
            }
        }
    }

    std::string finish() { return out_ + "</svg>\n"; }

private:
    std::string out_;
};

/// Maps [lo, hi] onto [a, b] (b may be smaller than a for screen y).
struct Axis
{
    double lo, hi, a, b;
    double operator()(double v) const { return hi == lo ? 0.5 * (a + b) : a + (v - lo) / (hi - lo) * (b - a); }
};

inline double nice_step(double range)
{
    const double raw = range / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    for (double m : {1.0, 2.0, 5.0}) {
        if (m * mag >= raw) {
            return m * mag;
        }
    }
    return 10.0 * mag;
}

inline void y_ticks(Canvas& c, const Axis& y, double x0, double x1)
{
    const double step = nice_step(y.hi - y.lo);
    const auto first = static_cast<long>(std::ceil(y.lo / step - 1e-9));
    for (long k = first; k * step <= y.hi + 1e-9 * step; ++k) {
        const double v = static_cast<double>(k) * step;
        c.line(x0, y(v), x1, y(v), "#dddddd");
        c.text(x0 - 4, y(v) + 4, num(v), "end");
    }
}

} // namespace detail

/// Box plot, one box per row, whiskers and quartiles as given.
inline std::string boxplot(std::span<const BoxRow> rows, std::string_view title, std::string_view y_label)
{
    if (rows.empty()) {
        throw InvalidInput("boxplot: no rows");
    }
    const double w = std::max(320.0, 80.0 + 36.0 * static_cast<double>(rows.size()));
    const double h = 320.0;
    double lo = rows[0].whisker_lo;
    double hi = rows[0].whisker_hi;
    for (const auto& r : rows) {
        lo = std::min(lo, r.whisker_lo);
        hi = std::max(hi, r.whisker_hi);
    }
    lo = std::min(lo, 0.0);
    if (hi <= lo) {
        hi = lo + 1.0;
    }
    detail::Canvas c(w, h);
    const detail::Axis y{lo, hi * 1.05, h - 40.0, 30.0};
    detail::y_ticks(c, y, 60.0, w - 10.0);
    c.text(w / 2, 18, title);
    const std::string rotate = " transform=\"rotate(-90 14 " + detail::num(h / 2) + ")\"";
    c.text(14, h / 2, y_label, "middle", rotate.c_str());
    const double slot = (w - 70.0) / static_cast<double>(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        const double cx = 65.0 + slot * (static_cast<double>(i) + 0.5);
        const double bw = std::min(24.0, 0.6 * slot);
        c.line(cx, y(r.whisker_lo), cx, y(r.q1), "black");
        c.line(cx, y(r.q3), cx, y(r.whisker_hi), "black");
        c.line(cx - bw / 4, y(r.whisker_lo), cx + bw / 4, y(r.whisker_lo), "black");
        c.line(cx - bw / 4, y(r.whisker_hi), cx + bw / 4, y(r.whisker_hi), "black");
        c.rect(cx - bw / 2, y(r.q3), bw, y(r.q1) - y(r.q3), "#cfe0f3", "black");
        c.line(cx - bw / 2, y(r.median), cx + bw / 2, y(r.median), "#c0392b", 2.0);
        c.text(cx, h - 24, r.label);
    }
    return c.finish();
}

/// Line plot of y against 1..n with the y axis fixed to [y_lo, y_hi].
inline std::string line_plot(std::span<const double> values, std::string_view title, std::string_view x_label,
                             double y_lo = 0.0, double y_hi = 1.0)
{
    if (values.empty()) {
        throw InvalidInput("line plot: no values");
    }
    const double w = 420.0;
    const double h = 300.0;
    detail::Canvas c(w, h);
    const auto n = static_cast<double>(values.size());
    const detail::Axis x{1.0, std::max(2.0, n), 60.0, w - 20.0};
    const detail::Axis y{y_lo, y_hi, h - 40.0, 30.0};
    detail::y_ticks(c, y, 60.0, w - 20.0);
    c.text(w / 2, 18, title);
    c.text(w / 2, h - 8, x_label);
    std::vector<double> xs;
    std::vector<double> ys;
    for (std::size_t i = 0; i < values.size(); ++i) {
        xs.push_back(x(static_cast<double>(i + 1)));
        ys.push_back(y(values[i]));
        c.text(xs.back(), h - 26, std::to_string(i + 1));
    }
    c.polyline(xs, ys, "#1f5f99", true);
    return c.finish();
}

/**
 * Twelve panels, one per lead, with the per-lead onset/offset in grey and the
 * earliest onset and latest offset over all leads in red on every panel.
 */
inline std::string lead_plot(const EcgTraceSet& traces, const PWave& p)
{
    const double pw = 260.0;
    const double ph = 110.0;
    const double w = 3 * pw + 20.0;
    const double h = 4 * ph + 40.0;
    detail::Canvas c(w, h);
    char title[96];
    std::snprintf(title, sizeof title, "P wave %.1f ms (onset %.1f ms, offset %.1f ms)", p.duration(), p.onset, p.offset);
    c.text(w / 2, 18, title);
    double peak = 0.0;
    for (const auto& l : traces.leads) {
        for (double v : l) {
            peak = std::max(peak, std::abs(v));
        }
    }
    if (peak == 0.0) {
        peak = 1.0;
    }
    const double t_end = traces.dt * static_cast<double>(std::max<std::size_t>(traces.num_samples(), 2) - 1);
    for (std::size_t l = 0; l < lead_count; ++l) {
        const double ox = 10.0 + pw * static_cast<double>(l % 3);
        const double oy = 30.0 + ph * static_cast<double>(l / 3);
        const detail::Axis x{0.0, t_end, ox + 8.0, ox + pw - 8.0};
        const detail::Axis y{-peak, peak, oy + ph - 10.0, oy + 10.0};
        c.rect(ox + 2.0, oy + 2.0, pw - 4.0, ph - 4.0, "none", "#cccccc");
        c.line(x(0.0), y(0.0), x(t_end), y(0.0), "#e5e5e5");
        for (double t : {traces.onset[l], traces.offset[l]}) {
            if (std::isfinite(t)) {
                c.line(x(t), oy + 8.0, x(t), oy + ph - 8.0, "#999999", 1.0, " stroke-dasharray=\"3,3\"");
            }
        }
        c.line(x(p.onset), oy + 8.0, x(p.onset), oy + ph - 8.0, "#d62728", 1.5);
        c.line(x(p.offset), oy + 8.0, x(p.offset), oy + ph - 8.0, "#d62728", 1.5);
        std::vector<double> xs;
        std::vector<double> ys;
        for (std::size_t k = 0; k < traces.leads[l].size(); ++k) {
            xs.push_back(x(traces.dt * static_cast<double>(k)));
            ys.push_back(y(traces.leads[l][k]));
        }
        c.polyline(xs, ys, "black");
        c.text(ox + 12.0, oy + 20.0, lead_names[l], "start", " font-weight=\"bold\"");
    }
    return c.finish();
}

/// Rows of a generalization CSV written by write_generalization_csv.
inline std::vector<BoxRow> read_generalization_csv(std::string_view text, const std::string& source)
{
    io::LineTokenizer tok(text, source);
    std::string_view line;
    if (!tok.next_line(line) || line.rfind("instance,median,q1,q3,p95,whisker_lo,whisker_hi", 0) != 0) {
        throw ParseError(source, tok.line_number(), "not a generalization table");
    }
    std::vector<BoxRow> rows;
    while (tok.next_line(line)) {
        std::string s(line);
        std::replace(s.begin(), s.end(), ',', ' ');
        const auto f = io::split_ws(s);
        BoxRow r;
        double p95 = 0.0;
        if (f.size() < 7 || !io::parse_double(f[1], r.median) || !io::parse_double(f[2], r.q1) ||
            !io::parse_double(f[3], r.q3) || !io::parse_double(f[4], p95) || !io::parse_double(f[5], r.whisker_lo) ||
            !io::parse_double(f[6], r.whisker_hi)) {
            tok.fail("bad generalization row");
        }
        r.label = std::string(f[0]);
        rows.push_back(std::move(r));
    }
    return rows;
}

/// Second column of a compactness CSV written by write_compactness_csv.
inline std::vector<double> read_compactness_csv(std::string_view text, const std::string& source)
{
    io::LineTokenizer tok(text, source);
    std::string_view line;
    if (!tok.next_line(line) || io::trim(line) != "modes,cumulative_variance") {
        throw ParseError(source, tok.line_number(), "not a compactness table");
    }
    std::vector<double> out;
    while (tok.next_line(line)) {
        const auto comma = line.find(',');
        double v = 0.0;
        if (comma == std::string_view::npos || !io::parse_double(io::trim(line.substr(comma + 1)), v)) {
            tok.fail("bad compactness row");
        }
        out.push_back(v);
    }
    return out;
}

inline constexpr std::array<const char*, 3> plot_kinds = {"generalization", "compactness", "traces"};

/// Renders an artifact written by the pipeline.
inline std::string plot_artifact(const std::filesystem::path& path, std::string_view kind, double threshold = 0.05)
{
    const auto text = io::read_file(path);
    if (kind == "generalization") {
        const auto rows = read_generalization_csv(text, path.string());
        return boxplot(rows, "Generalization (leave one out)", "distance (mm)");
    }
    if (kind == "compactness") {
        const auto curve = read_compactness_csv(text, path.string());
        return line_plot(curve, "Compactness", "number of modes");
    }
    if (kind == "traces") {
        auto traces = parse_traces_csv(text, path.string());
        const auto p = p_wave_duration(traces, threshold);
        return lead_plot(traces, p);
    }
    throw InvalidInput("unknown plot kind '" + std::string(kind) + "' (expected generalization, compactness or traces)");
}

} // namespace ssm::svg
