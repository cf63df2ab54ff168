// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "driftlab/error.hpp"
#include "driftlab/harness/harness.hpp"

namespace driftlab::harness {

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string px(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
}

std::string escape_xml(const std::string& s) {
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

void write_file(const std::filesystem::path& path, const std::string& body, std::vector<std::filesystem::path>& out) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + path.string());
    f << body;
    if (!f) throw DataError("failed writing " + path.string());
    out.push_back(path);
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

/// Minimal plotting surface: a fixed-size frame with linear axes.
class Svg {
public:
    Svg(std::string title, std::pair<double, double> xr, std::pair<double, double> yr)
        : title_(std::move(title)), xr_(xr), yr_(yr) {}

    double x(double v) const { return kLeft + (v - xr_.first) / (xr_.second - xr_.first) * (kWidth - kLeft - kRight); }
    double y(double v) const {
        return kHeight - kBottom - (v - yr_.first) / (yr_.second - yr_.first) * (kHeight - kTop - kBottom);
    }

    void line(double x0, double y0, double x1, double y1, const char* color, double width = 1.0) {
        body_ << "<line x1=\"" << px(x(x0)) << "\" y1=\"" << px(y(y0)) << "\" x2=\"" << px(x(x1)) << "\" y2=\""
              << px(y(y1)) << "\" stroke=\"" << color << "\" stroke-width=\"" << width << "\"/>\n";
    }
    void polyline(const std::vector<std::pair<double, double>>& pts, const char* color) {
        if (pts.empty()) return;
        body_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.2\" points=\"";
        for (const auto& [a, b] : pts) body_ << px(x(a)) << ',' << px(y(b)) << ' ';
        body_ << "\"/>\n";
    }
    void rect(double x0, double y0, double x1, double y1, const std::string& fill) {
        const double l = std::min(x(x0), x(x1)), t = std::min(y(y0), y(y1));
        body_ << "<rect x=\"" << px(l) << "\" y=\"" << px(t) << "\" width=\"" << px(std::fabs(x(x1) - x(x0)))
              << "\" height=\"" << px(std::fabs(y(y1) - y(y0))) << "\" fill=\"" << fill << "\"/>\n";
    }
    void dot(double a, double b, const char* color) {
        body_ << "<circle cx=\"" << px(x(a)) << "\" cy=\"" << px(y(b)) << "\" r=\"2.5\" fill=\"" << color
              << "\" fill-opacity=\"0.7\"/>\n";
    }
    void text(double a, double b, const std::string& s, const char* anchor = "start", int size = 11) {
        body_ << "<text x=\"" << px(x(a)) << "\" y=\"" << px(y(b)) << "\" font-size=\"" << size
              << "\" text-anchor=\"" << anchor << "\">" << escape_xml(s) << "</text>\n";
    }
    void legend(std::size_t slot, const std::string& label, const char* color) {
        const double top = kTop + 14.0 * static_cast<double>(slot);
        body_ << "<rect x=\"" << px(kWidth - kRight + 8) << "\" y=\"" << px(top) << "\" width=\"10\" height=\"10\" fill=\""
              << color << "\"/>\n<text x=\"" << px(kWidth - kRight + 22) << "\" y=\"" << px(top + 9)
              << "\" font-size=\"11\">" << escape_xml(label) << "</text>\n";
    }

    std::string finish(const std::string& xlabel, const std::string& ylabel) const {
        std::ostringstream s;
        s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
          << "\" data-x-min=\"" << num(xr_.first) << "\" data-x-max=\"" << num(xr_.second) << "\" data-y-min=\""
          << num(yr_.first) << "\" data-y-max=\"" << num(yr_.second) << "\">\n";
        s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
        s << "<text x=\"" << kWidth / 2 << "\" y=\"18\" font-size=\"14\" text-anchor=\"middle\">" << escape_xml(title_)
          << "</text>\n";
        const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
        s << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0
          << "\" stroke=\"black\"/>\n";
        s << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1
          << "\" stroke=\"black\"/>\n";
        for (int i = 0; i <= 4; ++i) {
            const double fx = xr_.first + (xr_.second - xr_.first) * i / 4.0;
            const double fy = yr_.first + (yr_.second - yr_.first) * i / 4.0;
            char bx[32], by[32];
            std::snprintf(bx, sizeof bx, "%.3g", fx);
            std::snprintf(by, sizeof by, "%.3g", fy);
            s << "<text x=\"" << px(x(fx)) << "\" y=\"" << px(y0 + 14) << "\" font-size=\"10\" text-anchor=\"middle\">"
              << bx << "</text>\n";
            s << "<text x=\"" << px(x0 - 4) << "\" y=\"" << px(y(fy) + 3) << "\" font-size=\"10\" text-anchor=\"end\">"
              << by << "</text>\n";
        }
        s << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kHeight - 6 << "\" font-size=\"11\" text-anchor=\"middle\">"
          << escape_xml(xlabel) << "</text>\n";
        s << "<text x=\"12\" y=\"" << (y0 + y1) / 2 << "\" font-size=\"11\" transform=\"rotate(-90 12 "
          << (y0 + y1) / 2 << ")\" text-anchor=\"middle\">" << escape_xml(ylabel) << "</text>\n";
        s << body_.str() << "</svg>\n";
        return s.str();
    }

private:
    static constexpr double kWidth = 720, kHeight = 420, kLeft = 60, kRight = 140, kTop = 30, kBottom = 44;
    std::string title_;
    std::pair<double, double> xr_, yr_;
    std::ostringstream body_;
};

std::string precision_plot(const Report& r) {
    std::vector<const Aggregate*> bars;
    for (const auto& a : r.aggregates) {
        if (a.kind == "detect" && a.metric == "precision") bars.push_back(&a);
    }
    std::vector<std::string> methods;
    for (const auto* a : bars) {
        if (std::find(methods.begin(), methods.end(), a->method) == methods.end()) methods.push_back(a->method);
    }
    std::vector<double> ys{0.0};
    for (const auto* a : bars) ys.push_back(a->median);
    const double n = static_cast<double>(std::max<std::size_t>(bars.size(), 1));
    Svg svg("Median detection precision", {0.0, n}, axis_range(ys));
    for (std::size_t i = 0; i < bars.size(); ++i) {
        const auto m = static_cast<std::size_t>(std::find(methods.begin(), methods.end(), bars[i]->method) - methods.begin());
        const double c = static_cast<double>(i);
        svg.rect(c + 0.15, 0.0, c + 0.85, bars[i]->median, kPalette[m % 8]);
        svg.text(c + 0.5, bars[i]->median, bars[i]->instance, "middle", 9);
    }
    for (std::size_t m = 0; m < methods.size(); ++m) svg.legend(m, methods[m], kPalette[m % 8]);
    return svg.finish("detector per instance", "precision");
}

std::string convergence_plot(const Report& r) {
    std::vector<double> xs{0.0}, ys;
    for (const auto& s : r.convergence) {
        xs.push_back(static_cast<double>(s.values.size()));
        ys.insert(ys.end(), s.values.begin(), s.values.end());
    }
    Svg svg("Incumbent gap to the true optimum (first seed)", axis_range(xs), axis_range(ys));
    for (std::size_t k = 0; k < r.convergence.size(); ++k) {
        std::vector<std::pair<double, double>> pts;
        for (std::size_t b = 0; b < r.convergence[k].values.size(); ++b) {
            pts.emplace_back(static_cast<double>(b), r.convergence[k].values[b]);
        }
        svg.polyline(pts, kPalette[k % 8]);
        svg.legend(k, r.convergence[k].label, kPalette[k % 8]);
    }
    return svg.finish("batch", "f(x) - f*");
}

std::string attention_plot(const Report& r) {
    std::size_t width = 1;
    for (const auto& a : r.attention) width = std::max(width, a.weights.size());
    const double rows = static_cast<double>(std::max<std::size_t>(r.attention.size(), 1));
    std::vector<double> all{0.0};
    for (const auto& a : r.attention) all.insert(all.end(), a.weights.begin(), a.weights.end());
    const double hi = *std::max_element(all.begin(), all.end());
    Svg svg("Context-attention weights per window", {0.0, static_cast<double>(width)}, {0.0, rows});
    for (std::size_t i = 0; i < r.attention.size(); ++i) {
        const auto& a = r.attention[i];
        const double top = rows - static_cast<double>(i);
        for (std::size_t w = 0; w < a.weights.size(); ++w) {
            const int shade = hi > 0.0 ? static_cast<int>(255.0 * (1.0 - a.weights[w] / hi)) : 255;
            char fill[16];
            std::snprintf(fill, sizeof fill, "rgb(255,%d,%d)", shade, shade);
            svg.rect(static_cast<double>(w), top - 0.9, static_cast<double>(w + 1), top, fill);
        }
        if (a.drift_label > 0) {
            const double xm = static_cast<double>(a.drift_label) - 0.5;
            svg.line(xm, top - 0.95, xm, top + 0.05, "#1f77b4", 2.0);
        }
    }
    svg.legend(0, "true drift window", "#1f77b4");
    return svg.finish("window index (1-based)", "sequence");
}

std::string pca_plot(const Report& r) {
    std::vector<double> xs, ys;
    std::vector<std::string> roles;
    if (r.pca) {
        for (const auto& c : r.pca->coords) {
            xs.push_back(c[0]);
            ys.push_back(c[1]);
        }
        for (const auto& role : r.pca->roles) {
            if (std::find(roles.begin(), roles.end(), role) == roles.end()) roles.push_back(role);
        }
    }
    std::string title = "Token embeddings, first two principal components";
    if (r.pca && r.pca->degenerate) title += " (degenerate)";
    Svg svg(title, axis_range(xs), axis_range(ys));
    if (r.pca) {
        for (std::size_t i = 0; i < r.pca->coords.size(); ++i) {
            const auto k = static_cast<std::size_t>(std::find(roles.begin(), roles.end(), r.pca->roles[i]) - roles.begin());
            svg.dot(xs[i], ys[i], kPalette[k % 8]);
        }
    }
    for (std::size_t k = 0; k < roles.size(); ++k) svg.legend(k, roles[k], kPalette[k % 8]);
    char xl[48], yl[48];
    const double e0 = r.pca ? r.pca->explained_ratio[0] : 0.0, e1 = r.pca ? r.pca->explained_ratio[1] : 0.0;
    std::snprintf(xl, sizeof xl, "PC1 (%.1f%%)", 100.0 * e0);
    std::snprintf(yl, sizeof yl, "PC2 (%.1f%%)", 100.0 * e1);
    return svg.finish(xl, yl);
}

}  // namespace

std::vector<std::filesystem::path> emit_report(const Report& report, const std::filesystem::path& out_dir,
                                               bool plots) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create output directory " + out_dir.string() + ": " + ec.message());
    std::vector<std::filesystem::path> written;

    write_file(out_dir / "report.json", report_to_json(report).dump(2) + "\n", written);

    std::set<std::string> metric_set;
    for (const auto& r : report.rows) {
        for (const auto& kv : r.values) metric_set.insert(kv.first);
    }
    const std::vector<std::string> metrics(metric_set.begin(), metric_set.end());
    std::string rows = "seed,instance,kind,method";
    for (const auto& m : metrics) rows += "," + m;
    rows += "\n";
    for (const auto& r : report.rows) {
        rows += std::to_string(r.seed) + "," + csv_field(r.instance) + "," + r.kind + "," + csv_field(r.method);
        for (const auto& m : metrics) {
            const auto it = r.values.find(m);
            rows += "," + (it == r.values.end() ? std::string() : num(it->second));
        }
        rows += "\n";
    }
    write_file(out_dir / "rows.csv", rows, written);

    std::string aggs = "instance,kind,method,metric,n,median,q1,q3,iqr\n";
    for (const auto& a : report.aggregates) {
        aggs += csv_field(a.instance) + "," + a.kind + "," + csv_field(a.method) + "," + a.metric + "," +
                std::to_string(a.n) + "," + num(a.median) + "," + num(a.q1) + "," + num(a.q3) + "," + num(a.iqr) +
                "\n";
    }
    write_file(out_dir / "aggregates.csv", aggs, written);

    if (plots) {
        write_file(out_dir / "precision.svg", precision_plot(report), written);
        write_file(out_dir / "convergence.svg", convergence_plot(report), written);
        write_file(out_dir / "attention.svg", attention_plot(report), written);
        write_file(out_dir / "pca.svg", pca_plot(report), written);
    }
    return written;
}

}  // namespace driftlab::harness
