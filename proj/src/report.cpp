#include "probelab/report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "probelab/common.hpp"

namespace probelab::report {

namespace {

constexpr std::array<const char*, 8> kPalette{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                              "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string escape_xml(const std::string& s) {
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

std::string num(double v) { return fmt_fixed(v, 2); }

}  // namespace

void Table::add(std::vector<std::string> row) {
    if (row.size() != columns.size()) throw InvariantError("table row width does not match header");
    rows.push_back(std::move(row));
}

std::string Table::render(const std::string& config_hash) const {
    std::string out = "# config_hash=" + config_hash + "\n";
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out += '\t';
            out += cells[i];
        }
        out += '\n';
    };
    line(columns);
    for (const auto& r : rows) line(r);
    return out;
}

std::string fmt_fixed(double v, int decimals) {
    if (std::isnan(v)) return "NA";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    // Avoid "-0.0" style output for values that round to zero.
    std::string s(buf);
    if (s[0] == '-' && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
    return s;
}

std::string fmt_pp(double pp) { return fmt_fixed(pp, 1); }

std::string fmt_opt(const std::optional<double>& v, int decimals) {
    return v ? fmt_fixed(*v, decimals) : "NA";
}

std::string render_line_plot(const LinePlot& plot, const std::string& config_hash) {
    constexpr double W = 640, H = 400, left = 60, right = 150, top = 40, bottom = 50;
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool first = true;
    for (const auto& s : plot.series) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (std::isnan(s.y[i])) continue;
            if (first) {
                xmin = xmax = s.x[i];
                ymin = ymax = s.y[i];
                first = false;
            }
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) {
        ymin -= 0.5;
        ymax += 0.5;
    }
    const double pw = W - left - right, ph = H - top - bottom;
    auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) { return top + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    o << "<!-- config_hash=" << config_hash << " -->\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
      << escape_xml(plot.title) << "</text>\n";
    o << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\""
      << top + ph << "\" stroke=\"black\"/>\n";
    o << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
      << "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double yv = ymin + (ymax - ymin) * k / 4.0;
        const double xv = xmin + (xmax - xmin) * k / 4.0;
        o << "<text x=\"" << left - 6 << "\" y=\"" << num(py(yv) + 4)
          << "\" text-anchor=\"end\" font-size=\"10\">" << fmt_fixed(yv, 3) << "</text>\n";
        o << "<text x=\"" << num(px(xv)) << "\" y=\"" << top + ph + 16
          << "\" text-anchor=\"middle\" font-size=\"10\">" << fmt_fixed(xv, 2) << "</text>\n";
    }
    o << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\" font-size=\"12\">"
      << escape_xml(plot.x_label) << "</text>\n";
    o << "<text x=\"14\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" font-size=\"12\" "
      << "transform=\"rotate(-90 14 " << top + ph / 2 << ")\">" << escape_xml(plot.y_label) << "</text>\n";
    for (std::size_t s = 0; s < plot.series.size(); ++s) {
        const auto& ser = plot.series[s];
        const char* color = kPalette[s % kPalette.size()];
        o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        bool sep = false;
        for (std::size_t i = 0; i < ser.x.size(); ++i) {
            if (std::isnan(ser.y[i])) continue;
            o << (sep ? " " : "") << num(px(ser.x[i])) << "," << num(py(ser.y[i]));
            sep = true;
        }
        o << "\"/>\n";
        const double ly = top + 14 + 18.0 * static_cast<double>(s);
        o << "<line x1=\"" << left + pw + 10 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 30
          << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        o << "<text x=\"" << left + pw + 34 << "\" y=\"" << ly + 4 << "\" font-size=\"11\">"
          << escape_xml(ser.name) << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

std::string render_heatmap(const std::string& title, const std::vector<std::vector<double>>& m,
                           const std::string& config_hash) {
    const std::size_t L = m.size();
    const double cell = L == 0 ? 10.0 : std::max(4.0, 360.0 / static_cast<double>(L));
    const double left = 40, top = 40;
    const double side = cell * static_cast<double>(L);
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(left + side + 20) << "\" height=\""
      << num(top + side + 30) << "\">\n";
    o << "<!-- config_hash=" << config_hash << " -->\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << num(left + side / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
      << escape_xml(title) << "</text>\n";
    for (std::size_t i = 0; i < L; ++i) {
        for (std::size_t j = 0; j < L; ++j) {
            const double v = std::clamp(m[i][j], 0.0, 1.0);
            const int shade = static_cast<int>(std::lround(255.0 * (1.0 - v)));
            char fill[8];
            std::snprintf(fill, sizeof fill, "#%02x%02xff", shade, shade);
            o << "<rect x=\"" << num(left + cell * j) << "\" y=\"" << num(top + cell * i) << "\" width=\""
              << num(cell) << "\" height=\"" << num(cell) << "\" fill=\"" << fill << "\"><title>(" << i
              << "," << j << ") " << fmt_fixed(m[i][j], 4) << "</title></rect>\n";
        }
    }
    o << "<text x=\"" << num(left + side / 2) << "\" y=\"" << num(top + side + 20)
      << "\" text-anchor=\"middle\" font-size=\"11\">layer</text>\n";
    o << "</svg>\n";
    return o.str();
}

void write_text(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp.string());
        out << content;
        if (!out) throw DataError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace probelab::report
