#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace probelab::report {

/// A tab-separated table. Written with a leading "# config_hash=..." line,
/// then the header row, then one line per row.
struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    void add(std::vector<std::string> row);
    std::string render(const std::string& config_hash) const;
};

std::string fmt_fixed(double v, int decimals);
/// One-decimal percentage points; NaN renders as "NA".
std::string fmt_pp(double pp);
std::string fmt_opt(const std::optional<double>& v, int decimals);

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

struct LinePlot {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<Series> series;
};

std::string render_line_plot(const LinePlot& plot, const std::string& config_hash);

/// Square heatmap of values in [0, 1]; row 0 at the top.
std::string render_heatmap(const std::string& title, const std::vector<std::vector<double>>& m,
                           const std::string& config_hash);

/// Writes `content` to `path` atomically (write to temp, then rename).
void write_text(const std::filesystem::path& path, const std::string& content);

}  // namespace probelab::report
