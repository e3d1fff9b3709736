#pragma once

#include <string>
#include <vector>

namespace vitlab {

// Atomic text write: the payload lands under a temporary name and renames
// into place, so readers never observe partial files.
void write_file_atomic(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

// CSV with fixed header; doubles render with %.17g so artifacts reproduce
// bit-for-bit from (config, seed, data).
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void add_row(std::vector<std::string> cells);
    std::string render() const;
    static CsvTable parse(const std::string& text);
};

std::string fmt_double(double v);

// Self-contained SVG line chart / heatmap (no external assets).
struct SvgSeries {
    std::string label;
    std::vector<double> x, y;
};

std::string svg_line_chart(const std::string& title, const std::vector<SvgSeries>& series);
std::string svg_heatmap(const std::string& title, const std::vector<std::string>& labels,
                        const std::vector<double>& values_row_major);

}  // namespace vitlab
