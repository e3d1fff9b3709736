#include "vitlab/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vitlab {

void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::invalid_argument("report: cannot write '" + tmp + "' (unwritable output dir?)");
        os.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!os) throw std::runtime_error("report: short write to '" + tmp + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::runtime_error("report: rename to '" + path + "' failed");
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("report: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void CsvTable::add_row(std::vector<std::string> cells) {
    if (cells.size() != header.size()) throw std::invalid_argument("csv: row width does not match header");
    rows.push_back(std::move(cells));
}

std::string CsvTable::render() const {
    std::string out;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) out += ',';
        out += header[i];
    }
    out += '\n';
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out += ',';
            out += row[i];
        }
        out += '\n';
    }
    return out;
}

CsvTable CsvTable::parse(const std::string& text) {
    CsvTable t;
    std::istringstream is(text);
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (line.back() == ',') cells.push_back("");
        if (first) {
            t.header = std::move(cells);
            first = false;
        } else {
            t.add_row(std::move(cells));
        }
    }
    if (first) throw std::invalid_argument("csv: empty document");
    return t;
}

namespace {

constexpr int kW = 640, kH = 420, kPad = 56;

std::string color_of(std::size_t i) {
    static const char* palette[] = {"#1f6fb4", "#d1495b", "#3a9d6b", "#8e6cc0", "#c7822a", "#4f4f4f"};
    return palette[i % 6];
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::vector<SvgSeries>& series) {
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool any = false;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.y[i])) continue;
            if (!any) {
                xmin = xmax = s.x[i];
                ymin = ymax = s.y[i];
                any = true;
            }
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    auto px = [&](double x) { return kPad + (x - xmin) / (xmax - xmin) * (kW - 2 * kPad); };
    auto py = [&](double y) { return kH - kPad - (y - ymin) / (ymax - ymin) * (kH - 2 * kPad); };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
    os << "<line x1=\"" << kPad << "\" y1=\"" << kH - kPad << "\" x2=\"" << kW - kPad << "\" y2=\"" << kH - kPad
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << kPad << "\" y1=\"" << kPad << "\" x2=\"" << kPad << "\" y2=\"" << kH - kPad
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << kPad << "\" y=\"" << kH - kPad + 18 << "\" font-size=\"11\">" << fmt_double(xmin)
       << "</text>\n";
    os << "<text x=\"" << kW - kPad << "\" y=\"" << kH - kPad + 18 << "\" text-anchor=\"end\" font-size=\"11\">"
       << fmt_double(xmax) << "</text>\n";
    os << "<text x=\"" << kPad - 4 << "\" y=\"" << kH - kPad << "\" text-anchor=\"end\" font-size=\"11\">"
       << fmt_double(ymin) << "</text>\n";
    os << "<text x=\"" << kPad - 4 << "\" y=\"" << kPad + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
       << fmt_double(ymax) << "</text>\n";
    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        os << "<polyline fill=\"none\" stroke=\"" << color_of(si) << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.y[i])) continue;
            os << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
        }
        os << "\"/>\n";
        os << "<text x=\"" << kW - kPad + 4 << "\" y=\"" << kPad + 16 * si << "\" font-size=\"11\" fill=\""
           << color_of(si) << "\">" << s.label << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::string svg_heatmap(const std::string& title, const std::vector<std::string>& labels,
                        const std::vector<double>& values_row_major) {
    const std::size_t n = labels.size();
    if (values_row_major.size() != n * n) throw std::invalid_argument("svg_heatmap: size mismatch");
    double lo = 0.0, hi = 1.0;
    if (!values_row_major.empty()) {
        lo = *std::min_element(values_row_major.begin(), values_row_major.end());
        hi = *std::max_element(values_row_major.begin(), values_row_major.end());
        if (hi == lo) hi = lo + 1;
    }
    const int cell = std::max(4, static_cast<int>(320 / std::max<std::size_t>(1, n)));
    const int size = cell * static_cast<int>(n);
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size + 2 * kPad << "\" height=\""
       << size + 2 * kPad << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << (size + 2 * kPad) / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" << title
       << "</text>\n";
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double v = (values_row_major[i * n + j] - lo) / (hi - lo);
            const int r = static_cast<int>(255 * v);
            const int b = static_cast<int>(255 * (1 - v));
            os << "<rect x=\"" << kPad + static_cast<int>(j) * cell << "\" y=\"" << kPad + static_cast<int>(i) * cell
               << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"rgb(" << r << ",60," << b
               << ")\"/>\n";
        }
    os << "</svg>\n";
    return os.str();
}

}  // namespace vitlab
