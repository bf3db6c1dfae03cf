#pragma once

#include "lsfd/evalkit.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace lsfd {

/// Writes `text` verbatim; throws E_IO on failure.
void write_text(const std::filesystem::path& path, const std::string& text);
/// Two-space indented JSON plus a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& value);
void append_line(const std::filesystem::path& path, const std::string& line);

using CsvRow = std::vector<std::string>;
std::string to_csv(const CsvRow& header, const std::vector<CsvRow>& rows);

std::string histogram_csv(const Histogram& h);
std::string pr_curve_csv(const PRCurve& curve);
nlohmann::json histogram_json(const Histogram& h);

struct SvgSeries {
  std::string label;
  std::vector<double> x, y;
};

/// Static line plot; the x and y ranges cover all series.
std::string svg_lines(const std::string& title, const std::string& x_label, const std::string& y_label,
                      const std::vector<SvgSeries>& series);
/// Overlaid histograms sharing one binning.
std::string svg_histograms(const std::string& title, const std::vector<std::pair<std::string, Histogram>>& hists);

}  // namespace lsfd
