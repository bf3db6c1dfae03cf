#include "lsfd/report.hpp"

#include "lsfd/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace lsfd {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::Io, "failed writing " + path.string());
}

void write_json(const std::filesystem::path& path, const nlohmann::json& value) {
  write_text(path, value.dump(2) + "\n");
}

void append_line(const std::filesystem::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error(ErrorCode::Io, "cannot append to " + path.string());
  out << line << '\n';
}

std::string to_csv(const CsvRow& header, const std::vector<CsvRow>& rows) {
  auto line = [](const CsvRow& r) {
    std::string s;
    for (std::size_t i = 0; i < r.size(); ++i) s += (i ? "," : "") + r[i];
    return s + "\n";
  };
  std::string out = line(header);
  for (const auto& r : rows) out += line(r);
  return out;
}

std::string histogram_csv(const Histogram& h) {
  std::vector<CsvRow> rows;
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    rows.push_back({format_double(h.bin_left(i)), format_double(h.bin_right(i)), std::to_string(h.counts[i])});
  }
  return to_csv({"bin_left", "bin_right", "count"}, rows);
}

std::string pr_curve_csv(const PRCurve& curve) {
  std::vector<CsvRow> rows;
  for (const auto& p : curve.points) {
    rows.push_back({std::to_string(p.k), format_double(p.precision), format_double(p.recall)});
  }
  return to_csv({"k", "precision", "recall"}, rows);
}

nlohmann::json histogram_json(const Histogram& h) {
  return {{"lo", h.lo}, {"hi", h.hi}, {"bins", h.counts.size()}, {"samples", h.samples}, {"mean", h.mean},
          {"counts", h.counts}};
}

namespace {

constexpr double kW = 640, kH = 400, kLeft = 60, kRight = 20, kTop = 40, kBottom = 50;
const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kW - kLeft - kRight); }
  double py(double y) const { return kH - kBottom - (y - y0) / (y1 - y0) * (kH - kTop - kBottom); }
};

std::string axes(const Frame& f, const std::string& title, const std::string& xl, const std::string& yl) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kW) + "\" height=\"" + num(kH) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(kW / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" + escape(title) + "</text>\n";
  s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kH - kBottom) + "\" x2=\"" + num(kW - kRight) + "\" y2=\"" +
       num(kH - kBottom) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop) + "\" x2=\"" + num(kLeft) + "\" y2=\"" + num(kH - kBottom) +
       "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0, yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    s += "<text x=\"" + num(f.px(xv)) + "\" y=\"" + num(kH - kBottom + 16) + "\" text-anchor=\"middle\" font-size=\"11\">" +
         format_double(std::round(xv * 100) / 100) + "</text>\n";
    s += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(f.py(yv) + 4) + "\" text-anchor=\"end\" font-size=\"11\">" +
         format_double(std::round(yv * 100) / 100) + "</text>\n";
  }
  s += "<text x=\"" + num(kW / 2) + "\" y=\"" + num(kH - 10) + "\" text-anchor=\"middle\" font-size=\"12\">" + escape(xl) +
       "</text>\n";
  s += "<text x=\"14\" y=\"" + num(kH / 2) + "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 " +
       num(kH / 2) + ")\">" + escape(yl) + "</text>\n";
  return s;
}

std::string legend(const std::vector<std::string>& labels) {
  std::string s;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double y = kTop + 14 * static_cast<double>(i);
    s += "<rect x=\"" + num(kW - kRight - 120) + "\" y=\"" + num(y) + "\" width=\"10\" height=\"10\" fill=\"" +
         kColors[i % 6] + "\"/>\n";
    s += "<text x=\"" + num(kW - kRight - 105) + "\" y=\"" + num(y + 9) + "\" font-size=\"11\">" + escape(labels[i]) +
         "</text>\n";
  }
  return s;
}

}  // namespace

std::string svg_lines(const std::string& title, const std::string& x_label, const std::string& y_label,
                      const std::vector<SvgSeries>& series) {
  Frame f{1e300, -1e300, 1e300, -1e300};
  for (const auto& s : series) {
    for (double x : s.x) f.x0 = std::min(f.x0, x), f.x1 = std::max(f.x1, x);
    for (double y : s.y) f.y0 = std::min(f.y0, y), f.y1 = std::max(f.y1, y);
  }
  if (f.x0 >= f.x1) f.x0 -= 1, f.x1 += 1;
  if (f.y0 >= f.y1) f.y0 -= 1, f.y1 += 1;
  std::string out = axes(f, title, x_label, y_label);
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < series.size(); ++i) {
    std::string pts;
    for (std::size_t j = 0; j < series[i].x.size(); ++j) {
      pts += num(f.px(series[i].x[j])) + "," + num(f.py(series[i].y[j])) + " ";
    }
    out += "<polyline fill=\"none\" stroke=\"" + std::string(kColors[i % 6]) + "\" stroke-width=\"1.5\" points=\"" + pts +
           "\"/>\n";
    labels.push_back(series[i].label);
  }
  return out + legend(labels) + "</svg>\n";
}

std::string svg_histograms(const std::string& title, const std::vector<std::pair<std::string, Histogram>>& hists) {
  if (hists.empty()) throw Error(ErrorCode::Value, "svg_histograms: nothing to plot");
  const Histogram& first = hists[0].second;
  double peak = 0.0;
  for (const auto& [label, h] : hists) {
    for (long c : h.counts) peak = std::max(peak, static_cast<double>(c) / std::max(1L, h.samples));
  }
  if (peak <= 0.0) peak = 1.0;
  Frame f{first.lo, first.hi, 0.0, peak};
  std::string out = axes(f, title, "cosine similarity", "fraction");
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < hists.size(); ++i) {
    const Histogram& h = hists[i].second;
    for (std::size_t b = 0; b < h.counts.size(); ++b) {
      const double frac = static_cast<double>(h.counts[b]) / std::max(1L, h.samples);
      const double x = f.px(h.bin_left(b)), w = f.px(h.bin_right(b)) - x;
      out += "<rect x=\"" + num(x) + "\" y=\"" + num(f.py(frac)) + "\" width=\"" + num(w) + "\" height=\"" +
             num(f.py(0) - f.py(frac)) + "\" fill=\"" + kColors[i % 6] + "\" fill-opacity=\"0.5\"/>\n";
    }
    labels.push_back(hists[i].first + " (mean " + num(h.mean) + ")");
  }
  return out + legend(labels) + "</svg>\n";
}

}  // namespace lsfd
