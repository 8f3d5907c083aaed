// Standalone SVG charts rendered from the CSV files the CLI writes.

#pragma once

#include "sbtrack/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace sbtrack {

/// A CSV file with a header row; cells are kept as text.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
  }
};

inline CsvTable parse_csv(std::istream& in, const std::string& source = "<csv>") {
  CsvTable t;
  std::string line;
  int lineno = 0;
  auto cells = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
      if (c == ',') {
        out.push_back(cur);
        cur.clear();
      } else if (c != '\r') {
        cur += c;
      }
    }
    out.push_back(cur);
    return out;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto row = cells(line);
    if (t.header.empty()) {
      t.header = std::move(row);
      continue;
    }
    if (row.size() != t.header.size()) {
      throw DataError(source + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                      " fields, got " + std::to_string(row.size()));
    }
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty()) throw DataError(source + ": empty CSV");
  return t;
}

inline CsvTable load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return parse_csv(in, path.string());
}

inline double csv_number(const std::string& cell, const std::string& source) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used == cell.size()) return v;
  } catch (const std::exception&) {
  }
  throw DataError(source + ": '" + cell + "' is not a number");
}

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

namespace detail {

inline std::string svg_escape(const std::string& s) {
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

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
  return colors[i % (sizeof colors / sizeof colors[0])];
}

struct Frame {
  double width = 640, height = 400;
  double left = 70, right = 20, top = 40, bottom = 60;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;

  double px(double x) const { return left + (x - x0) / (x1 - x0) * (width - left - right); }
  double py(double y) const { return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom); }
};

inline void pad_range(double& lo, double& hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
}

inline std::string open_svg(const Frame& f, const std::string& title) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(f.width) << "\" height=\"" << num(f.height)
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << num(f.width / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << svg_escape(title)
     << "</text>\n";
  return os.str();
}

inline std::string axes(const Frame& f, const std::string& xlabel, const std::string& ylabel, bool x_ticks) {
  std::ostringstream os;
  const double bx = f.left, by = f.height - f.bottom, tx = f.width - f.right;
  os << "<line x1=\"" << num(bx) << "\" y1=\"" << num(by) << "\" x2=\"" << num(tx) << "\" y2=\"" << num(by)
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << num(bx) << "\" y1=\"" << num(by) << "\" x2=\"" << num(bx) << "\" y2=\"" << num(f.top)
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = f.y0 + (f.y1 - f.y0) * i / 4.0;
    const double y = f.py(v);
    os << "<line x1=\"" << num(bx - 4) << "\" y1=\"" << num(y) << "\" x2=\"" << num(bx) << "\" y2=\"" << num(y)
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << num(bx - 6) << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">" << tick_label(v)
       << "</text>\n";
    if (x_ticks) {
      const double u = f.x0 + (f.x1 - f.x0) * i / 4.0;
      const double x = f.px(u);
      os << "<line x1=\"" << num(x) << "\" y1=\"" << num(by) << "\" x2=\"" << num(x) << "\" y2=\"" << num(by + 4)
         << "\" stroke=\"black\"/>\n";
      os << "<text x=\"" << num(x) << "\" y=\"" << num(by + 18) << "\" text-anchor=\"middle\">" << tick_label(u)
         << "</text>\n";
    }
  }
  os << "<text x=\"" << num((bx + tx) / 2) << "\" y=\"" << num(f.height - 12) << "\" text-anchor=\"middle\">"
     << svg_escape(xlabel) << "</text>\n";
  os << "<text transform=\"translate(16," << num((by + f.top) / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
     << svg_escape(ylabel) << "</text>\n";
  return os.str();
}

}  // namespace detail

/// Polyline chart, one colored line per series, legend in the top right.
inline std::string line_chart_svg(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                                  const std::string& ylabel) {
  detail::Frame f;
  bool any = false;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!any) {
        f.x0 = f.x1 = s.x[i];
        f.y0 = f.y1 = s.y[i];
        any = true;
      }
      f.x0 = std::min(f.x0, s.x[i]);
      f.x1 = std::max(f.x1, s.x[i]);
      f.y0 = std::min(f.y0, s.y[i]);
      f.y1 = std::max(f.y1, s.y[i]);
    }
  }
  detail::pad_range(f.x0, f.x1);
  detail::pad_range(f.y0, f.y1);
  std::string svg = detail::open_svg(f, title) + detail::axes(f, xlabel, ylabel, true);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    std::string pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      pts += detail::num(f.px(s.x[i])) + "," + detail::num(f.py(s.y[i])) + " ";
    }
    if (!pts.empty()) pts.pop_back();
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(detail::palette(k)) + "\" stroke-width=\"1.5\" points=\"" +
           pts + "\"/>\n";
    const double ly = f.top + 14.0 * static_cast<double>(k);
    const double lx = f.width - f.right - 150;
    svg += "<rect x=\"" + detail::num(lx) + "\" y=\"" + detail::num(ly) + "\" width=\"10\" height=\"10\" fill=\"" +
           detail::palette(k) + "\"/>\n";
    svg += "<text x=\"" + detail::num(lx + 14) + "\" y=\"" + detail::num(ly + 9) + "\">" + detail::svg_escape(s.name) +
           "</text>\n";
  }
  return svg + "</svg>\n";
}

/// Vertical bars with the value printed above each bar. The y axis starts
/// at zero unless a value is negative.
inline std::string bar_chart_svg(const std::vector<std::string>& labels, const std::vector<double>& values,
                                 const std::string& title, const std::string& ylabel) {
  if (labels.size() != values.size()) throw std::invalid_argument("bar_chart_svg: label/value count mismatch");
  detail::Frame f;
  f.width = std::max(640.0, 90.0 * static_cast<double>(labels.size()) + 100.0);
  f.bottom = 110;
  f.y0 = 0.0;
  f.y1 = 0.0;
  for (double v : values) {
    f.y0 = std::min(f.y0, v);
    f.y1 = std::max(f.y1, v);
  }
  detail::pad_range(f.y0, f.y1);
  f.y1 += 0.08 * (f.y1 - f.y0);
  f.x0 = 0.0;
  f.x1 = static_cast<double>(std::max<std::size_t>(labels.size(), 1));
  std::string svg = detail::open_svg(f, title) + detail::axes(f, "", ylabel, false);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double xa = f.px(static_cast<double>(i) + 0.15);
    const double xb = f.px(static_cast<double>(i) + 0.85);
    const double ya = f.py(std::max(values[i], 0.0));
    const double yb = f.py(std::min(values[i], 0.0));
    svg += "<rect x=\"" + detail::num(xa) + "\" y=\"" + detail::num(ya) + "\" width=\"" + detail::num(xb - xa) +
           "\" height=\"" + detail::num(yb - ya) + "\" fill=\"" + detail::palette(0) + "\"/>\n";
    const double xm = (xa + xb) / 2;
    svg += "<text x=\"" + detail::num(xm) + "\" y=\"" + detail::num(ya - 4) + "\" text-anchor=\"middle\">" +
           detail::tick_label(values[i]) + "</text>\n";
    const double yl = f.height - f.bottom + 14;
    svg += "<text transform=\"translate(" + detail::num(xm) + "," + detail::num(yl) +
           ") rotate(35)\" text-anchor=\"start\">" + detail::svg_escape(labels[i]) + "</text>\n";
  }
  return svg + "</svg>\n";
}

}  // namespace sbtrack
