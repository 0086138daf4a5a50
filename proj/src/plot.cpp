#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "flowcot/error.hpp"
#include "flowcot/evalrollout.hpp"

namespace flowcot {

namespace {

constexpr double kPanelW = 480, kPanelH = 360;
constexpr double kLeft = 60, kRight = 20, kTop = 40, kBottom = 50;
constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                   "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

void draw_panel(std::ostringstream& svg, const Panel& p, double ox) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : p.series)
    for (auto [x, y] : s.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (p.y_range) std::tie(y0, y1) = *p.y_range;
  if (x1 <= x0) x0 -= 1, x1 += 1;
  if (y1 <= y0) y0 -= 1, y1 += 1;
  const double pw = kPanelW - kLeft - kRight, ph = kPanelH - kTop - kBottom;
  auto X = [&](double x) { return ox + kLeft + (x - x0) / (x1 - x0) * pw; };
  auto Y = [&](double y) { return kTop + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  svg << "<g>\n";
  svg << "<text x=\"" << num(ox + kPanelW / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
      << escape(p.title) << "</text>\n";
  svg << "<rect x=\"" << num(ox + kLeft) << "\" y=\"" << num(kTop) << "\" width=\"" << num(pw) << "\" height=\""
      << num(ph) << "\" fill=\"none\" stroke=\"#000\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4, yv = y0 + (y1 - y0) * i / 4;
    svg << "<text x=\"" << num(X(xv)) << "\" y=\"" << num(kTop + ph + 16)
        << "\" text-anchor=\"middle\" font-size=\"10\">" << tick_label(xv) << "</text>\n";
    svg << "<text x=\"" << num(ox + kLeft - 6) << "\" y=\"" << num(Y(yv) + 3)
        << "\" text-anchor=\"end\" font-size=\"10\">" << tick_label(yv) << "</text>\n";
  }
  svg << "<text x=\"" << num(ox + kLeft + pw / 2) << "\" y=\"" << num(kPanelH - 12)
      << "\" text-anchor=\"middle\" font-size=\"12\">" << escape(p.x_label) << "</text>\n";
  svg << "<text x=\"" << num(ox + 14) << "\" y=\"" << num(kTop + ph / 2) << "\" text-anchor=\"middle\" font-size=\"12\" "
      << "transform=\"rotate(-90 " << num(ox + 14) << " " << num(kTop + ph / 2) << ")\">" << escape(p.y_label)
      << "</text>\n";
  for (std::size_t i = 0; i < p.series.size(); ++i) {
    const auto& s = p.series[i];
    const char* color = kColors[i % std::size(kColors)];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < s.points.size(); ++k)
      svg << (k ? " " : "") << num(X(s.points[k].first)) << "," << num(Y(s.points[k].second));
    svg << "\"/>\n";
    for (auto [x, y] : s.points)
      svg << "<circle cx=\"" << num(X(x)) << "\" cy=\"" << num(Y(y)) << "\" r=\"2\" fill=\"" << color << "\"/>\n";
    const double ly = kTop + 14 + 14 * static_cast<double>(i);
    svg << "<line x1=\"" << num(ox + kLeft + 8) << "\" y1=\"" << num(ly - 4) << "\" x2=\"" << num(ox + kLeft + 24)
        << "\" y2=\"" << num(ly - 4) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << num(ox + kLeft + 28) << "\" y=\"" << num(ly) << "\" font-size=\"10\">" << escape(s.label)
        << "</text>\n";
  }
  svg << "</g>\n";
}

}  // namespace

int CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  throw ParseError("CSV has no column '" + name + "'");
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  CsvTable t;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size())
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(t.header.size()) + " fields, found " + std::to_string(fields.size()));
    for (const auto& f : fields) {
      if (f.empty()) continue;
      char* end = nullptr;
      std::strtod(f.c_str(), &end);
      if (*end != '\0')
        throw ParseError(path.string() + ":" + std::to_string(lineno) + ": not a number: '" + f + "'");
    }
    t.rows.push_back(std::move(fields));
  }
  if (t.header.empty()) throw ParseError(path.string() + ":1: empty CSV");
  return t;
}

std::string render_panels(std::span<const Panel> panels) {
  std::ostringstream svg;
  const double w = kPanelW * static_cast<double>(std::max<std::size_t>(1, panels.size()));
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << num(w) << " " << num(kPanelH)
      << "\" width=\"" << num(w) << "\" height=\"" << num(kPanelH) << "\" font-family=\"sans-serif\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"#fff\"/>\n";
  for (std::size_t i = 0; i < panels.size(); ++i) draw_panel(svg, panels[i], kPanelW * static_cast<double>(i));
  svg << "</svg>\n";
  return svg.str();
}

std::string render_plot(std::span<const CsvTable> tables, std::span<const std::string> labels,
                        const PlotOptions& opt) {
  Panel panel;
  panel.title = opt.title;
  panel.x_label = opt.x_column;
  std::string ycol = opt.y_column;
  if (ycol.empty()) {
    ycol = "total";
    if (!tables.empty()) {
      const auto& h = tables[0].header;
      const int c = static_cast<int>(std::find(h.begin(), h.end(), "eval_success") - h.begin());
      if (c < static_cast<int>(h.size()))
        for (const auto& row : tables[0].rows)
          if (!row[c].empty()) ycol = "eval_success";
    }
  }
  panel.y_label = ycol;
  if (ycol == "eval_success" || ycol == "eval_token_acc") panel.y_range = std::make_pair(0.0, 1.0);
  for (std::size_t i = 0; i < tables.size(); ++i) {
    Series s;
    s.label = i < labels.size() ? labels[i] : "series " + std::to_string(i);
    const int xc = tables[i].column(opt.x_column), yc = tables[i].column(ycol);
    for (const auto& row : tables[i].rows) {
      if (row[xc].empty() || row[yc].empty()) continue;
      s.points.emplace_back(std::strtod(row[xc].c_str(), nullptr), std::strtod(row[yc].c_str(), nullptr));
    }
    panel.series.push_back(std::move(s));
  }
  return render_panels(std::span<const Panel>(&panel, 1));
}

void emit_plot(std::span<const std::filesystem::path> csvs, const std::filesystem::path& out_svg,
               const PlotOptions& opt) {
  std::vector<CsvTable> tables;
  std::vector<std::string> labels;
  for (const auto& p : csvs) {
    tables.push_back(read_csv(p));
    labels.push_back(p.stem().string());
  }
  const std::string svg = render_plot(tables, labels, opt);
  std::ofstream out(out_svg, std::ios::binary);
  if (!out) throw DataError("cannot write " + out_svg.string());
  out << svg;
}

}  // namespace flowcot
