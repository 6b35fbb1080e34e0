#include "tdro/svgplot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tdro/errors.hpp"

namespace tdro {

namespace {

struct Series {
  std::string task;
  std::vector<double> steps;
  std::vector<double> weights;
};

std::vector<Series> read_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw EmptyFile(path.string());
  if (line.rfind("step,task,weight", 0) != 0)
    throw MalformedRecord(1, "expected trajectory CSV header");

  std::vector<Series> series;
  std::map<std::string, std::size_t> index;
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string step_s, task, weight_s;
    if (!std::getline(ss, step_s, ',') || !std::getline(ss, task, ',') ||
        !std::getline(ss, weight_s, ','))
      throw MalformedRecord(line_no, "expected step,task,weight,measurement");
    auto [it, inserted] = index.try_emplace(task, series.size());
    if (inserted) series.push_back(Series{task, {}, {}});
    try {
      series[it->second].steps.push_back(std::stod(step_s));
      series[it->second].weights.push_back(std::stod(weight_s));
    } catch (const std::exception&) {
      throw MalformedRecord(line_no, "non-numeric step or weight");
    }
  }
  if (series.empty()) throw EmptyFile(path.string());
  return series;
}

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

}  // namespace

void write_trajectory_svg(const std::filesystem::path& csv_path,
                          const std::filesystem::path& svg_path) {
  const auto series = read_csv(csv_path);

  double x_min = 1e300, x_max = -1e300, y_max = 0.0;
  for (const auto& s : series) {
    for (double v : s.steps) {
      x_min = std::min(x_min, v);
      x_max = std::max(x_max, v);
    }
    for (double v : s.weights) y_max = std::max(y_max, v);
  }
  if (x_max <= x_min) x_max = x_min + 1.0;
  y_max = y_max <= 0.0 ? 1.0 : y_max * 1.08;

  const double width = 860, height = 480;
  const double left = 70, right = width - 170, top = 30, bottom = height - 50;
  auto sx = [&](double v) { return left + (v - x_min) / (x_max - x_min) * (right - left); };
  auto sy = [&](double v) { return bottom - v / y_max * (bottom - top); };

  std::ofstream f(svg_path, std::ios::binary);
  if (!f) throw IoError("cannot write " + svg_path.string());
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << width << ' ' << height
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  f << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";

  // axes and grid
  for (int i = 0; i <= 5; ++i) {
    const double yv = y_max * i / 5.0;
    const double y = sy(yv);
    f << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << right << "\" y2=\"" << y
      << "\" stroke=\"#dddddd\"/>\n";
    f << "<text x=\"" << left - 8 << "\" y=\"" << y + 4
      << "\" text-anchor=\"end\">" << fmt(yv) << "</text>\n";
    const double xv = x_min + (x_max - x_min) * i / 5.0;
    const double x = sx(xv);
    f << "<text x=\"" << x << "\" y=\"" << bottom + 18
      << "\" text-anchor=\"middle\">" << fmt(xv) << "</text>\n";
  }
  f << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << bottom
    << "\" stroke=\"black\"/>\n";
  f << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << right << "\" y2=\""
    << bottom << "\" stroke=\"black\"/>\n";
  f << "<text x=\"" << (left + right) / 2 << "\" y=\"" << height - 14
    << "\" text-anchor=\"middle\">step</text>\n";
  f << "<text x=\"18\" y=\"" << (top + bottom) / 2
    << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " << (top + bottom) / 2
    << ")\">domain weight</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % (sizeof(kPalette) / sizeof(kPalette[0]))];
    f << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[s].steps.size(); ++i) {
      if (i) f << ' ';
      f << fmt(sx(series[s].steps[i])) << ',' << fmt(sy(series[s].weights[i]));
    }
    f << "\"/>\n";
    const double ly = top + 18.0 * static_cast<double>(s);
    f << "<line x1=\"" << right + 10 << "\" y1=\"" << ly << "\" x2=\"" << right + 30
      << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    f << "<text x=\"" << right + 36 << "\" y=\"" << ly + 4 << "\">" << series[s].task
      << "</text>\n";
  }
  f << "</svg>\n";
}

}  // namespace tdro
