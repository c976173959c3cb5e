#include "svg.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace ldebm::tools {

namespace {

constexpr int kSize = 320;
constexpr int kPad = 24;

const char* palette(int k) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return k < 0 ? "#333333" : colors[k % 10];
}

}  // namespace

void write_scatter_svg(const std::string& path, const std::vector<Panel>& panels,
                       const std::string& comment) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  const int width = static_cast<int>(panels.size()) * (kSize + kPad) + kPad;
  const int height = kSize + 2 * kPad + 16;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<!-- " << comment << " -->\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  char buf[160];
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const Panel& panel = panels[p];
    const int x0 = kPad + static_cast<int>(p) * (kSize + kPad), y0 = kPad + 16;
    out << "<text x=\"" << x0 << "\" y=\"" << kPad << "\" font-family=\"sans-serif\" "
        << "font-size=\"13\">" << panel.title << "</text>\n"
        << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << kSize << "\" height=\""
        << kSize << "\" fill=\"none\" stroke=\"#999\"/>\n";
    if (panel.points.cols() == 0) continue;
    // Square extent so shapes are not distorted.
    const Eigen::Vector2d lo = panel.points.rowwise().minCoeff();
    const Eigen::Vector2d hi = panel.points.rowwise().maxCoeff();
    const double span = std::max({hi(0) - lo(0), hi(1) - lo(1), 1e-9}) * 1.05;
    const Eigen::Vector2d mid = 0.5 * (lo + hi);
    for (Eigen::Index i = 0; i < panel.points.cols(); ++i) {
      const double px = x0 + kSize * (0.5 + (panel.points(0, i) - mid(0)) / span);
      const double py = y0 + kSize * (0.5 - (panel.points(1, i) - mid(1)) / span);
      const int k = panel.colors.empty() ? -1 : panel.colors[i];
      std::snprintf(buf, sizeof buf,
                    "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"1.2\" fill=\"%s\" fill-opacity=\"0.5\"/>\n",
                    px, py, palette(k));
      out << buf;
    }
  }
  out << "</svg>\n";
}

}  // namespace ldebm::tools
