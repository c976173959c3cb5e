#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

namespace ldebm::tools {

struct Panel {
  std::string title;
  Eigen::MatrixXd points;  // 2 x N
  std::vector<int> colors; // optional class per point
};

/// Side-by-side scatter panels in one SVG file. `comment` lands in an XML
/// comment at the top.
void write_scatter_svg(const std::string& path, const std::vector<Panel>& panels,
                       const std::string& comment);

}  // namespace ldebm::tools
