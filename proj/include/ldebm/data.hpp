#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace ldebm {

/// 2-D points (2 x N, one per column) with their generating component.
struct Dataset2D {
  Eigen::MatrixXd points;
  std::vector<int> labels;
  Eigen::MatrixXd centers;  // 2 x M reference location of each component
};

struct GaussianGridParams {
  int side = 4;          // side x side components
  double spacing = 2.0;  // distance between neighbouring means
  double std = 0.1;
};

/// Equal-weight mixture of isotropic Gaussians on a square grid centred at
/// the origin; component index = row * side + column.
Dataset2D gen_gaussian_grid(int n, std::uint64_t seed, const GaussianGridParams& p = {});
Eigen::MatrixXd gaussian_grid_centers(const GaussianGridParams& p = {});

struct PinwheelParams {
  double radial_std = 0.3;
  double tangential_std = 0.05;
  double radial_offset = 1.0;
  double rate = 0.25;  // extra rotation per unit radius
};

/// Arm k is a Gaussian (radial_offset + radial_std e1, tangential_std e2)
/// rotated by 2 pi k / arms + rate * radius.
Dataset2D gen_pinwheel(int n, int arms, std::uint64_t seed, const PinwheelParams& p = {});
/// The warped image of each arm's mean point.
Eigen::MatrixXd pinwheel_centers(int arms, const PinwheelParams& p = {});

/// `x,y,label` header, six decimals.
void write_points_csv(const std::string& path, const Eigen::MatrixXd& points,
                      const std::vector<int>& labels, const std::string& comment = "");
Dataset2D read_points_csv(const std::string& path);

}  // namespace ldebm
