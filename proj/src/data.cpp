#include "ldebm/data.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "ldebm/rng.hpp"

namespace ldebm {

Eigen::MatrixXd gaussian_grid_centers(const GaussianGridParams& p) {
  Eigen::MatrixXd c(2, p.side * p.side);
  const double origin = -0.5 * p.spacing * (p.side - 1);
  for (int r = 0; r < p.side; ++r)
    for (int q = 0; q < p.side; ++q) {
      c(0, r * p.side + q) = origin + p.spacing * q;
      c(1, r * p.side + q) = origin + p.spacing * r;
    }
  return c;
}

Dataset2D gen_gaussian_grid(int n, std::uint64_t seed, const GaussianGridParams& p) {
  const int m = p.side * p.side;
  if (n < m) throw std::invalid_argument("gaussian grid needs n >= number of components");
  Dataset2D ds;
  ds.centers = gaussian_grid_centers(p);
  ds.points.resize(2, n);
  ds.labels.resize(n);
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const int k = static_cast<int>(rng.below(static_cast<std::uint64_t>(m)));
    ds.labels[i] = k;
    ds.points(0, i) = ds.centers(0, k) + p.std * rng.normal();
    ds.points(1, i) = ds.centers(1, k) + p.std * rng.normal();
  }
  return ds;
}

namespace {

Eigen::Vector2d warp(double radial, double tangential, double base_angle, double rate) {
  const double angle = base_angle + rate * radial;
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * radial - s * tangential, s * radial + c * tangential};
}

}  // namespace

Eigen::MatrixXd pinwheel_centers(int arms, const PinwheelParams& p) {
  Eigen::MatrixXd c(2, arms);
  for (int k = 0; k < arms; ++k)
    c.col(k) = warp(p.radial_offset, 0.0, 2.0 * std::numbers::pi * k / arms, p.rate);
  return c;
}

Dataset2D gen_pinwheel(int n, int arms, std::uint64_t seed, const PinwheelParams& p) {
  if (arms < 1) throw std::invalid_argument("pinwheel needs at least one arm");
  if (n < arms) throw std::invalid_argument("pinwheel needs n >= arms");
  Dataset2D ds;
  ds.centers = pinwheel_centers(arms, p);
  ds.points.resize(2, n);
  ds.labels.resize(n);
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const int k = static_cast<int>(rng.below(static_cast<std::uint64_t>(arms)));
    const double radial = p.radial_offset + p.radial_std * rng.normal();
    const double tangential = p.tangential_std * rng.normal();
    ds.labels[i] = k;
    ds.points.col(i) = warp(radial, tangential, 2.0 * std::numbers::pi * k / arms, p.rate);
  }
  return ds;
}

void write_points_csv(const std::string& path, const Eigen::MatrixXd& points,
                      const std::vector<int>& labels, const std::string& comment) {
  if (points.rows() != 2) throw std::invalid_argument("CSV export expects 2-D points");
  if (!labels.empty() && static_cast<Eigen::Index>(labels.size()) != points.cols())
    throw std::invalid_argument("CSV export: one label per point");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  if (!comment.empty()) out << "# " << comment << '\n';
  out << "x,y,label\n";
  char buf[96];
  for (Eigen::Index i = 0; i < points.cols(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%d\n", points(0, i), points(1, i),
                  labels.empty() ? -1 : labels[i]);
    out << buf;
  }
}

Dataset2D read_points_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::vector<double> xs, ys;
  Dataset2D ds;
  bool header = false;
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line.rfind("x,y,label", 0) != 0) throw std::runtime_error(path + ": missing x,y,label header");
      header = true;
      continue;
    }
    std::istringstream is(line);
    std::string a, b, c;
    if (!std::getline(is, a, ',') || !std::getline(is, b, ',') || !std::getline(is, c))
      throw std::runtime_error(path + ": malformed row: " + line);
    xs.push_back(std::stod(a));
    ys.push_back(std::stod(b));
    ds.labels.push_back(std::stoi(c));
  }
  ds.points.resize(2, static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    ds.points(0, i) = xs[i];
    ds.points(1, i) = ys[i];
  }
  return ds;
}

}  // namespace ldebm
