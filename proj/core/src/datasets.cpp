#include "aloe/datasets.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace aloe {

namespace {
constexpr double kPi = std::numbers::pi;
}

Dataset2D dataset_from_name(const std::string& name) {
  if (name == "2spirals") return Dataset2D::two_spirals;
  if (name == "8gaussians") return Dataset2D::eight_gaussians;
  if (name == "checkerboard") return Dataset2D::checkerboard;
  if (name == "circles") return Dataset2D::circles;
  if (name == "moons") return Dataset2D::moons;
  if (name == "pinwheel") return Dataset2D::pinwheel;
  if (name == "swissroll") return Dataset2D::swissroll;
  throw std::invalid_argument("unknown dataset: " + name);
}

std::string dataset_name(Dataset2D d) {
  switch (d) {
    case Dataset2D::two_spirals: return "2spirals";
    case Dataset2D::eight_gaussians: return "8gaussians";
    case Dataset2D::checkerboard: return "checkerboard";
    case Dataset2D::circles: return "circles";
    case Dataset2D::moons: return "moons";
    case Dataset2D::pinwheel: return "pinwheel";
    case Dataset2D::swissroll: return "swissroll";
  }
  return "?";
}

const std::vector<std::string>& dataset_names() {
  static const std::vector<std::string> names{
      "2spirals", "8gaussians", "checkerboard", "circles", "moons", "pinwheel", "swissroll"};
  return names;
}

namespace {

Point2D draw_two_spirals(Rng& rng) {
  const double theta = std::sqrt(rng.uniform()) * 3.0 * kPi;
  const double sign = rng.uniform() < 0.5 ? 1.0 : -1.0;
  const double jx = rng.uniform() * 0.5;
  const double jy = rng.uniform() * 0.5;
  double x = sign * (-std::cos(theta) * theta + jx) / 3.0;
  double y = sign * (std::sin(theta) * theta + jy) / 3.0;
  x += 0.1 * rng.normal();
  y += 0.1 * rng.normal();
  return {x, y};
}

Point2D draw_eight_gaussians(Rng& rng) {
  // Centers on a circle of radius 2*sqrt(2), isotropic std 0.5/sqrt(2).
  const int k = int(rng.uniform_int(8));
  const double angle = 2.0 * kPi * double(k) / 8.0;
  const double r = 4.0 / std::sqrt(2.0);
  const double s = 0.5 / std::sqrt(2.0);
  return {r * std::cos(angle) + s * rng.normal(), r * std::sin(angle) + s * rng.normal()};
}

Point2D draw_checkerboard(Rng& rng) {
  const double x1 = rng.uniform() * 4.0 - 2.0;
  const double x2 = rng.uniform() - double(rng.uniform_int(2)) * 2.0 +
                    std::fmod(std::floor(x1) + 2.0, 2.0);
  return {x1 * 2.0, x2 * 2.0};
}

Point2D draw_circles(Rng& rng) {
  const double radius = rng.uniform_int(2) == 0 ? 1.0 : 0.5;
  const double angle = 2.0 * kPi * rng.uniform();
  const double x = radius * std::cos(angle) + 0.08 * rng.normal();
  const double y = radius * std::sin(angle) + 0.08 * rng.normal();
  return {3.0 * x, 3.0 * y};
}

Point2D draw_moons(Rng& rng) {
  const double t = kPi * rng.uniform();
  double x, y;
  if (rng.uniform_int(2) == 0) {
    x = std::cos(t);
    y = std::sin(t);
  } else {
    x = 1.0 - std::cos(t);
    y = 1.0 - std::sin(t) - 0.5;
  }
  x += 0.1 * rng.normal();
  y += 0.1 * rng.normal();
  return {2.0 * x - 1.0, 2.0 * y - 0.2};
}

Point2D draw_pinwheel(Rng& rng) {
  constexpr int kArms = 5;
  constexpr double kRadialStd = 0.3;
  constexpr double kTangentialStd = 0.1;
  constexpr double kRate = 0.25;
  const int arm = int(rng.uniform_int(kArms));
  const double f0 = 1.0 + kRadialStd * rng.normal();
  const double f1 = kTangentialStd * rng.normal();
  const double angle = 2.0 * kPi * double(arm) / double(kArms) + kRate * std::exp(f0);
  const double c = std::cos(angle), s = std::sin(angle);
  return {2.0 * (f0 * c + f1 * s), 2.0 * (-f0 * s + f1 * c)};
}

Point2D draw_swissroll(Rng& rng) {
  const double t = 1.5 * kPi * (1.0 + 2.0 * rng.uniform());
  const double x = t * std::cos(t) + rng.normal();
  const double y = t * std::sin(t) + rng.normal();
  return {x / 5.0, y / 5.0};
}

}  // namespace

std::vector<Point2D> sample_2d(Dataset2D dataset, int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample_2d: n >= 1 required");
  std::vector<Point2D> out;
  out.reserve(size_t(n));
  for (int i = 0; i < n; ++i) {
    switch (dataset) {
      case Dataset2D::two_spirals: out.push_back(draw_two_spirals(rng)); break;
      case Dataset2D::eight_gaussians: out.push_back(draw_eight_gaussians(rng)); break;
      case Dataset2D::checkerboard: out.push_back(draw_checkerboard(rng)); break;
      case Dataset2D::circles: out.push_back(draw_circles(rng)); break;
      case Dataset2D::moons: out.push_back(draw_moons(rng)); break;
      case Dataset2D::pinwheel: out.push_back(draw_pinwheel(rng)); break;
      case Dataset2D::swissroll: out.push_back(draw_swissroll(rng)); break;
    }
  }
  return out;
}

std::vector<BitVector> encode_points(const GrayCodec& codec, const std::vector<Point2D>& pts) {
  std::vector<BitVector> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(encode_point(codec, p[0], p[1]));
  return out;
}

std::vector<BitVector> sample_encoded(Dataset2D dataset, int n, const GrayCodec& codec,
                                      Rng& rng) {
  return encode_points(codec, sample_2d(dataset, n, rng));
}

}  // namespace aloe
